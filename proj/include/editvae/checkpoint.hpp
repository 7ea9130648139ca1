#pragma once

// Versioned, checksummed model checkpoints.
//
// Layout (little-endian):
//   "EVCK" | u32 version | u32 n | n bytes JSON header (config, category, log tail)
//   u32 tensor count | per tensor: u16 name length, name, u32 rows, u32 cols, f64 payload
//   u8 has_optimizer | [i64 step | u32 count | per entry: name, first moment, second moment]
//   u32 CRC-32 of every preceding byte

#include "editvae/data.hpp"
#include "editvae/training.hpp"

#include <json.hpp>
#include <zlib.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace editvae {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};
class ConfigMismatchError : public Error {
 public:
  using Error::Error;
};

struct Checkpoint {
  TrainConfig config;
  std::string category;
  Model model;
  std::optional<OptimizerState> optimizer;
  std::vector<TrainLogRecord> log_tail;
};

namespace ckpt {

using nlohmann::json;

inline json to_json(const ModelConfig& c) {
  return {{"parts", c.parts},
          {"latent_dim", c.latent_dim},
          {"part_dims", {c.part_dims.style, c.part_dims.pose, c.part_dims.primitive}},
          {"use_global_map", c.use_global_map},
          {"encoder_widths", c.encoder_widths},
          {"tree_dims", c.tree_dims},
          {"tree_branching", c.tree_branching},
          {"loop_support", c.loop_support},
          {"leaky_slope", c.leaky_slope},
          {"max_translation", c.max_translation},
          {"surface_samples", c.surface_samples}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.parts = j.at("parts").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  const auto dims = j.at("part_dims").get<std::vector<int>>();
  if (dims.size() != 3) throw FormatError("checkpoint: part_dims must have 3 entries");
  c.part_dims = {dims[0], dims[1], dims[2]};
  c.use_global_map = j.at("use_global_map").get<bool>();
  c.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
  c.tree_dims = j.at("tree_dims").get<std::vector<int>>();
  c.tree_branching = j.at("tree_branching").get<std::vector<int>>();
  c.loop_support = j.at("loop_support").get<int>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.max_translation = j.at("max_translation").get<double>();
  c.surface_samples = j.at("surface_samples").get<int>();
  return c;
}

inline json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"points_per_cloud", c.points_per_cloud},
          {"seed", c.seed},
          {"weights",
           {{"w_point", c.weights.w_point},
            {"w_prim", c.weights.w_prim},
            {"omega_o", c.weights.omega_o},
            {"beta", c.weights.beta}}},
          {"grad_clip_norm", c.grad_clip_norm},
          {"checkpoint_every", c.checkpoint_every},
          {"model", to_json(c.model)}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.points_per_cloud = j.at("points_per_cloud").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const auto& w = j.at("weights");
  c.weights = {w.at("w_point").get<double>(), w.at("w_prim").get<double>(), w.at("omega_o").get<double>(),
               w.at("beta").get<double>()};
  c.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  c.model = model_config_from_json(j.at("model"));
  return c;
}

inline json to_json(const TrainLogRecord& r) {
  return {{"epoch", r.epoch},         {"step", r.step},       {"l_point", r.loss.l_point},
          {"l_prim", r.loss.l_prim},  {"l_overlap", r.loss.l_overlap},
          {"l_kl", r.loss.l_kl},      {"total", r.loss.total}};
}

inline TrainLogRecord log_record_from_json(const json& j) {
  TrainLogRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.step = j.at("step").get<std::int64_t>();
  r.loss = {j.at("l_point").get<double>(), j.at("l_prim").get<double>(), j.at("l_overlap").get<double>(),
            j.at("l_kl").get<double>(), j.at("total").get<double>()};
  return r;
}

inline void put_string(std::string& out, const std::string& s) {
  if (s.size() > 0xffff) throw FormatError("checkpoint: tensor name too long");
  data::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  out += s;
}

inline std::string get_string(const std::string& in, std::size_t& at) {
  const auto n = data::get_le<std::uint16_t>(in, at, "checkpoint");
  if (at + n > in.size()) throw FormatError("checkpoint: truncated name");
  std::string s = in.substr(at, n);
  at += n;
  return s;
}

inline void put_matrix(std::string& out, const Matrix& m) {
  data::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  data::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  for (Index i = 0; i < m.size(); ++i) data::put_le<double>(out, m.data()[i]);
}

inline Matrix get_matrix(const std::string& in, std::size_t& at) {
  const auto rows = data::get_le<std::uint32_t>(in, at, "checkpoint");
  const auto cols = data::get_le<std::uint32_t>(in, at, "checkpoint");
  if (std::uint64_t(rows) * cols * 8 > in.size() - at) throw FormatError("checkpoint: truncated tensor");
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = data::get_le<double>(in, at, "checkpoint");
  return m;
}

}  // namespace ckpt

inline std::string encode_checkpoint(Model& model, const OptimizerState* opt, const TrainConfig& cfg,
                                     const std::string& category, std::span<const TrainLogRecord> log_tail = {}) {
  using ckpt::json;
  json header = {{"config", ckpt::to_json(cfg)}, {"category", category}, {"log_tail", json::array()}};
  for (const auto& r : log_tail) header["log_tail"].push_back(ckpt::to_json(r));
  const std::string header_text = header.dump();

  std::string out = "EVCK";
  data::put_le<std::uint32_t>(out, kCheckpointVersion);
  data::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;

  std::vector<std::pair<std::string, const Matrix*>> tensors;
  model.visit_parameters([&](const std::string& name, ad::Parameter& p) { tensors.emplace_back(name, &p.value()); });
  model.visit_buffers([&](const std::string& name, Matrix& m) { tensors.emplace_back(name, &m); });
  data::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    ckpt::put_string(out, name);
    ckpt::put_matrix(out, *m);
  }

  data::put_le<std::uint8_t>(out, opt ? 1 : 0);
  if (opt) {
    data::put_le<std::int64_t>(out, opt->step);
    data::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(opt->first_moment.size()));
    for (const auto& [name, m] : opt->first_moment) {
      ckpt::put_string(out, name);
      ckpt::put_matrix(out, m);
      ckpt::put_matrix(out, opt->second_moment.at(name));
    }
  }
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size())));
  data::put_le<std::uint32_t>(out, crc);
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, Model& model, const OptimizerState* opt,
                            const TrainConfig& cfg, const std::string& category = {},
                            std::span<const TrainLogRecord> log_tail = {}) {
  const std::string bytes = encode_checkpoint(model, opt, cfg, category, log_tail);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

/// Parses checkpoint bytes; when `expected` is given, its model config must match.
inline Checkpoint decode_checkpoint(const std::string& bytes, const ModelConfig* expected = nullptr) {
  if (bytes.size() < 16) throw ChecksumError("checkpoint: file too short");
  std::size_t tail = bytes.size() - 4;
  const auto stored = data::get_le<std::uint32_t>(bytes, tail, "checkpoint");
  const auto actual = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size() - 4)));
  if (stored != actual) throw ChecksumError("checkpoint: checksum mismatch (corrupt or truncated file)");
  const std::string body = bytes.substr(0, bytes.size() - 4);
  if (body.compare(0, 4, "EVCK") != 0) throw FormatError("checkpoint: bad magic");
  std::size_t at = 4;
  const auto version = data::get_le<std::uint32_t>(body, at, "checkpoint");
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  const auto header_len = data::get_le<std::uint32_t>(body, at, "checkpoint");
  if (at + header_len > body.size()) throw FormatError("checkpoint: truncated header");
  const auto header = ckpt::json::parse(body.substr(at, header_len));
  at += header_len;

  Checkpoint c;
  c.config = ckpt::train_config_from_json(header.at("config"));
  c.category = header.value("category", std::string{});
  for (const auto& r : header.at("log_tail")) c.log_tail.push_back(ckpt::log_record_from_json(r));
  if (expected && !(*expected == c.config.model))
    throw ConfigMismatchError("checkpoint model config does not match the requested configuration (parts " +
                              std::to_string(c.config.model.parts) + " vs " + std::to_string(expected->parts) +
                              ", latent " + std::to_string(c.config.model.latent_dim) + " vs " +
                              std::to_string(expected->latent_dim) + ")");
  c.config.model.validate();
  c.model = Model(c.config.model, 0);

  std::map<std::string, Matrix*> slots;
  c.model.visit_parameters([&](const std::string& name, ad::Parameter& p) { slots[name] = &p.value(); });
  c.model.visit_buffers([&](const std::string& name, Matrix& m) { slots[name] = &m; });
  std::set<std::string> filled;
  const auto count = data::get_le<std::uint32_t>(body, at, "checkpoint");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = ckpt::get_string(body, at);
    Matrix m = ckpt::get_matrix(body, at);
    auto it = slots.find(name);
    if (it == slots.end()) throw FormatError("checkpoint: unknown tensor " + name);
    if (!filled.insert(name).second) throw FormatError("checkpoint: duplicate tensor " + name);
    if (it->second->rows() != m.rows() || it->second->cols() != m.cols())
      throw FormatError("checkpoint: shape mismatch for " + name);
    *it->second = std::move(m);
  }
  if (filled.size() != slots.size()) throw FormatError("checkpoint: missing tensors");

  if (data::get_le<std::uint8_t>(body, at, "checkpoint")) {
    OptimizerState opt;
    opt.step = data::get_le<std::int64_t>(body, at, "checkpoint");
    const auto n = data::get_le<std::uint32_t>(body, at, "checkpoint");
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::string name = ckpt::get_string(body, at);
      opt.first_moment[name] = ckpt::get_matrix(body, at);
      opt.second_moment[name] = ckpt::get_matrix(body, at);
    }
    c.optimizer = std::move(opt);
  }
  if (at != body.size()) throw FormatError("checkpoint: trailing bytes");
  return c;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr) {
  return decode_checkpoint(data::read_file(path), expected);
}

}  // namespace editvae
