#pragma once

// Command-line front end: train, generate, eval, edit and serve.

#include "editvae/checkpoint.hpp"
#include "editvae/data.hpp"
#include "editvae/editing.hpp"
#include "editvae/metrics.hpp"
#include "editvae/service.hpp"
#include "editvae/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace editvae {

namespace cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline LabeledCloud labeled(const DecodedShape& shape, const std::string& category) {
  return {PointCloud(shape.points()), shape.part_index(), category};
}

// A fixed palette so part m has the same color in every file.
inline void write_colored_ply(const fs::path& path, const DecodedShape& shape) {
  static constexpr int kPalette[][3] = {{228, 26, 28},  {55, 126, 184}, {77, 175, 74},  {152, 78, 163},
                                        {255, 127, 0},  {166, 86, 40},  {247, 129, 191}, {153, 153, 153}};
  const Matrix pts = shape.points();
  const auto idx = shape.part_index();
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << pts.rows()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  char line[128];
  for (Index i = 0; i < pts.rows(); ++i) {
    const auto& c = kPalette[std::size_t(idx[std::size_t(i)]) % 8];
    std::snprintf(line, sizeof(line), "%.6g %.6g %.6g %d %d %d\n", pts(i, 0), pts(i, 1), pts(i, 2), c[0], c[1],
                  c[2]);
    out << line;
  }
}

inline std::vector<LabeledCloud> load_normalized(const fs::path& path, int points) {
  auto clouds = load_clouds(path, points);
  for (auto& c : clouds) c.cloud = normalize(c.cloud).cloud;
  return clouds;
}

inline std::vector<Matrix> point_sets(const std::vector<LabeledCloud>& clouds) {
  std::vector<Matrix> out;
  for (const auto& c : clouds) out.push_back(c.cloud.points());
  return out;
}

// A shape source is either a cloud file (encoded deterministically) or
// "prior:SEED" (a prior sample).
inline LatentBundle resolve_source(const Model& model, const std::string& source, int points) {
  if (source.rfind("prior:", 0) == 0) {
    std::uint64_t seed = 0;
    try {
      seed = std::stoull(source.substr(6));
    } catch (const std::exception&) {
      throw UsageError("bad prior seed in '" + source + "'");
    }
    return split(model, sample_prior(seed, 1, model.config().latent_dim).front());
  }
  auto clouds = load_normalized(source, points);
  if (clouds.size() != 1) throw UsageError("expected a single cloud file: " + source);
  return encode_shape(model, clouds.front().cloud, true, 0);
}

inline void write_shape(const fs::path& path, const DecodedShape& shape, const std::string& category) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (path.extension() == ".pcb")
    write_binary(path, labeled(shape, category));
  else
    write_xyz(path, labeled(shape, category));
}

inline std::string numbered(const std::string& stem, int i, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_%04d", i);
  return stem + buf + ext;
}

struct TrainArgs {
  std::string data, toy, out, log;
  int parts = 3, epochs = 1000, latent_dim = 0, points = 2048, count = 200, batch_size = 30, checkpoint_every = 0;
  double beta = 1e-3, omega_o = 1e-6, lr = 1e-4;
  std::uint64_t seed = 0;
  bool no_global_map = false;
};

inline int run_train(const TrainArgs& a, std::ostream& out) {
  if (a.data.empty() == a.toy.empty()) throw UsageError("train needs exactly one of --data or --toy");
  TrainConfig cfg;
  cfg.learning_rate = a.lr;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.points_per_cloud = a.points;
  cfg.seed = a.seed;
  cfg.weights.beta = a.beta;
  cfg.weights.omega_o = a.omega_o;
  cfg.checkpoint_every = a.checkpoint_every;
  cfg.model.parts = a.parts;
  cfg.model.use_global_map = !a.no_global_map;
  cfg.model.latent_dim = a.latent_dim > 0 ? a.latent_dim
                                          : (a.no_global_map ? a.parts * cfg.model.part_dims.total() : 256);

  std::vector<LabeledCloud> clouds;
  std::string category;
  if (!a.toy.empty()) {
    category = a.toy;
    clouds = synth_toyshapes(parse_toy_category(a.toy), a.count, a.points, a.seed);
  } else {
    category = fs::path(a.data).filename().string();
    clouds = load_normalized(a.data, a.points);
  }
  std::vector<PointCloud> dataset;
  for (auto& c : clouds) dataset.push_back(std::move(c.cloud));

  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log);
    if (!log) throw FormatError("cannot write log " + a.log);
  }
  TrainCallbacks cb;
  cb.on_epoch = [&](const TrainLogRecord& r) {
    const auto j = ckpt::to_json(r);
    out << j.dump() << '\n';
    if (log) log << j.dump() << '\n' << std::flush;
  };
  cb.on_checkpoint = [&](int epoch, const Model& m, const OptimizerState& opt) {
    Model copy = m;
    save_checkpoint(numbered(fs::path(a.out).replace_extension().string(), epoch, ".ckpt"), copy, &opt, cfg,
                    category);
  };
  TrainResult result = train(dataset, cfg, cb);
  const std::size_t tail = std::min<std::size_t>(result.log.size(), 100);
  save_checkpoint(a.out, result.model, &result.optimizer, cfg, category,
                  std::span(result.log).subspan(result.log.size() - tail));
  out << "wrote " << a.out << '\n';
  return kExitOk;
}

struct GenerateArgs {
  std::string ckpt, out;
  int n = 1;
  std::uint64_t seed = 0;
  bool colored = false;
};

inline int run_generate(const GenerateArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  fs::create_directories(a.out);
  const auto shapes = generate(ck.model, a.seed, a.n);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const fs::path base = fs::path(a.out) / numbered("shape", int(i), "");
    write_xyz(base.string() + ".xyz", labeled(shapes[i], ck.category));
    if (a.colored) write_colored_ply(base.string() + ".ply", shapes[i]);
  }
  out << "generated " << shapes.size() << " shapes in " << a.out << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt, gen, ref, json_out;
  std::vector<std::string> metrics{"jsd", "mmd-cd", "mmd-emd", "cov-cd", "cov-emd"};
  bool mcd = false;
  int n = 0, points = 512;
  std::uint64_t seed = 0;
};

inline int run_eval(const EvalArgs& a, std::ostream& out) {
  if (a.ckpt.empty() == a.gen.empty()) throw UsageError("eval needs exactly one of --ckpt or --gen");
  if (a.mcd && a.ckpt.empty()) throw UsageError("--mcd needs --ckpt");
  const auto ref_clouds = load_normalized(a.ref, a.points);
  if (ref_clouds.empty()) throw FormatError("no reference clouds in " + a.ref);
  const auto ref = point_sets(ref_clouds);

  std::optional<Checkpoint> ck;
  std::vector<Matrix> gen;
  if (!a.ckpt.empty()) {
    ck = load_checkpoint(a.ckpt);
    const int n = a.n > 0 ? a.n : int(ref.size());
    const auto shapes = generate(ck->model, a.seed, n);
    for (std::size_t i = 0; i < shapes.size(); ++i)
      gen.push_back(resample(labeled(shapes[i], ck->category), a.points, a.seed + i).cloud.points());
  } else {
    gen = point_sets(load_normalized(a.gen, a.points));
    if (gen.empty()) throw FormatError("no generated clouds in " + a.gen);
  }

  auto wants = [&](const char* m) { return std::find(a.metrics.begin(), a.metrics.end(), m) != a.metrics.end(); };
  MetricSelection sel{wants("jsd"), wants("mmd-cd"), wants("mmd-emd"), wants("cov-cd"), wants("cov-emd")};
  const MetricReport r = evaluate(gen, ref, sel);
  nlohmann::json report = {{"n_gen", gen.size()}, {"n_ref", ref.size()}, {"points", a.points}};
  if (sel.jsd) report["jsd"] = r.jsd;
  if (sel.mmd_cd) report["mmd-cd"] = r.mmd_cd;
  if (sel.mmd_emd) report["mmd-emd"] = r.mmd_emd;
  if (sel.cov_cd) report["cov-cd"] = r.cov_cd;
  if (sel.cov_emd) report["cov-emd"] = r.cov_emd;
  if (sel.mmd_emd || sel.cov_emd) report["emd_approximate"] = a.points > kExactEmdLimit;
  if (a.mcd) {
    double total = 0.0;
    int used = 0;
    for (const auto& c : ref_clouds) {
      if (!c.has_labels()) continue;
      const auto labels = segment_parts(ck->model, c.cloud);
      total += mcd(group_rows(c.cloud.points(), labels, ck->config.model.parts), split_by_label(c));
      ++used;
    }
    if (used == 0) throw FormatError("--mcd needs labeled reference clouds");
    report["mcd"] = total / used;
  }
  report["runtime_seconds"] = r.runtime_seconds;
  out << report.dump(2) << '\n';
  if (!a.json_out.empty()) {
    std::ofstream f(a.json_out);
    if (!f) throw FormatError("cannot write " + a.json_out);
    f << report.dump(2) << '\n';
  }
  return kExitOk;
}

struct EditArgs {
  std::string ckpt, target, reference, input, out;
  std::vector<int> parts;
  std::vector<double> weights{0.2, 0.5, 0.8};
  std::uint64_t seed = 0;
  int points = 2048;
  bool transfer_primitive = false;
};

inline int run_mix(const EditArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const auto target = resolve_source(ck.model, a.target, a.points);
  const auto reference = resolve_source(ck.model, a.reference, a.points);
  const auto shape = mix_parts(ck.model, target, reference, {a.parts, EditMode::mix}, {a.transfer_primitive});
  write_shape(a.out, shape, ck.category);
  out << "wrote " << a.out << '\n';
  return kExitOk;
}

inline int run_resample(const EditArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const auto bundle = resolve_source(ck.model, a.input, a.points);
  write_shape(a.out, resample_parts(ck.model, bundle, {a.parts, EditMode::resample}, a.seed), ck.category);
  out << "wrote " << a.out << '\n';
  return kExitOk;
}

inline int run_interp(const EditArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const auto za = resolve_source(ck.model, a.target, a.points).z;
  const auto zb = resolve_source(ck.model, a.reference, a.points).z;
  const auto shapes = interpolate(ck.model, za, zb, a.weights);
  fs::create_directories(a.out);
  for (std::size_t i = 0; i < shapes.size(); ++i)
    write_xyz(fs::path(a.out) / numbered("interp", int(i), ".xyz"), labeled(shapes[i], ck.category));
  out << "wrote " << shapes.size() << " shapes in " << a.out << '\n';
  return kExitOk;
}

struct ServeArgs {
  std::string ckpt, host = "127.0.0.1";
  int port = 8080;
};

inline int run_serve(const ServeArgs& a, std::ostream& out) {
  ApiService service(load_checkpoint(a.ckpt));
  httplib::Server server;
  service.bind(server);
  out << "serving " << a.ckpt << " on http://" << a.host << ':' << a.port << std::endl;
  if (!server.listen(a.host, a.port)) throw Error("cannot listen on " + a.host + ":" + std::to_string(a.port));
  return kExitOk;
}

}  // namespace cli

/// Runs the CLI; returns 0 on success, 2 on usage errors, 1 on runtime errors.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli;
  CLI::App app{"Parts-aware point cloud VAE toolkit"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  auto* data_opt = train_cmd->add_option("--data", ta.data, "directory of .xyz/.pcb clouds");
  train_cmd->add_option("--toy", ta.toy, "built-in toy category")
      ->check(CLI::IsMember({"toychair", "toytable", "toyplane"}))
      ->excludes(data_opt);
  train_cmd->add_option("--parts", ta.parts, "number of parts M")->check(CLI::PositiveNumber);
  train_cmd->add_option("--epochs", ta.epochs)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--beta", ta.beta, "KL weight")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--omega-o", ta.omega_o, "overlap weight")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--seed", ta.seed);
  train_cmd->add_option("--out", ta.out, "checkpoint path")->required();
  train_cmd->add_flag("--no-global-map", ta.no_global_map, "slice z directly instead of using the learned map");
  train_cmd->add_option("--latent-dim", ta.latent_dim, "global latent size (default 256, or M*48 without the map)");
  train_cmd->add_option("--points", ta.points, "points per training cloud")->check(CLI::PositiveNumber);
  train_cmd->add_option("--count", ta.count, "toy dataset size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", ta.lr)->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch-size", ta.batch_size)->check(CLI::PositiveNumber);
  train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "also save every N epochs");
  train_cmd->add_option("--log", ta.log, "JSON-lines epoch log");

  GenerateArgs ga;
  auto* gen_cmd = app.add_subcommand("generate", "sample shapes from the prior");
  gen_cmd->add_option("--ckpt", ga.ckpt)->required();
  gen_cmd->add_option("--n", ga.n)->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--seed", ga.seed);
  gen_cmd->add_option("--out", ga.out, "output directory")->required();
  gen_cmd->add_flag("--colored", ga.colored, "also write part-colored .ply files");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "score generated shapes against a reference set");
  auto* eval_ckpt = eval_cmd->add_option("--ckpt", ea.ckpt);
  eval_cmd->add_option("--gen", ea.gen, "directory of already generated clouds")->excludes(eval_ckpt);
  eval_cmd->add_option("--ref", ea.ref)->required();
  eval_cmd->add_option("--metrics", ea.metrics)
      ->delimiter(',')
      ->check(CLI::IsMember({"jsd", "mmd-cd", "mmd-emd", "cov-cd", "cov-emd"}));
  eval_cmd->add_flag("--mcd", ea.mcd, "part MCD against reference labels");
  eval_cmd->add_option("--n", ea.n, "generated shapes (default: reference count)");
  eval_cmd->add_option("--points", ea.points, "points per cloud")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", ea.seed);
  eval_cmd->add_option("--json", ea.json_out, "also write the report here");

  EditArgs xa;
  auto* edit_cmd = app.add_subcommand("edit", "part-level editing; sources are cloud files or prior:SEED");
  edit_cmd->require_subcommand(1);
  auto common = [&](CLI::App* c) {
    c->add_option("--ckpt", xa.ckpt)->required();
    c->add_option("--points", xa.points, "points used when encoding a cloud file")->check(CLI::PositiveNumber);
  };
  auto* mix_cmd = edit_cmd->add_subcommand("mix", "transfer part style latents from a reference");
  common(mix_cmd);
  mix_cmd->add_option("--target", xa.target)->required();
  mix_cmd->add_option("--reference", xa.reference)->required();
  mix_cmd->add_option("--parts", xa.parts)->delimiter(',');
  mix_cmd->add_flag("--transfer-primitive", xa.transfer_primitive);
  mix_cmd->add_option("--out", xa.out)->required();
  auto* res_cmd = edit_cmd->add_subcommand("resample", "redraw part style latents, keeping poses");
  common(res_cmd);
  res_cmd->add_option("--input", xa.input)->required();
  res_cmd->add_option("--parts", xa.parts)->delimiter(',');
  res_cmd->add_option("--seed", xa.seed);
  res_cmd->add_option("--out", xa.out)->required();
  auto* interp_cmd = edit_cmd->add_subcommand("interp", "decode convex combinations of two latents");
  common(interp_cmd);
  interp_cmd->add_option("--a", xa.target)->required();
  interp_cmd->add_option("--b", xa.reference)->required();
  interp_cmd->add_option("--weights", xa.weights)->delimiter(',');
  interp_cmd->add_option("--out", xa.out, "output directory")->required();

  ServeArgs sa;
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP editing API");
  serve_cmd->add_option("--ckpt", sa.ckpt)->required();
  serve_cmd->add_option("--port", sa.port)->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--host", sa.host);

  auto usage = [&](const std::string& msg) {
    const CLI::App* sub = &app;
    while (!sub->get_subcommands().empty()) sub = sub->get_subcommands().front();
    err << "error: " << msg << "\n\n" << sub->help();
    return kExitUsage;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return usage(e.what());
  }

  try {
    if (*train_cmd) return run_train(ta, out);
    if (*gen_cmd) return run_generate(ga, out);
    if (*eval_cmd) return run_eval(ea, out);
    if (*mix_cmd) return run_mix(xa, out);
    if (*res_cmd) return run_resample(xa, out);
    if (*interp_cmd) return run_interp(xa, out);
    if (*serve_cmd) return run_serve(sa, out);
  } catch (const UsageError& e) {
    return usage(e.what());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return usage("no subcommand");
}

}  // namespace editvae
