#pragma once

// Cloud file I/O (ASCII xyz and the binary PCB1 format), normalization, and
// procedurally generated multi-part toy categories with exact part labels.

#include "editvae/geometry.hpp"

#include <Eigen/Geometry>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace editvae {

struct LabeledCloud {
  PointCloud cloud;
  std::vector<int> labels;  // empty when unlabeled
  std::string category;

  bool has_labels() const { return !labels.empty(); }
  int label_count() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  }
};

namespace data {

inline constexpr char kBinaryMagic[4] = {'P', 'C', 'B', '1'};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::uint32_t content_hash(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t& at, const std::string& what) {
  if (at + sizeof(T) > in.size()) throw FormatError(what + ": truncated binary cloud");
  T v;
  std::memcpy(&v, in.data() + at, sizeof(T));
  at += sizeof(T);
  return v;
}

}  // namespace data

inline LabeledCloud parse_xyz(const std::string& text, const std::string& name) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::array<double, 3>> pts;
  std::vector<int> labels;
  std::optional<bool> labeled;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(t);
    const std::string where = name + ":" + std::to_string(line_no);
    if (tok.size() != 3 && tok.size() != 4) throw FormatError(where + ": expected 'x y z [label]'");
    if (labeled && *labeled != (tok.size() == 4)) throw FormatError(where + ": inconsistent label column");
    labeled = tok.size() == 4;
    std::array<double, 3> p{};
    try {
      for (int i = 0; i < 3; ++i) {
        std::size_t used = 0;
        p[i] = std::stod(tok[i], &used);
        if (used != tok[i].size() || !std::isfinite(p[i])) throw std::invalid_argument("bad number");
      }
      if (*labeled) {
        std::size_t used = 0;
        const int l = std::stoi(tok[3], &used);
        if (used != tok[3].size() || l < 0 || l > 255) throw std::invalid_argument("bad label");
        labels.push_back(l);
      }
    } catch (const std::logic_error&) {
      throw FormatError(where + ": malformed number");
    }
    pts.push_back(p);
  }
  if (pts.empty()) throw FormatError(name + ": no points");
  Matrix m(static_cast<Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) m.row(Index(i)) << pts[i][0], pts[i][1], pts[i][2];
  return {PointCloud(std::move(m)), std::move(labels), {}};
}

inline LabeledCloud parse_binary(const std::string& bytes, const std::string& name) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), data::kBinaryMagic, 4) != 0)
    throw FormatError(name + ": missing PCB1 magic");
  std::size_t at = 4;
  const auto n = data::get_le<std::uint32_t>(bytes, at, name);
  const auto has_labels = data::get_le<std::uint8_t>(bytes, at, name);
  if (n == 0) throw FormatError(name + ": empty cloud");
  if (has_labels > 1) throw FormatError(name + ": invalid label flag");
  Matrix m(static_cast<Index>(n), 3);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = data::get_le<float>(bytes, at, name);
  std::vector<int> labels;
  if (has_labels) {
    labels.resize(n);
    for (auto& l : labels) l = data::get_le<std::uint8_t>(bytes, at, name);
  }
  if (at != bytes.size()) throw FormatError(name + ": trailing bytes after cloud");
  if (!m.allFinite()) throw FormatError(name + ": non-finite coordinates");
  return {PointCloud(std::move(m)), std::move(labels), {}};
}

inline std::string encode_binary(const LabeledCloud& c) {
  std::string out(data::kBinaryMagic, 4);
  data::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.cloud.size()));
  data::put_le<std::uint8_t>(out, c.has_labels() ? 1 : 0);
  const Matrix& p = c.cloud.points();
  for (Index i = 0; i < p.size(); ++i) data::put_le<float>(out, static_cast<float>(p.data()[i]));
  for (int l : c.labels) data::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(l));
  return out;
}

inline void write_binary(const std::filesystem::path& path, const LabeledCloud& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::string bytes = encode_binary(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline void write_xyz(const std::filesystem::path& path, const LabeledCloud& c) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.precision(9);
  const Matrix& p = c.cloud.points();
  for (Index i = 0; i < p.rows(); ++i) {
    out << p(i, 0) << ' ' << p(i, 1) << ' ' << p(i, 2);
    if (c.has_labels()) out << ' ' << c.labels[std::size_t(i)];
    out << '\n';
  }
}

inline bool is_cloud_file(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  return ext == ".xyz" || ext == ".pcb" || ext == ".txt";
}

/// Parses one file by its extension (.pcb binary, otherwise ASCII).
inline LabeledCloud read_cloud(const std::filesystem::path& path) {
  const std::string bytes = data::read_file(path);
  return path.extension() == ".pcb" ? parse_binary(bytes, path.string()) : parse_xyz(bytes, path.string());
}

/// Uniform subsample (or resample with replacement) to exactly n points.
inline LabeledCloud resample(const LabeledCloud& c, int n, std::uint64_t seed) {
  if (n < 1) throw DomainError("resample: point count must be positive");
  const Index total = c.cloud.size();
  std::mt19937_64 rng(seed);
  std::vector<Index> pick;
  if (total >= n) {
    std::vector<Index> all(static_cast<std::size_t>(total));
    std::iota(all.begin(), all.end(), Index{0});
    for (int i = 0; i < n; ++i) {
      std::uniform_int_distribution<Index> d(i, total - 1);
      std::swap(all[i], all[d(rng)]);
    }
    pick.assign(all.begin(), all.begin() + n);
  } else {
    std::uniform_int_distribution<Index> d(0, total - 1);
    for (int i = 0; i < n; ++i) pick.push_back(d(rng));
  }
  Matrix m(n, 3);
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) {
    m.row(i) = c.cloud.points().row(pick[i]);
    if (c.has_labels()) labels.push_back(c.labels[std::size_t(pick[i])]);
  }
  return {PointCloud(std::move(m)), std::move(labels), c.category};
}

/// Loads a cloud file or every cloud file of a directory (sorted by name),
/// each resampled to n_points with a seed derived from the file's bytes.
inline std::vector<LabeledCloud> load_clouds(const std::filesystem::path& path, int n_points) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw FormatError("path does not exist: " + path.string());
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file() && is_cloud_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  std::vector<LabeledCloud> out;
  for (const auto& f : files) {
    const std::string bytes = data::read_file(f);
    LabeledCloud c = f.extension() == ".pcb" ? parse_binary(bytes, f.string()) : parse_xyz(bytes, f.string());
    c.category = f.parent_path().filename().string();
    out.push_back(resample(c, n_points, data::content_hash(bytes)));
  }
  return out;
}

struct Normalized {
  PointCloud cloud;
  Eigen::Vector3d center;
  double scale = 1.0;
};

/// Centers at the centroid and scales to unit max norm.
inline Normalized normalize(const PointCloud& cloud) {
  const Matrix& p = cloud.points();
  Eigen::Vector3d center = p.colwise().mean().transpose();
  Matrix centered = p.rowwise() - center.transpose();
  double scale = centered.rowwise().norm().maxCoeff();
  if (!(scale > 1e-12)) scale = 1.0;
  return {PointCloud(centered / scale), center, scale};
}

inline PointCloud denormalize(const PointCloud& cloud, const Eigen::Vector3d& center, double scale) {
  Matrix p = (cloud.points() * scale).rowwise() + center.transpose();
  return PointCloud(std::move(p));
}

// ---------------------------------------------------------------------------
// Toy categories.

enum class ToyCategory { chair, table, plane };

inline ToyCategory parse_toy_category(const std::string& name) {
  if (name == "toychair") return ToyCategory::chair;
  if (name == "toytable") return ToyCategory::table;
  if (name == "toyplane") return ToyCategory::plane;
  throw DomainError("unknown toy category: " + name);
}

inline std::string toy_category_name(ToyCategory c) {
  switch (c) {
    case ToyCategory::chair: return "toychair";
    case ToyCategory::table: return "toytable";
    case ToyCategory::plane: return "toyplane";
  }
  return {};
}

namespace toy {

struct Box {
  Eigen::Vector3d center;
  Eigen::Vector3d half;
  int label;
  double tilt_x = 0.0;  // rotation about x (radians)
  double tilt_z = 0.0;  // rotation about z
};

inline double area(const Box& b) {
  const auto& h = b.half;
  return 8.0 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z());
}

inline Eigen::Vector3d sample_box_surface(const Box& b, std::mt19937_64& rng) {
  const auto& h = b.half;
  const double faces[3] = {h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> pick(0.0, faces[0] + faces[1] + faces[2]);
  const double r = pick(rng);
  const int axis = r < faces[0] ? 0 : (r < faces[0] + faces[1] ? 1 : 2);
  Eigen::Vector3d p(u(rng) * h.x(), u(rng) * h.y(), u(rng) * h.z());
  p[axis] = (u(rng) < 0.0 ? -1.0 : 1.0) * h[axis];
  const Eigen::Matrix3d rot =
      (Eigen::AngleAxisd(b.tilt_z, Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(b.tilt_x, Eigen::Vector3d::UnitX()))
          .toRotationMatrix();
  return b.center + rot * p;
}

inline std::vector<Box> chair(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto in = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const double w = in(0.35, 0.6);          // seat half-width (x)
  const double d = in(0.35, 0.55);         // seat half-depth (y)
  const double t = in(0.04, 0.08);         // seat half-thickness
  const double leg_h = in(0.35, 0.6);      // leg length
  const double back_h = in(0.4, 0.8);      // back height
  const double leg_r = in(0.03, 0.07);     // leg half-thickness
  const int style = static_cast<int>(u(rng) * 3.0);  // 0 straight, 1 splayed, 2 inset
  const double seat_z = 0.0;
  std::vector<Box> boxes;
  boxes.push_back({{0, 0, seat_z}, {w, d, t}, 1});
  boxes.push_back({{0, d - t, seat_z + t + back_h / 2}, {w, t, back_h / 2}, 0, style == 1 ? -0.12 : 0.0});
  const double inset = style == 2 ? 0.25 : 0.08;
  for (int sx : {-1, 1}) {
    for (int sy : {-1, 1}) {
      Box leg{{sx * w * (1 - inset), sy * d * (1 - inset), seat_z - t - leg_h / 2}, {leg_r, leg_r, leg_h / 2}, 2};
      if (style == 1) {
        leg.tilt_x = sy * 0.15;
        leg.tilt_z = 0.0;
        leg.center.x() += sx * 0.05;
      }
      boxes.push_back(leg);
    }
  }
  return boxes;
}

inline std::vector<Box> table(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto in = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const double w = in(0.5, 0.9);
  const double d = in(0.35, 0.7);
  const double t = in(0.03, 0.07);
  const double leg_h = in(0.4, 0.8);
  const double leg_r = in(0.03, 0.08);
  const bool pedestal = u(rng) < 0.3;
  std::vector<Box> boxes;
  boxes.push_back({{0, 0, 0}, {w, d, t}, 0});
  if (pedestal) {
    boxes.push_back({{0, 0, -t - leg_h / 2}, {leg_r * 2, leg_r * 2, leg_h / 2}, 1});
    boxes.push_back({{0, 0, -t - leg_h}, {w * 0.5, d * 0.5, t * 0.5}, 1});
  } else {
    for (int sx : {-1, 1})
      for (int sy : {-1, 1})
        boxes.push_back({{sx * w * 0.85, sy * d * 0.85, -t - leg_h / 2}, {leg_r, leg_r, leg_h / 2}, 1});
  }
  return boxes;
}

inline std::vector<Box> plane(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto in = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const double len = in(0.8, 1.2);   // body half-length (y)
  const double r = in(0.08, 0.14);   // body half-width
  const double span = in(0.7, 1.2);  // wing half-span (x)
  const double chord = in(0.15, 0.3);
  const double wing_y = in(-0.1, 0.2);
  const double tail_h = in(0.15, 0.3);
  std::vector<Box> boxes;
  boxes.push_back({{0, 0, 0}, {r, len, r}, 0});
  boxes.push_back({{0, wing_y, 0}, {span, chord, 0.02}, 1});
  boxes.push_back({{0, -len + chord * 0.5, r + tail_h / 2}, {0.02, chord * 0.5, tail_h / 2}, 2});
  boxes.push_back({{0, -len + chord * 0.5, r * 0.5}, {span * 0.35, chord * 0.4, 0.02}, 2});
  return boxes;
}

}  // namespace toy

/// Deterministic labeled toy shapes, each normalized to unit max norm.
inline std::vector<LabeledCloud> synth_toyshapes(ToyCategory category, int count, int n_points,
                                                 std::uint64_t seed) {
  if (count < 1) throw DomainError("toy dataset count must be positive");
  if (n_points < 1) throw DomainError("toy point count must be positive");
  std::vector<LabeledCloud> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(i));
    std::vector<toy::Box> boxes;
    switch (category) {
      case ToyCategory::chair: boxes = toy::chair(rng); break;
      case ToyCategory::table: boxes = toy::table(rng); break;
      case ToyCategory::plane: boxes = toy::plane(rng); break;
    }
    std::vector<double> areas;
    for (const auto& b : boxes) areas.push_back(toy::area(b));
    std::discrete_distribution<std::size_t> which(areas.begin(), areas.end());
    Matrix pts(n_points, 3);
    std::vector<int> labels(static_cast<std::size_t>(n_points));
    for (int k = 0; k < n_points; ++k) {
      const std::size_t b = which(rng);
      pts.row(k) = toy::sample_box_surface(boxes[b], rng).transpose();
      labels[std::size_t(k)] = boxes[b].label;
    }
    // Guarantee every part is represented.
    int next = 0;
    for (int label = 0; label <= boxes.back().label; ++label) {
      if (std::find(labels.begin(), labels.end(), label) != labels.end()) continue;
      for (std::size_t b = 0; b < boxes.size(); ++b) {
        if (boxes[b].label != label || next >= n_points) continue;
        pts.row(next) = toy::sample_box_surface(boxes[b], rng).transpose();
        labels[std::size_t(next++)] = label;
        break;
      }
    }
    auto norm = normalize(PointCloud(std::move(pts)));
    out.push_back({std::move(norm.cloud), std::move(labels), toy_category_name(category)});
  }
  return out;
}

/// Splits a labeled cloud into one point set per label (labels in [0, L)).
inline std::vector<Matrix> split_by_label(const LabeledCloud& c) {
  std::vector<Matrix> parts;
  const int n = c.label_count();
  for (int l = 0; l < n; ++l) {
    std::vector<Index> rows;
    for (std::size_t i = 0; i < c.labels.size(); ++i)
      if (c.labels[i] == l) rows.push_back(Index(i));
    if (rows.empty()) continue;
    Matrix m(static_cast<Index>(rows.size()), 3);
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(Index(i)) = c.cloud.points().row(rows[i]);
    parts.push_back(std::move(m));
  }
  return parts;
}

}  // namespace editvae
