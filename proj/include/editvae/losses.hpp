#pragma once

// Training losses: per-part Chamfer reconstruction in canonical frames, the
// Chamfer-style primitive distance, the overlap regularizer, and the KL term.

#include "editvae/autodiff.hpp"
#include "editvae/geometry.hpp"
#include "editvae/latent.hpp"
#include "editvae/networks.hpp"

#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace editvae {

struct LossWeights {
  double w_point = 1.0;
  double w_prim = 1.0;
  double omega_o = 1e-6;
  double beta = 1e-3;

  void validate() const {
    for (double w : {w_point, w_prim, omega_o, beta})
      if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("loss weights must be finite and non-negative");
  }
  bool operator==(const LossWeights&) const = default;
};

struct LossBreakdown {
  double l_point = 0.0;
  double l_prim = 0.0;
  double l_overlap = 0.0;
  double l_kl = 0.0;
  double total = 0.0;
};

namespace losses {

/// For each row of a, the index of its nearest row in b (lowest index on ties).
inline std::vector<Index> nearest_rows(const Matrix& a, const Matrix& b) {
  require_dims(b.rows() > 0, "nearest_rows: empty target set");
  std::vector<Index> out(static_cast<std::size_t>(a.rows()));
  for (Index i = 0; i < a.rows(); ++i) {
    const double x = a(i, 0), y = a(i, 1), z = a(i, 2);
    double best = std::numeric_limits<double>::infinity();
    Index arg = 0;
    for (Index j = 0; j < b.rows(); ++j) {
      const double dx = x - b(j, 0), dy = y - b(j, 1), dz = z - b(j, 2);
      const double d = dx * dx + dy * dy + dz * dz;
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    out[i] = arg;
  }
  return out;
}

/// mean_{a} min_{b} |a - b|^2
inline ad::Var nearest_sq_mean(const ad::Var& a, const ad::Var& b) {
  auto idx = nearest_rows(a.value(), b.value());
  return ad::mean(ad::row_sum(ad::square(a - ad::gather_rows(b, std::move(idx)))));
}

}  // namespace losses

inline ad::Var chamfer(const ad::Var& x, const ad::Var& y) {
  if (x.rows() == 0 || y.rows() == 0) throw DomainError("chamfer: empty point cloud");
  return ad::scale(losses::nearest_sq_mean(x, y) + losses::nearest_sq_mean(y, x), 0.5);
}

inline double chamfer(const Matrix& x, const Matrix& y) {
  ad::NoGradGuard guard;
  return chamfer(ad::Var::constant(x), ad::Var::constant(y)).item();
}

inline double chamfer(const PointCloud& x, const PointCloud& y) { return chamfer(x.points(), y.points()); }

/// Part index of the nearest sampled primitive surface for every row of x.
inline std::vector<int> assign_points_to_parts(const Matrix& x, std::span<const Matrix> surfaces) {
  require_dims(!surfaces.empty(), "assign_points_to_parts: no parts");
  std::vector<int> out(static_cast<std::size_t>(x.rows()), 0);
  std::vector<double> best(static_cast<std::size_t>(x.rows()), std::numeric_limits<double>::infinity());
  for (std::size_t m = 0; m < surfaces.size(); ++m) {
    const Matrix& s = surfaces[m];
    require_dims(s.rows() > 0 && s.cols() == 3, "assign_points_to_parts: empty surface sample set");
    for (Index i = 0; i < x.rows(); ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < s.rows(); ++j) d = std::min(d, (x.row(i) - s.row(j)).squaredNorm());
      if (d < best[i]) {
        best[i] = d;
        out[i] = static_cast<int>(m);
      }
    }
  }
  return out;
}

struct PosedPrimitive {
  SuperquadricParams primitive;
  Pose pose;
};

inline Matrix posed_surface_samples(const PosedPrimitive& part,
                                    std::span<const std::array<double, 2>> angles) {
  Matrix canonical = surface_points(part.primitive, angles);
  const auto p = part.pose.packed();
  Matrix out(canonical.rows(), 3);
  for (Index i = 0; i < canonical.rows(); ++i) sq::transform_point(p.data(), &canonical(i, 0), &out(i, 0));
  return out;
}

inline std::vector<int> assign_points_to_parts(const PointCloud& x, std::span<const PosedPrimitive> parts,
                                               int samples_per_part = 64) {
  const auto angles = sample_angles(samples_per_part, SamplingScheme::grid, 0);
  std::vector<Matrix> surfaces;
  for (const auto& p : parts) surfaces.push_back(posed_surface_samples(p, angles));
  return assign_points_to_parts(x.points(), surfaces);
}

inline std::vector<Index> rows_with_label(const std::vector<int>& labels, int label) {
  std::vector<Index> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) out.push_back(static_cast<Index>(i));
  return out;
}

inline Matrix select_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(Index(i)) = m.row(rows[i]);
  return out;
}

/// One sample's decoded parts on the tape.
struct PartTape {
  ad::Var canonical_points;  // P x 3
  ad::Var pose;              // 1 x 7
  ad::Var primitive;         // 1 x 7
  ad::Var surface;           // S x 3, world frame
};

/// L_Y = sum_m chamfer(T_m^-1(X_m), Y_m); parts with empty X_m contribute 0.
inline ad::Var parts_point_loss(std::span<const PartTape> parts, const Matrix& x,
                                const std::vector<int>& assignment) {
  ad::Var total = ad::Var::scalar(0.0);
  for (std::size_t m = 0; m < parts.size(); ++m) {
    auto rows = rows_with_label(assignment, int(m));
    if (rows.empty()) continue;
    ad::Var local = inverse_transform_rows(parts[m].pose, ad::Var::constant(select_rows(x, rows)));
    total = total + chamfer(local, parts[m].canonical_points);
  }
  return total;
}

/// L_D = (1/M) sum_m mean_{s in S_m} min_{x in X_m} |s-x|^2 + mean_x min_{s in S} |x-s|^2.
inline ad::Var primitive_distance_loss(std::span<const PartTape> parts, const Matrix& x,
                                       const std::vector<int>& assignment) {
  require_dims(!parts.empty() && x.rows() > 0, "primitive_distance_loss: empty input");
  ad::Var to_points = ad::Var::scalar(0.0);
  std::vector<ad::Var> all;
  for (std::size_t m = 0; m < parts.size(); ++m) {
    auto rows = rows_with_label(assignment, int(m));
    ad::Var target = ad::Var::constant(rows.empty() ? x : select_rows(x, rows));
    to_points = to_points + losses::nearest_sq_mean(parts[m].surface, target);
    all.push_back(parts[m].surface);
  }
  to_points = ad::scale(to_points, 1.0 / double(parts.size()));
  ad::Var to_primitives = losses::nearest_sq_mean(ad::Var::constant(x), ad::concat_rows(all));
  return to_points + to_primitives;
}

/// L_o = (1/M) sum_m mean_{s in S \ S_m} max(1 - H_m(s), 0).
inline ad::Var overlap_loss(std::span<const PartTape> parts) {
  const std::size_t m_count = parts.size();
  require_dims(m_count > 0, "overlap_loss: no parts");
  if (m_count == 1) return ad::Var::scalar(0.0);
  ad::Var total = ad::Var::scalar(0.0);
  for (std::size_t m = 0; m < m_count; ++m) {
    std::vector<ad::Var> others;
    for (std::size_t j = 0; j < m_count; ++j)
      if (j != m) others.push_back(parts[j].surface);
    ad::Var h = smoothed_indicator_rows(parts[m].primitive, parts[m].pose, ad::concat_rows(others));
    total = total + ad::mean(ad::relu(ad::add_scalar(ad::scale(h, -1.0), 1.0)));
  }
  return ad::scale(total, 1.0 / double(m_count));
}

// ---------------------------------------------------------------------------
// Value-level forms on decoded shapes.

namespace losses {

inline std::vector<PartTape> constant_parts(const DecodedShape& shape) {
  std::vector<PartTape> out;
  for (const auto& p : shape.parts) {
    const auto pose = p.pose.packed();
    const auto prim = p.primitive.packed();
    out.push_back({ad::Var::constant(p.canonical_points),
                   ad::Var::constant(Eigen::Map<const Matrix>(pose.data(), 1, 7)),
                   ad::Var::constant(Eigen::Map<const Matrix>(prim.data(), 1, 7)),
                   ad::Var::constant(p.surface_samples)});
  }
  return out;
}

inline std::vector<Matrix> surfaces_of(const DecodedShape& shape) {
  std::vector<Matrix> out;
  for (const auto& p : shape.parts) out.push_back(p.surface_samples);
  return out;
}

}  // namespace losses

inline double parts_point_loss(const DecodedShape& shape, const PointCloud& x) {
  ad::NoGradGuard guard;
  auto surfaces = losses::surfaces_of(shape);
  auto assignment = assign_points_to_parts(x.points(), surfaces);
  auto parts = losses::constant_parts(shape);
  return parts_point_loss(parts, x.points(), assignment).item();
}

inline double primitive_distance_loss(const DecodedShape& shape, const PointCloud& x) {
  ad::NoGradGuard guard;
  auto surfaces = losses::surfaces_of(shape);
  auto assignment = assign_points_to_parts(x.points(), surfaces);
  auto parts = losses::constant_parts(shape);
  return primitive_distance_loss(parts, x.points(), assignment).item();
}

inline double overlap_loss(std::span<const PosedPrimitive> parts, std::span<const Matrix> samples) {
  ad::NoGradGuard guard;
  require_dims(parts.size() == samples.size(), "overlap_loss: one sample set per part required");
  std::vector<PartTape> tapes;
  for (std::size_t m = 0; m < parts.size(); ++m) {
    const auto pose = parts[m].pose.packed();
    const auto prim = parts[m].primitive.packed();
    tapes.push_back({ad::Var(), ad::Var::constant(Eigen::Map<const Matrix>(pose.data(), 1, 7)),
                     ad::Var::constant(Eigen::Map<const Matrix>(prim.data(), 1, 7)),
                     ad::Var::constant(samples[m])});
  }
  return overlap_loss(tapes).item();
}

// ---------------------------------------------------------------------------
// Full objective.

/// Random draws consumed by one loss evaluation, derived from a seed.
struct LossSampling {
  Matrix noise;  // B x D_z
  std::vector<std::vector<std::vector<std::array<double, 2>>>> angles;  // [b][m] -> S pairs
};

inline LossSampling draw_loss_sampling(std::uint64_t seed, Index batch, const ModelConfig& cfg) {
  std::mt19937_64 rng(seed);
  LossSampling s;
  s.noise = standard_normal(rng, batch, cfg.latent_dim);
  s.angles.resize(static_cast<std::size_t>(batch));
  for (auto& per_sample : s.angles)
    for (int m = 0; m < cfg.parts; ++m)
      per_sample.push_back(sample_angles(cfg.surface_samples, SamplingScheme::random, rng()));
  return s;
}

struct LossVars {
  ad::Var point;
  ad::Var prim;
  ad::Var overlap;
  ad::Var kl;
  ad::Var total;

  LossBreakdown values() const {
    return {point.item(), prim.item(), overlap.item(), kl.item(), total.item()};
  }
};

inline ad::Var weighted_total(const LossWeights& w, const ad::Var& point, const ad::Var& prim,
                              const ad::Var& overlap, const ad::Var& kl) {
  return ad::scale(point, w.w_point) + ad::scale(prim, w.w_prim) + ad::scale(overlap, w.omega_o) +
         ad::scale(kl, w.beta);
}

/// Batch-mean loss terms given posterior parameters (B x D_z each) for the clouds.
inline LossVars batch_loss(const Model& model, const ad::Var& mu, const ad::Var& logvar,
                           std::span<const PointCloud> clouds, const LossWeights& weights,
                           std::uint64_t seed) {
  weights.validate();
  const auto& cfg = model.config();
  const Index batch = static_cast<Index>(clouds.size());
  require_dims(batch > 0 && mu.rows() == batch && logvar.rows() == batch, "batch_loss: batch size mismatch");
  const LossSampling sampling = draw_loss_sampling(seed, batch, cfg);
  ad::Var z = reparameterize(mu, logvar, sampling.noise);
  const std::vector<PartVars> decoded = model.decode(z);
  const Index per_part = decoded.front().points.rows() / batch;

  ad::Var point = ad::Var::scalar(0.0);
  ad::Var prim = ad::Var::scalar(0.0);
  ad::Var overlap = ad::Var::scalar(0.0);
  for (Index b = 0; b < batch; ++b) {
    std::vector<PartTape> parts;
    std::vector<Matrix> surfaces;
    for (int m = 0; m < cfg.parts; ++m) {
      const PartVars& pv = decoded[m];
      PartTape t;
      t.canonical_points = ad::slice_rows(pv.points, b * per_part, per_part);
      t.pose = ad::slice_rows(pv.pose, b, 1);
      t.primitive = ad::slice_rows(pv.primitive, b, 1);
      t.surface = posed_surface(t.primitive, t.pose, sampling.angles[b][m]);
      surfaces.push_back(t.surface.value());
      parts.push_back(std::move(t));
    }
    const Matrix& x = clouds[b].points();
    const auto assignment = assign_points_to_parts(x, surfaces);
    point = point + parts_point_loss(parts, x, assignment);
    prim = prim + primitive_distance_loss(parts, x, assignment);
    overlap = overlap + overlap_loss(parts);
  }
  const double inv = 1.0 / double(batch);
  LossVars out;
  out.point = ad::scale(point, inv);
  out.prim = ad::scale(prim, inv);
  out.overlap = ad::scale(overlap, inv);
  out.kl = ad::mean(kl_divergence(mu, logvar));
  out.total = weighted_total(weights, out.point, out.prim, out.overlap, out.kl);
  return out;
}

/// Loss breakdown for one cloud and a given posterior.
inline LossBreakdown total_loss(const Model& model, const PointCloud& x, const PosteriorParams& post,
                                const LossWeights& weights, std::uint64_t seed) {
  ad::NoGradGuard guard;
  require_dims(post.dim() == model.config().latent_dim, "total_loss: posterior dimension mismatch");
  Matrix mu = post.mu.transpose();
  Matrix lv = post.logvar.transpose();
  std::vector<PointCloud> batch{x};
  return batch_loss(model, ad::Var::constant(mu), ad::Var::constant(lv), batch, weights, seed).values();
}

}  // namespace editvae
