#pragma once

// Set-level generative metrics (JSD, MMD, COV) and the MCD part-semantics score.

#include "editvae/losses.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <set>
#include <span>
#include <vector>

namespace editvae {

struct MetricReport {
  double jsd = 0.0;
  double mmd_cd = 0.0;
  double mmd_emd = 0.0;
  double cov_cd = 0.0;   // percent
  double cov_emd = 0.0;  // percent
  double runtime_seconds = 0.0;
};

namespace metrics {

inline constexpr int kDefaultResolution = 28;

/// Normalized occupancy histogram of all points pooled over [-1, 1]^3.
inline Vector occupancy(std::span<const Matrix> clouds, int resolution) {
  const Index cells = Index(resolution) * resolution * resolution;
  Vector h = Vector::Zero(cells);
  double count = 0.0;
  auto bin = [resolution](double v) {
    const int b = static_cast<int>(std::floor((v + 1.0) * 0.5 * resolution));
    return std::clamp(b, 0, resolution - 1);
  };
  for (const auto& c : clouds) {
    for (Index i = 0; i < c.rows(); ++i) {
      const Index idx = (Index(bin(c(i, 0))) * resolution + bin(c(i, 1))) * resolution + bin(c(i, 2));
      h[idx] += 1.0;
      count += 1.0;
    }
  }
  constexpr double kSmoothing = 1e-12;
  return (h.array() + kSmoothing) / (count + kSmoothing * double(cells));
}

inline double jsd_of_distributions(const Vector& p, const Vector& q) {
  require_dims(p.size() == q.size(), "jsd: distributions of different support");
  double out = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) out += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) out += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::clamp(out, 0.0, std::numbers::ln2);
}

/// Exact min-cost perfect matching (Hungarian algorithm with potentials).
inline std::vector<int> min_cost_assignment(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  require_dims(cost.cols() == n, "assignment needs a square cost matrix");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> match(n);
  for (int j = 1; j <= n; ++j) match[p[j] - 1] = j - 1;
  return match;
}

inline Matrix distance_matrix(const Matrix& x, const Matrix& y) {
  Matrix d(x.rows(), y.rows());
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < y.rows(); ++j) d(i, j) = (x.row(i) - y.row(j)).norm();
  return d;
}

/// Log-domain Sinkhorn with uniform marginals; returns the transport cost
/// expressed as a mean per-point distance.
inline double entropic_transport(const Matrix& cost, double reg, int iterations) {
  const Index n = cost.rows();
  const Index m = cost.cols();
  const double log_a = -std::log(double(n));
  const double log_b = -std::log(double(m));
  Vector f = Vector::Zero(n);
  Vector g = Vector::Zero(m);
  auto lse = [](const auto& v) {
    const double mx = v.maxCoeff();
    return mx + std::log((v.array() - mx).exp().sum());
  };
  Vector row(m), col(n);
  for (int it = 0; it < iterations; ++it) {
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < m; ++j) row[j] = (g[j] - cost(i, j)) / reg;
      f[i] = reg * (log_a - lse(row));
    }
    for (Index j = 0; j < m; ++j) {
      for (Index i = 0; i < n; ++i) col[i] = (f[i] - cost(i, j)) / reg;
      g[j] = reg * (log_b - lse(col));
    }
  }
  double total = 0.0;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j) total += std::exp((f[i] + g[j] - cost(i, j)) / reg) * cost(i, j);
  return total;
}

}  // namespace metrics

/// JSD (nats) between the pooled occupancy distributions of two cloud sets.
inline double jsd(std::span<const Matrix> gen, std::span<const Matrix> ref,
                  int resolution = metrics::kDefaultResolution) {
  if (gen.empty() || ref.empty()) throw DomainError("jsd: empty cloud set");
  if (resolution < 1) throw DomainError("jsd: resolution must be positive");
  return metrics::jsd_of_distributions(metrics::occupancy(gen, resolution),
                                       metrics::occupancy(ref, resolution));
}

struct EmdResult {
  double value = 0.0;
  bool approximate = false;
};

inline constexpr Index kExactEmdLimit = 512;
inline constexpr double kEntropicReg = 1e-2;
inline constexpr int kEntropicIterations = 500;

inline double emd_exact(const Matrix& x, const Matrix& y) {
  const Matrix cost = metrics::distance_matrix(x, y);
  const auto match = metrics::min_cost_assignment(cost);
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) total += cost(i, match[std::size_t(i)]);
  return total / double(x.rows());
}

inline double emd_entropic(const Matrix& x, const Matrix& y, double reg = kEntropicReg,
                           int iterations = kEntropicIterations) {
  return metrics::entropic_transport(metrics::distance_matrix(x, y), reg, iterations);
}

/// Minimum mean point distance over bijections; entropic above 512 points.
inline EmdResult emd(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) throw DimensionError("emd: clouds must have equal cardinality");
  if (x.rows() == 0) throw DomainError("emd: empty cloud");
  if (x.rows() <= kExactEmdLimit) return {emd_exact(x, y), false};
  return {emd_entropic(x, y), true};
}

enum class SetDistance { cd, emd };

inline double cloud_distance(const Matrix& a, const Matrix& b, SetDistance d) {
  return d == SetDistance::cd ? chamfer(a, b) : emd(a, b).value;
}

/// |gen| x |ref| pairwise distance table.
inline Matrix pairwise_set_distances(std::span<const Matrix> gen, std::span<const Matrix> ref, SetDistance d) {
  Matrix out(static_cast<Index>(gen.size()), static_cast<Index>(ref.size()));
  for (std::size_t i = 0; i < gen.size(); ++i)
    for (std::size_t j = 0; j < ref.size(); ++j) out(Index(i), Index(j)) = cloud_distance(gen[i], ref[j], d);
  return out;
}

inline double mmd_from_table(const Matrix& table) { return table.colwise().minCoeff().mean(); }

inline double coverage_from_table(const Matrix& table) {
  std::set<Index> matched;
  for (Index i = 0; i < table.rows(); ++i) {
    Index arg = 0;
    table.row(i).minCoeff(&arg);
    matched.insert(arg);
  }
  return 100.0 * double(matched.size()) / double(table.cols());
}

/// Mean over reference clouds of the distance to the closest generated cloud.
inline double mmd(std::span<const Matrix> gen, std::span<const Matrix> ref, SetDistance d) {
  if (gen.empty() || ref.empty()) throw DomainError("mmd: empty cloud set");
  return mmd_from_table(pairwise_set_distances(gen, ref, d));
}

/// Percentage of reference clouds that are the nearest neighbour of some generated cloud.
inline double coverage(std::span<const Matrix> gen, std::span<const Matrix> ref, SetDistance d) {
  if (gen.empty() || ref.empty()) throw DomainError("coverage: empty cloud set");
  return coverage_from_table(pairwise_set_distances(gen, ref, d));
}

/// Mean over discovered parts of the smallest Chamfer distance to any ground-truth part.
inline double mcd(std::span<const Matrix> parts, std::span<const Matrix> gt_parts) {
  if (parts.empty() || gt_parts.empty()) throw DomainError("mcd: empty part list");
  double total = 0.0;
  for (const auto& p : parts) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& g : gt_parts) best = std::min(best, chamfer(p, g));
    total += best;
  }
  return total / double(parts.size());
}

struct MetricSelection {
  bool jsd = true;
  bool mmd_cd = true;
  bool mmd_emd = true;
  bool cov_cd = true;
  bool cov_emd = true;
};

inline MetricReport evaluate(std::span<const Matrix> gen, std::span<const Matrix> ref,
                             const MetricSelection& which = {}) {
  const auto start = std::chrono::steady_clock::now();
  MetricReport r;
  if (which.jsd) r.jsd = jsd(gen, ref);
  if (which.mmd_cd || which.cov_cd) {
    const Matrix t = pairwise_set_distances(gen, ref, SetDistance::cd);
    r.mmd_cd = mmd_from_table(t);
    r.cov_cd = coverage_from_table(t);
  }
  if (which.mmd_emd || which.cov_emd) {
    const Matrix t = pairwise_set_distances(gen, ref, SetDistance::emd);
    r.mmd_emd = mmd_from_table(t);
    r.cov_emd = coverage_from_table(t);
  }
  r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace editvae
