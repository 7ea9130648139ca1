#pragma once

// Global latent posterior, reparameterized sampling, the KL regularizer, and
// the bias-free linear map that splits a global latent into part latents.

#include "editvae/autodiff.hpp"
#include "editvae/core.hpp"

#include <random>
#include <vector>

namespace editvae {

struct PartDims {
  int style = 32;      // z_Y: point decoder input
  int pose = 8;        // z_T
  int primitive = 8;   // z_P

  int total() const { return style + pose + primitive; }
  bool operator==(const PartDims&) const = default;
};

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

struct PosteriorParams {
  Vector mu;
  Vector logvar;

  PosteriorParams() = default;
  PosteriorParams(Vector mean, Vector log_variance)
      : mu(std::move(mean)), logvar(std::move(log_variance)) {
    require_dims(mu.size() == logvar.size(), "posterior mu/logvar size mismatch");
    if (!mu.allFinite() || !logvar.allFinite())
      throw DomainError("posterior parameters must be finite");
    logvar = logvar.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
  }

  Index dim() const { return mu.size(); }
};

struct PartLatent {
  Vector style;
  Vector pose;
  Vector primitive;

  bool operator==(const PartLatent&) const = default;
};

struct LatentBundle {
  Vector z;
  std::vector<PartLatent> parts;

  bool operator==(const LatentBundle&) const = default;
};

inline Vector reparameterize(const PosteriorParams& post, const Vector& noise) {
  require_dims(noise.size() == post.dim(), "reparameterize: noise dimension mismatch");
  return post.mu + ((0.5 * post.logvar.array()).exp() * noise.array()).matrix();
}

/// KL(N(mu, diag(exp(logvar))) || N(0, I)).
inline double kl_divergence(const PosteriorParams& post) {
  const auto lv = post.logvar.array();
  return 0.5 * (post.mu.array().square() + lv.exp() - 1.0 - lv).sum();
}

/// Per-row KL for batched posteriors: returns B x 1.
inline ad::Var kl_divergence(const ad::Var& mu, const ad::Var& logvar) {
  using namespace ad;
  Var terms = add_scalar(square(mu) + exp(logvar) - logvar, -1.0);
  return scale(row_sum(terms), 0.5);
}

/// Batched reparameterization z = mu + exp(logvar / 2) * noise.
inline ad::Var reparameterize(const ad::Var& mu, const ad::Var& logvar, const Matrix& noise) {
  using namespace ad;
  require_dims(noise.rows() == mu.rows() && noise.cols() == mu.cols(),
               "reparameterize: noise shape mismatch");
  return mu + mul(exp(scale(logvar, 0.5)), Var::constant(noise));
}

inline LatentBundle partition_latent(const Vector& z, const Vector& zl, int parts,
                                     const PartDims& dims) {
  require_dims(zl.size() == static_cast<Index>(parts) * dims.total(),
               "part latent vector has the wrong length");
  LatentBundle b;
  b.z = z;
  b.parts.reserve(parts);
  for (int m = 0; m < parts; ++m) {
    const Index at = static_cast<Index>(m) * dims.total();
    b.parts.push_back({zl.segment(at, dims.style), zl.segment(at + dims.style, dims.pose),
                       zl.segment(at + dims.style + dims.pose, dims.primitive)});
  }
  return b;
}

/// z_l = A z, partitioned into (style | pose | primitive) blocks per part.
inline LatentBundle split_latent(const Matrix& a, const Vector& z, int parts, const PartDims& dims) {
  require_dims(a.cols() == z.size(), "split_latent: A columns must equal latent dimension");
  require_dims(a.rows() == static_cast<Index>(parts) * dims.total(),
               "split_latent: A rows must equal parts * part latent size");
  return partition_latent(z, a * z, parts, dims);
}

/// Ablation path without A: the global latent is sliced directly.
inline LatentBundle slice_latent(const Vector& z, int parts, const PartDims& dims) {
  return partition_latent(z, z, parts, dims);
}

inline Matrix standard_normal(std::mt19937_64& rng, Index rows, Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

inline std::vector<Vector> sample_prior(std::uint64_t seed, int n, int dim) {
  if (n < 0) throw DomainError("sample_prior: n must be non-negative");
  std::mt19937_64 rng(seed);
  std::vector<Vector> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(standard_normal(rng, dim, 1).col(0));
  return out;
}

}  // namespace editvae
