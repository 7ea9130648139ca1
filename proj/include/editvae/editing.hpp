#pragma once

// Generation and part-level editing on the disentangled latents. Every edit
// operates on a LatentBundle and decodes each branch from its own part
// latents, so unselected parts are untouched bit for bit.

#include "editvae/latent.hpp"
#include "editvae/losses.hpp"
#include "editvae/networks.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <vector>

namespace editvae {

enum class EditMode { mix, resample };

struct EditSelection {
  std::vector<int> part_indices;
  EditMode mode = EditMode::mix;

  void validate(int parts) const {
    std::set<int> seen;
    for (int m : part_indices) {
      if (m < 0 || m >= parts) throw DomainError("part index " + std::to_string(m) + " out of range");
      if (!seen.insert(m).second) throw DomainError("duplicate part index " + std::to_string(m));
    }
  }
  bool contains(int m) const {
    return std::find(part_indices.begin(), part_indices.end(), m) != part_indices.end();
  }
};

struct MixOptions {
  bool transfer_primitive = false;  // also take the reference z_P
};

inline std::vector<DecodedShape> generate(const Model& model, std::uint64_t seed, int n) {
  if (n < 0) throw DomainError("generate: n must be non-negative");
  std::vector<DecodedShape> out;
  for (const auto& z : sample_prior(seed, n, model.config().latent_dim)) out.push_back(decode_shape(model, z));
  return out;
}

/// Encodes a cloud to its split bundle; deterministic uses z = mu.
inline LatentBundle encode_shape(const Model& model, const PointCloud& x, bool deterministic, std::uint64_t seed) {
  const PosteriorParams post = encoder_forward(model, x);
  Vector z = post.mu;
  if (!deterministic) {
    std::mt19937_64 rng(seed);
    z = reparameterize(post, standard_normal(rng, post.dim(), 1).col(0));
  }
  return split(model, z);
}

/// Transfers the selected parts' style latents from reference into target.
inline DecodedShape mix_parts(const Model& model, const LatentBundle& target, const LatentBundle& reference,
                              const EditSelection& sel, const MixOptions& options = {}) {
  const int parts = model.config().parts;
  sel.validate(parts);
  require_dims(int(target.parts.size()) == parts && int(reference.parts.size()) == parts,
               "mix_parts: bundles do not match the model's part count");
  LatentBundle edited = target;
  for (int m : sel.part_indices) {
    edited.parts[m].style = reference.parts[m].style;
    if (options.transfer_primitive) edited.parts[m].primitive = reference.parts[m].primitive;
  }
  return decode_bundle(model, edited);
}

/// Redraws the selected parts' style latents from a fresh prior sample pushed
/// through A, keeping every pose and primitive latent.
inline DecodedShape resample_parts(const Model& model, const LatentBundle& bundle, const EditSelection& sel,
                                   std::uint64_t seed) {
  sel.validate(model.config().parts);
  require_dims(int(bundle.parts.size()) == model.config().parts, "resample_parts: bundle part count mismatch");
  LatentBundle edited = bundle;
  if (!sel.part_indices.empty()) {
    const LatentBundle fresh = split(model, sample_prior(seed, 1, model.config().latent_dim).front());
    for (int m : sel.part_indices) edited.parts[m].style = fresh.parts[m].style;
  }
  return decode_bundle(model, edited);
}

inline std::vector<DecodedShape> interpolate(const Model& model, const Vector& z1, const Vector& z2,
                                             std::span<const double> weights) {
  require_dims(z1.size() == z2.size(), "interpolate: latent sizes differ");
  for (double w : weights)
    if (!(w >= 0.0 && w <= 1.0)) throw DomainError("interpolation weight outside [0, 1]");
  std::vector<DecodedShape> out;
  for (double w : weights) {
    const Vector z = w == 0.0 ? z1 : (w == 1.0 ? z2 : Vector((1.0 - w) * z1 + w * z2));
    out.push_back(decode_shape(model, z));
  }
  return out;
}

/// Labels each input point with the part whose posed primitive surface is
/// nearest, after encoding the cloud deterministically.
inline std::vector<int> segment_parts(const Model& model, const PointCloud& x) {
  const DecodedShape shape = decode_bundle(model, encode_shape(model, x, true, 0));
  std::vector<PosedPrimitive> prims;
  for (const auto& p : shape.parts) prims.push_back({p.primitive, p.pose});
  return assign_points_to_parts(x, prims, model.config().surface_samples);
}

/// Groups rows by label, dropping empty groups.
inline std::vector<Matrix> group_rows(const Matrix& points, const std::vector<int>& labels, int groups) {
  std::vector<Matrix> out;
  for (int g = 0; g < groups; ++g) {
    const auto rows = rows_with_label(labels, g);
    if (!rows.empty()) out.push_back(select_rows(points, rows));
  }
  return out;
}

}  // namespace editvae
