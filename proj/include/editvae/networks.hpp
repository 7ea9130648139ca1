#pragma once

// PointNet-style encoder, per-part tree point decoder, and the one-layer pose
// and primitive decoders. All forwards run on the autodiff tape; value-level
// helpers wrap them under a NoGradGuard.

#include "editvae/autodiff.hpp"
#include "editvae/geometry.hpp"
#include "editvae/latent.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace editvae {

struct ModelConfig {
  int parts = 3;
  int latent_dim = 256;
  PartDims part_dims{};
  bool use_global_map = true;
  std::vector<int> encoder_widths{64, 128, 128, 256};
  std::vector<int> tree_dims{32, 32, 16, 16, 3};
  std::vector<int> tree_branching{1, 2, 4, 32};
  int loop_support = 10;
  double leaky_slope = 0.2;
  double max_translation = 1.0;
  int surface_samples = 64;

  int points_per_part() const {
    int n = 1;
    for (int b : tree_branching) n *= b;
    return n;
  }

  void validate() const {
    if (parts < 1) throw DomainError("model needs at least one part");
    if (latent_dim < 1) throw DomainError("latent dimension must be positive");
    if (part_dims.style < 1 || part_dims.pose < 1 || part_dims.primitive < 1)
      throw DomainError("part latent dimensions must be positive");
    if (!use_global_map && latent_dim != parts * part_dims.total())
      throw DomainError("without the global map the latent dimension must equal parts * " +
                        std::to_string(part_dims.total()));
    if (tree_dims.size() != tree_branching.size() + 1)
      throw DomainError("tree needs one more feature dimension than branching factors");
    if (tree_dims.front() != part_dims.style)
      throw DomainError("tree root dimension must equal the style latent dimension");
    if (tree_dims.back() != 3) throw DomainError("tree leaves must be 3-D points");
    if (encoder_widths.empty()) throw DomainError("encoder needs at least one stage");
    if (surface_samples < 1) throw DomainError("surface sample count must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

namespace nn {

inline Matrix gaussian_init(std::mt19937_64& rng, Index rows, Index cols, double stddev) {
  return standard_normal(rng, rows, cols) * stddev;
}

struct Linear {
  ad::Parameter weight;  // in x out
  ad::Parameter bias;    // 1 x out

  Linear() = default;
  Linear(std::mt19937_64& rng, int in, int out, double gain = 1.0)
      : weight(gaussian_init(rng, in, out, gain / std::sqrt(double(in)))),
        bias(Matrix::Zero(1, out)) {}

  ad::Var forward(const ad::Var& x) const {
    return ad::add_row(ad::matmul(x, weight.var()), bias.var());
  }
};

struct BatchNorm {
  ad::Parameter gamma;
  ad::Parameter beta;
  Matrix running_mean;
  Matrix running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm() = default;
  explicit BatchNorm(int width)
      : gamma(Matrix::Ones(1, width)),
        beta(Matrix::Zero(1, width)),
        running_mean(Matrix::Zero(1, width)),
        running_var(Matrix::Ones(1, width)) {}

  ad::Var forward_train(const ad::Var& x) {
    auto r = ad::batch_norm(x, gamma.var(), beta.var(), eps);
    const double n = static_cast<double>(x.rows());
    const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
    running_mean = (1.0 - momentum) * running_mean + momentum * Matrix(r.batch_mean);
    running_var = (1.0 - momentum) * running_var + momentum * unbias * Matrix(r.batch_var);
    return r.output;
  }

  ad::Var forward_eval(const ad::Var& x) const {
    Matrix inv_std = (running_var.array() + eps).rsqrt();
    Matrix scale = inv_std.cwiseProduct(gamma.value());
    Matrix shift = beta.value() - running_mean.cwiseProduct(scale);
    return ad::add_row(ad::mul_row(x, ad::Var::constant(scale)), ad::Var::constant(shift));
  }
};

}  // namespace nn

enum class Mode { train, eval };

struct PosteriorVars {
  ad::Var mu;      // B x D_z
  ad::Var logvar;  // B x D_z, clamped
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(std::mt19937_64& rng, const ModelConfig& cfg) : slope_(cfg.leaky_slope) {
    int in = 3;
    for (int w : cfg.encoder_widths) {
      stages_.push_back(nn::Linear(rng, in, w, std::sqrt(2.0)));
      norms_.emplace_back(w);
      in = w;
    }
    mu_head_ = nn::Linear(rng, in, cfg.latent_dim, 0.1);
    logvar_head_ = nn::Linear(rng, in, cfg.latent_dim, 0.1);
  }

  /// points: (B * n) x 3 stacked clouds of n points each.
  PosteriorVars forward(const ad::Var& points, Index n, Mode mode) {
    if (mode == Mode::eval) return forward_eval(points, n);
    require_dims(n > 0 && points.rows() > 0 && points.rows() % n == 0,
                 "encoder: stacked rows must be a positive multiple of the cloud size");
    ad::Var h = points;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      h = stages_[i].forward(h);
      h = norms_[i].forward_train(h);
      h = ad::leaky_relu(h, slope_);
    }
    ad::Var feat = ad::segment_max(h, n);
    return {mu_head_.forward(feat), ad::clamp(logvar_head_.forward(feat), kLogVarMin, kLogVarMax)};
  }

  PosteriorVars forward_eval(const ad::Var& points, Index n) const {
    require_dims(n > 0 && points.rows() > 0 && points.rows() % n == 0,
                 "encoder: stacked rows must be a positive multiple of the cloud size");
    ad::Var h = points;
    for (std::size_t i = 0; i < stages_.size(); ++i)
      h = ad::leaky_relu(norms_[i].forward_eval(stages_[i].forward(h)), slope_);
    ad::Var feat = ad::segment_max(h, n);
    return {mu_head_.forward(feat), ad::clamp(logvar_head_.forward(feat), kLogVarMin, kLogVarMax)};
  }

  template <typename Visit>
  void visit(const std::string& prefix, Visit&& v) {
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      const std::string p = prefix + "stage" + std::to_string(i) + ".";
      v(p + "weight", stages_[i].weight);
      v(p + "bias", stages_[i].bias);
      v(p + "bn.gamma", norms_[i].gamma);
      v(p + "bn.beta", norms_[i].beta);
    }
    v(prefix + "mu.weight", mu_head_.weight);
    v(prefix + "mu.bias", mu_head_.bias);
    v(prefix + "logvar.weight", logvar_head_.weight);
    v(prefix + "logvar.bias", logvar_head_.bias);
  }

  template <typename Visit>
  void visit_buffers(const std::string& prefix, Visit&& v) {
    for (std::size_t i = 0; i < norms_.size(); ++i) {
      const std::string p = prefix + "stage" + std::to_string(i) + ".bn.";
      v(p + "running_mean", norms_[i].running_mean);
      v(p + "running_var", norms_[i].running_var);
    }
  }

 private:
  double slope_ = 0.2;
  std::vector<nn::Linear> stages_;
  std::vector<nn::BatchNorm> norms_;
  nn::Linear mu_head_;
  nn::Linear logvar_head_;
};

/// Tree-structured point generator. Level l expands every node of level l-1
/// into branching[l-1] children:
///   child = act(sum_a U_a feat_a(ancestor) + loop(branched) + b)
/// where branched = W_branch(parent) split into children and
/// loop(h) = (h L1) L2 with L1 of width K * d_{l-1}. The last level is linear.
class PointDecoder {
 public:
  PointDecoder() = default;
  PointDecoder(std::mt19937_64& rng, const ModelConfig& cfg)
      : dims_(cfg.tree_dims), branching_(cfg.tree_branching), slope_(cfg.leaky_slope) {
    const int k = cfg.loop_support;
    for (std::size_t l = 1; l < dims_.size(); ++l) {
      const int din = dims_[l - 1];
      const int dout = dims_[l];
      const int b = branching_[l - 1];
      Level lv;
      lv.branch = ad::Parameter(nn::gaussian_init(rng, din, b * din, 1.0 / std::sqrt(double(din))));
      for (std::size_t a = 0; a < l; ++a)
        lv.ancestors.emplace_back(
            nn::gaussian_init(rng, dims_[a], dout, 1.0 / std::sqrt(double(dims_[a] * l))));
      lv.loop_in = ad::Parameter(nn::gaussian_init(rng, din, k * din, 1.0 / std::sqrt(double(din))));
      lv.loop_out = ad::Parameter(nn::gaussian_init(rng, k * din, dout, 1.0 / std::sqrt(double(k * din))));
      lv.bias = ad::Parameter(Matrix::Zero(1, dout));
      levels_.push_back(std::move(lv));
    }
  }

  Index points_per_part() const {
    Index n = 1;
    for (int b : branching_) n *= b;
    return n;
  }

  /// z_style: B x d_0 -> (B * points_per_part) x 3, rows grouped by sample.
  ad::Var forward(const ad::Var& z_style) const {
    require_dims(z_style.cols() == dims_.front(), "point decoder: style latent size mismatch");
    const Index batch = z_style.rows();
    std::vector<ad::Var> feats{z_style};
    std::vector<Index> nodes{1};
    for (std::size_t l = 1; l < dims_.size(); ++l) {
      const Level& lv = levels_[l - 1];
      const Index n_prev = nodes.back();
      const Index n_here = n_prev * branching_[l - 1];
      const Index rows = batch * n_here;
      ad::Var branched =
          ad::reshape(ad::matmul(feats.back(), lv.branch.var()), rows, dims_[l - 1]);
      ad::Var pre = ad::matmul(ad::matmul(branched, lv.loop_in.var()), lv.loop_out.var());
      for (std::size_t a = 0; a < l; ++a) {
        const Index fan = n_here / nodes[a];
        ad::Var projected = ad::matmul(feats[a], lv.ancestors[a].var());
        if (fan == 1) {
          pre = pre + projected;
        } else {
          std::vector<Index> idx(static_cast<std::size_t>(rows));
          for (Index r = 0; r < rows; ++r) idx[r] = r / fan;
          pre = pre + ad::gather_rows(projected, std::move(idx));
        }
      }
      pre = ad::add_row(pre, lv.bias.var());
      feats.push_back(l + 1 < dims_.size() ? ad::leaky_relu(pre, slope_) : pre);
      nodes.push_back(n_here);
    }
    return feats.back();
  }

  template <typename Visit>
  void visit(const std::string& prefix, Visit&& v) {
    for (std::size_t l = 0; l < levels_.size(); ++l) {
      const std::string p = prefix + "level" + std::to_string(l + 1) + ".";
      v(p + "branch", levels_[l].branch);
      for (std::size_t a = 0; a < levels_[l].ancestors.size(); ++a)
        v(p + "ancestor" + std::to_string(a), levels_[l].ancestors[a]);
      v(p + "loop_in", levels_[l].loop_in);
      v(p + "loop_out", levels_[l].loop_out);
      v(p + "bias", levels_[l].bias);
    }
  }

 private:
  struct Level {
    ad::Parameter branch;
    std::vector<ad::Parameter> ancestors;
    ad::Parameter loop_in;
    ad::Parameter loop_out;
    ad::Parameter bias;
  };
  std::vector<int> dims_;
  std::vector<int> branching_;
  double slope_ = 0.2;
  std::vector<Level> levels_;
};

/// Affine 8 -> 7, then unit quaternion (fallback identity) and bounded translation.
class PoseDecoder {
 public:
  PoseDecoder() = default;
  PoseDecoder(std::mt19937_64& rng, const ModelConfig& cfg)
      : layer_(rng, cfg.part_dims.pose, sq::kPoseSize, 0.1), max_translation_(cfg.max_translation) {
    layer_.bias.value()(0, 0) = 1.0;
  }

  /// B x d_pose -> B x 7 packed poses.
  ad::Var forward(const ad::Var& z_pose) const { return squash(layer_.forward(z_pose)); }

  ad::Var squash(const ad::Var& raw) const {
    const double tmax = max_translation_;
    return ad::map_rows<0, 7, 7>(ad::Var(), raw, raw.rows(),
                                 [tmax](const auto*, const auto* in, auto* out, Index) {
                                   using T = std::remove_cv_t<std::remove_pointer_t<decltype(out)>>;
                                   using std::sqrt;
                                   using std::tanh;
                                   const T n2 = in[0] * in[0] + in[1] * in[1] + in[2] * in[2] + in[3] * in[3];
                                   if (sq::value_of(n2) < 1e-16) {
                                     out[0] = T(1.0);
                                     out[1] = out[2] = out[3] = T(0.0);
                                   } else {
                                     const T n = sqrt(n2);
                                     for (int i = 0; i < 4; ++i) out[i] = in[i] / n;
                                   }
                                   for (int i = 4; i < 7; ++i) out[i] = T(tmax) * tanh(in[i]);
                                 });
  }

  nn::Linear& layer() { return layer_; }

  template <typename Visit>
  void visit(const std::string& prefix, Visit&& v) {
    v(prefix + "weight", layer_.weight);
    v(prefix + "bias", layer_.bias);
  }

 private:
  nn::Linear layer_;
  double max_translation_ = 1.0;
};

/// Affine 8 -> 7 squashed into alpha in [0.01, 2], eps in [0.1, 1.9], k in [-0.9, 0.9].
class PrimitiveDecoder {
 public:
  static constexpr double kAlphaMin = 0.01;
  static constexpr double kAlphaMax = 2.0;

  PrimitiveDecoder() = default;
  PrimitiveDecoder(std::mt19937_64& rng, const ModelConfig& cfg)
      : layer_(rng, cfg.part_dims.primitive, sq::kPrimitiveSize, 0.1) {
    // Start from small spheres rather than the size midpoint.
    for (int i = 0; i < 3; ++i) layer_.bias.value()(0, i) = -1.5;
  }

  ad::Var forward(const ad::Var& z_prim) const { return squash(layer_.forward(z_prim)); }

  static ad::Var squash(const ad::Var& raw) {
    return ad::map_rows<0, 7, 7>(ad::Var(), raw, raw.rows(),
                                 [](const auto*, const auto* in, auto* out, Index) {
                                   using T = std::remove_cv_t<std::remove_pointer_t<decltype(out)>>;
                                   using std::exp;
                                   using std::tanh;
                                   auto sig = [](const T& x) { return T(1.0) / (T(1.0) + exp(-x)); };
                                   for (int i = 0; i < 3; ++i)
                                     out[i] = T(kAlphaMin) + T(kAlphaMax - kAlphaMin) * sig(in[i]);
                                   for (int i = 3; i < 5; ++i)
                                     out[i] = T(SuperquadricParams::kMinEpsilon) +
                                              T(SuperquadricParams::kMaxEpsilon -
                                                SuperquadricParams::kMinEpsilon) * sig(in[i]);
                                   for (int i = 5; i < 7; ++i)
                                     out[i] = T(SuperquadricParams::kMaxTaper) * tanh(in[i]);
                                 });
  }

  nn::Linear& layer() { return layer_; }

  template <typename Visit>
  void visit(const std::string& prefix, Visit&& v) {
    v(prefix + "weight", layer_.weight);
    v(prefix + "bias", layer_.bias);
  }

 private:
  nn::Linear layer_;
};

struct PartBranch {
  PointDecoder points;
  PoseDecoder pose;
  PrimitiveDecoder primitive;
};

/// Batched decoder outputs for one part.
struct PartVars {
  ad::Var points;     // (B * P) x 3 canonical
  ad::Var pose;       // B x 7
  ad::Var primitive;  // B x 7
};

/// Per-part latents for a batch (each B x dim).
struct PartLatentVars {
  ad::Var style;
  ad::Var pose;
  ad::Var primitive;
};

struct DecodedPart {
  Matrix canonical_points;  // P x 3, canonical frame
  SuperquadricParams primitive;
  Pose pose;
  Matrix world_points;     // T(canonical_points)
  Matrix surface_samples;  // T(sampled primitive surface)
};

struct DecodedShape {
  std::vector<DecodedPart> parts;

  Index size() const {
    Index n = 0;
    for (const auto& p : parts) n += p.world_points.rows();
    return n;
  }
  Matrix points() const {
    Matrix out(size(), 3);
    Index at = 0;
    for (const auto& p : parts) {
      out.middleRows(at, p.world_points.rows()) = p.world_points;
      at += p.world_points.rows();
    }
    return out;
  }
  std::vector<int> part_index() const {
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(size()));
    for (std::size_t m = 0; m < parts.size(); ++m)
      idx.insert(idx.end(), static_cast<std::size_t>(parts[m].world_points.rows()), int(m));
    return idx;
  }
};

/// The full set of parameters: encoder, global map A, and M unshared branches.
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& cfg, std::uint64_t seed) : config_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    encoder_ = Encoder(rng, cfg);
    const int zl = cfg.parts * cfg.part_dims.total();
    if (cfg.use_global_map)
      global_map_ = ad::Parameter(nn::gaussian_init(rng, zl, cfg.latent_dim, 1.0 / std::sqrt(double(cfg.latent_dim))));
    for (int m = 0; m < cfg.parts; ++m)
      branches_.push_back({PointDecoder(rng, cfg), PoseDecoder(rng, cfg), PrimitiveDecoder(rng, cfg)});
  }

  const ModelConfig& config() const { return config_; }
  Encoder& encoder() { return encoder_; }
  const Encoder& encoder() const { return encoder_; }
  std::vector<PartBranch>& branches() { return branches_; }
  const std::vector<PartBranch>& branches() const { return branches_; }
  bool has_global_map() const { return config_.use_global_map; }
  const Matrix& global_map() const { return global_map_.value(); }
  Matrix& global_map() { return global_map_.value(); }

  /// z (B x D_z) -> per-part latents through A (or direct slicing).
  std::vector<PartLatentVars> split(const ad::Var& z) const {
    require_dims(z.cols() == config_.latent_dim, "latent dimension mismatch");
    ad::Var zl = config_.use_global_map ? ad::matmul_nt(z, global_map_.var()) : z;
    const PartDims& d = config_.part_dims;
    std::vector<PartLatentVars> out;
    for (int m = 0; m < config_.parts; ++m) {
      const Index at = static_cast<Index>(m) * d.total();
      out.push_back({ad::slice_cols(zl, at, d.style), ad::slice_cols(zl, at + d.style, d.pose),
                     ad::slice_cols(zl, at + d.style + d.pose, d.primitive)});
    }
    return out;
  }

  PartVars decode_part(int m, const PartLatentVars& latents) const {
    const PartBranch& br = branches_.at(static_cast<std::size_t>(m));
    return {br.points.forward(latents.style), br.pose.forward(latents.pose),
            br.primitive.forward(latents.primitive)};
  }

  std::vector<PartVars> decode(const ad::Var& z) const {
    auto latents = split(z);
    std::vector<PartVars> out;
    for (int m = 0; m < config_.parts; ++m) out.push_back(decode_part(m, latents[m]));
    return out;
  }

  /// Visits every trainable parameter as (name, Parameter&).
  template <typename Visit>
  void visit_parameters(Visit&& v) {
    encoder_.visit("encoder.", v);
    if (config_.use_global_map) v("global_map", global_map_);
    for (std::size_t m = 0; m < branches_.size(); ++m) {
      const std::string p = "part" + std::to_string(m) + ".";
      branches_[m].points.visit(p + "points.", v);
      branches_[m].pose.visit(p + "pose.", v);
      branches_[m].primitive.visit(p + "primitive.", v);
    }
  }

  /// Visits non-trainable state (normalization running statistics).
  template <typename Visit>
  void visit_buffers(Visit&& v) {
    encoder_.visit_buffers("encoder.", v);
  }

  std::vector<std::pair<std::string, ad::Parameter*>> parameters() {
    std::vector<std::pair<std::string, ad::Parameter*>> out;
    visit_parameters([&](const std::string& name, ad::Parameter& p) { out.emplace_back(name, &p); });
    return out;
  }

  void zero_grad() {
    visit_parameters([](const std::string&, ad::Parameter& p) { p.zero_grad(); });
  }

 private:
  ModelConfig config_;
  Encoder encoder_;
  ad::Parameter global_map_;
  std::vector<PartBranch> branches_;
};

/// Surface samples of packed primitive (1 x 7) posed by packed pose (1 x 7).
inline ad::Var posed_surface(const ad::Var& primitive, const ad::Var& pose,
                             const std::vector<std::array<double, 2>>& angles) {
  ad::Var canonical = ad::map_rows<7, 0, 3>(
      primitive, ad::Var(), static_cast<Index>(angles.size()),
      [angles](const auto* prim, const auto*, auto* out, Index r) {
        sq::surface_point(prim, angles[r][0], angles[r][1], out);
      });
  return ad::map_rows<7, 3, 3>(pose, canonical, canonical.rows(),
                               [](const auto* p, const auto* x, auto* out, Index) {
                                 sq::transform_point(p, x, out);
                               });
}

inline ad::Var transform_rows(const ad::Var& pose, const ad::Var& points) {
  return ad::map_rows<7, 3, 3>(pose, points, points.rows(),
                               [](const auto* p, const auto* x, auto* out, Index) {
                                 sq::transform_point(p, x, out);
                               });
}

inline ad::Var inverse_transform_rows(const ad::Var& pose, const ad::Var& points) {
  return ad::map_rows<7, 3, 3>(pose, points, points.rows(),
                               [](const auto* p, const auto* x, auto* out, Index) {
                                 sq::inverse_transform_point(p, x, out);
                               });
}

/// Per-point H_m for world points against packed primitive/pose: N x 1.
inline ad::Var smoothed_indicator_rows(const ad::Var& primitive, const ad::Var& pose,
                                       const ad::Var& points) {
  ad::Var shared = ad::concat_cols({primitive, pose});
  return ad::map_rows<14, 3, 1>(shared, points, points.rows(),
                                [](const auto* s, const auto* x, auto* out, Index) {
                                  out[0] = sq::smoothed_indicator(s, s + 7, x);
                                });
}

inline std::span<const double> row_span(const Matrix& m, Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

/// Converts the b-th sample of batched part outputs into value-level parts.
inline DecodedShape to_decoded_shape(const std::vector<PartVars>& parts, Index b,
                                     const std::vector<std::array<double, 2>>& angles) {
  DecodedShape shape;
  for (const auto& p : parts) {
    const Index per = p.points.rows() / p.pose.rows();
    DecodedPart dp;
    dp.canonical_points = p.points.value().middleRows(b * per, per);
    dp.primitive = SuperquadricParams::unpack(row_span(p.primitive.value(), b));
    dp.pose = Pose::unpack(row_span(p.pose.value(), b));
    const auto packed_pose = dp.pose.packed();
    dp.world_points.resize(per, 3);
    for (Index i = 0; i < per; ++i)
      sq::transform_point(packed_pose.data(), &dp.canonical_points(i, 0), &dp.world_points(i, 0));
    Matrix canonical = surface_points(dp.primitive, angles);
    dp.surface_samples.resize(canonical.rows(), 3);
    for (Index i = 0; i < canonical.rows(); ++i)
      sq::transform_point(packed_pose.data(), &canonical(i, 0), &dp.surface_samples(i, 0));
    shape.parts.push_back(std::move(dp));
  }
  return shape;
}

inline std::vector<std::array<double, 2>> decode_surface_angles(const ModelConfig& cfg) {
  return sample_angles(cfg.surface_samples, SamplingScheme::grid, 0);
}

/// Decodes explicit part latents (used by editing, bypassing A).
inline DecodedShape decode_bundle(const Model& model, const LatentBundle& bundle) {
  ad::NoGradGuard guard;
  const auto& cfg = model.config();
  require_dims(static_cast<int>(bundle.parts.size()) == cfg.parts, "bundle part count mismatch");
  std::vector<PartVars> parts;
  for (int m = 0; m < cfg.parts; ++m) {
    const PartLatent& pl = bundle.parts[m];
    require_dims(pl.style.size() == cfg.part_dims.style && pl.pose.size() == cfg.part_dims.pose &&
                     pl.primitive.size() == cfg.part_dims.primitive,
                 "bundle part latent dimension mismatch");
    PartLatentVars lv{ad::Var::constant(pl.style.transpose()), ad::Var::constant(pl.pose.transpose()),
                      ad::Var::constant(pl.primitive.transpose())};
    parts.push_back(model.decode_part(m, lv));
  }
  return to_decoded_shape(parts, 0, decode_surface_angles(cfg));
}

inline LatentBundle split(const Model& model, const Vector& z) {
  const auto& cfg = model.config();
  if (cfg.use_global_map) return split_latent(model.global_map(), z, cfg.parts, cfg.part_dims);
  return slice_latent(z, cfg.parts, cfg.part_dims);
}

/// Decodes one global latent into canonical parts, poses, primitives, and world points.
inline DecodedShape decode_shape(const Model& model, const Vector& z) {
  require_dims(z.size() == model.config().latent_dim, "decode_shape: latent dimension mismatch");
  if (!z.allFinite()) throw DomainError("decode_shape: latent must be finite");
  return decode_bundle(model, split(model, z));
}

inline Matrix stack_clouds(std::span<const PointCloud> clouds) {
  require_dims(!clouds.empty(), "no clouds to stack");
  const Index n = clouds.front().size();
  Matrix out(n * static_cast<Index>(clouds.size()), 3);
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    require_dims(clouds[i].size() == n, "clouds in a batch must have equal cardinality");
    out.middleRows(static_cast<Index>(i) * n, n) = clouds[i].points();
  }
  return out;
}

/// Evaluation-mode posterior of a single cloud.
inline PosteriorParams encoder_forward(const Model& model, const PointCloud& x) {
  ad::NoGradGuard guard;
  if (x.size() < 1) throw DomainError("encoder: empty point cloud");
  auto post = model.encoder().forward_eval(ad::Var::constant(x.points()), x.size());
  return PosteriorParams(post.mu.value().row(0).transpose(), post.logvar.value().row(0).transpose());
}

}  // namespace editvae
