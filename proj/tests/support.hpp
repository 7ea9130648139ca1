#pragma once

// Shared fixtures and independent oracles for the test suites.

#include "editvae/editvae.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace editvae::testing {

inline Matrix random_points(std::uint64_t seed, Index n, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  Matrix m(n, 3);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline Matrix row_matrix(std::initializer_list<double> v) {
  Matrix m(1, Index(v.size()));
  Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

struct GradCheck {
  double worst = 0.0;       // worst tensor-wise relative error
  std::size_t worst_input = 0;
};

/// Compares tape gradients of a scalar function with central differences.
/// The error per input tensor is |g_tape - g_fd| / max(|g_tape|, |g_fd|, tiny).
inline GradCheck gradcheck(const std::function<ad::Var(const std::vector<ad::Var>&)>& f,
                           const std::vector<Matrix>& inputs, double h = 1e-6) {
  std::vector<ad::Parameter> params;
  for (const auto& m : inputs) params.emplace_back(m);
  std::vector<ad::Var> vars;
  for (const auto& p : params) vars.push_back(p.var());
  ad::Var out = f(vars);
  ad::backward(out);

  auto eval = [&](const std::vector<Matrix>& values) {
    ad::NoGradGuard guard;
    std::vector<ad::Var> cs;
    for (const auto& v : values) cs.push_back(ad::Var::constant(v));
    return f(cs).item();
  };

  GradCheck result;
  std::vector<Matrix> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Matrix numeric = Matrix::Zero(inputs[k].rows(), inputs[k].cols());
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k].data()[i];
      probe[k].data()[i] = x0 + h;
      const double up = eval(probe);
      probe[k].data()[i] = x0 - h;
      const double down = eval(probe);
      probe[k].data()[i] = x0;
      numeric.data()[i] = (up - down) / (2.0 * h);
    }
    const Matrix analytic = params[k].has_grad() ? params[k].grad() : Matrix::Zero(numeric.rows(), numeric.cols());
    const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
    const double err = (analytic - numeric).norm() / scale;
    if (err > result.worst) {
      result.worst = err;
      result.worst_input = k;
    }
  }
  return result;
}

/// Gradient of the single-cloud objective w.r.t. the posterior and a random
/// subset of entries of every parameter tensor, checked by central differences.
/// Returns the worst per-tensor relative error and its name.
inline std::pair<double, std::string> total_loss_gradcheck(Model& model, const PointCloud& x,
                                                           const PosteriorParams& post, const LossWeights& w,
                                                           std::uint64_t seed, int entries_per_tensor,
                                                           double h = 1e-6) {
  std::vector<PointCloud> batch{x};
  ad::Parameter mu(Matrix(post.mu.transpose()));
  ad::Parameter lv(Matrix(post.logvar.transpose()));
  model.zero_grad();
  ad::backward(batch_loss(model, mu.var(), lv.var(), batch, w, seed).total);

  auto eval = [&] {
    ad::NoGradGuard guard;
    return batch_loss(model, mu.var(), lv.var(), batch, w, seed).total.item();
  };
  auto check = [&](Matrix& value, const Matrix& grad, std::mt19937_64& rng) {
    std::vector<Index> picks;
    if (value.size() <= entries_per_tensor) {
      for (Index i = 0; i < value.size(); ++i) picks.push_back(i);
    } else {
      std::uniform_int_distribution<Index> pick(0, value.size() - 1);
      for (int k = 0; k < entries_per_tensor; ++k) picks.push_back(pick(rng));
    }
    Vector analytic(Index(picks.size())), numeric(Index(picks.size()));
    for (std::size_t k = 0; k < picks.size(); ++k) {
      double& slot = value.data()[picks[k]];
      const double x0 = slot;
      slot = x0 + h;
      const double up = eval();
      slot = x0 - h;
      const double down = eval();
      slot = x0;
      numeric[Index(k)] = (up - down) / (2.0 * h);
      analytic[Index(k)] = grad.size() ? grad.data()[picks[k]] : 0.0;
    }
    return (analytic - numeric).norm() / std::max({analytic.norm(), numeric.norm(), 1e-12});
  };

  std::mt19937_64 rng(seed);
  std::pair<double, std::string> worst{0.0, ""};
  auto record = [&](double err, const std::string& name) {
    if (err > worst.first) worst = {err, name};
  };
  const Matrix mu_grad = mu.grad(), lv_grad = lv.grad();
  record(check(mu.value(), mu_grad, rng), "mu");
  record(check(lv.value(), lv_grad, rng), "logvar");
  for (auto& [name, p] : model.parameters()) {
    if (name.rfind("encoder.", 0) == 0) continue;  // the posterior is given, so the encoder is unused
    const Matrix g = p->has_grad() ? p->grad() : Matrix();
    record(check(p->value(), g, rng), name);
  }
  return worst;
}

/// Brute-force Chamfer oracle written without the library's helpers.
inline double chamfer_oracle(const Matrix& x, const Matrix& y) {
  auto directed = [](const Matrix& a, const Matrix& b) {
    double total = 0.0;
    for (Index i = 0; i < a.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < b.rows(); ++j) {
        double d = 0.0;
        for (int c = 0; c < 3; ++c) d += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
        best = std::min(best, d);
      }
      total += best;
    }
    return total / double(a.rows());
  };
  return 0.5 * directed(x, y) + 0.5 * directed(y, x);
}

/// Exact EMD by enumerating all permutations (small n only).
inline double emd_by_permutation(const Matrix& x, const Matrix& y) {
  std::vector<int> perm(static_cast<std::size_t>(x.rows()));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = int(i);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) total += (x.row(Index(i)) - y.row(perm[i])).norm();
    best = std::min(best, total / double(perm.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// A small model configuration that keeps unit tests fast.
inline ModelConfig small_config(int parts = 3, bool global_map = true) {
  ModelConfig c;
  c.parts = parts;
  c.use_global_map = global_map;
  c.latent_dim = global_map ? 24 : parts * c.part_dims.total();
  c.encoder_widths = {16, 32};
  c.tree_branching = {1, 2, 2, 4};
  c.loop_support = 4;
  c.surface_samples = 16;
  return c;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("editvae_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace editvae::testing
