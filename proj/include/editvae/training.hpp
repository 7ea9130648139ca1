#pragma once

#include "editvae/losses.hpp"
#include "editvae/networks.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace editvae {

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 1000;
  int batch_size = 30;
  int points_per_cloud = 2048;
  std::uint64_t seed = 0;
  LossWeights weights{};
  ModelConfig model{};
  double grad_clip_norm = 10.0;  // <= 0 disables clipping
  int checkpoint_every = 0;      // epochs; 0 disables the callback

  void validate() const {
    if (!(learning_rate > 0.0)) throw DomainError("learning rate must be positive");
    if (epochs < 0) throw DomainError("epochs must be non-negative");
    if (batch_size < 1) throw DomainError("batch size must be positive");
    if (points_per_cloud < 1) throw DomainError("points per cloud must be positive");
    weights.validate();
    model.validate();
  }
};

/// Adam moments per named parameter.
struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::map<std::string, Matrix> first_moment;
  std::map<std::string, Matrix> second_moment;
};

struct TrainLogRecord {
  int epoch = 0;
  std::int64_t step = 0;
  LossBreakdown loss;
};

namespace training {

inline std::string first_non_finite(const LossBreakdown& b) {
  if (!std::isfinite(b.l_point)) return "l_point";
  if (!std::isfinite(b.l_prim)) return "l_prim";
  if (!std::isfinite(b.l_overlap)) return "l_overlap";
  if (!std::isfinite(b.l_kl)) return "l_kl";
  if (!std::isfinite(b.total)) return "total";
  return {};
}

inline void adam_update(Model& model, OptimizerState& opt, double lr, double clip) {
  auto params = model.parameters();
  double sq_norm = 0.0;
  for (auto& [name, p] : params)
    if (p->has_grad()) sq_norm += p->grad().squaredNorm();
  const double norm = std::sqrt(sq_norm);
  if (!std::isfinite(norm)) throw NonFiniteError("non-finite gradient norm");
  const double factor = (clip > 0.0 && norm > clip) ? clip / norm : 1.0;

  ++opt.step;
  const double c1 = 1.0 - std::pow(opt.beta1, double(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, double(opt.step));
  for (auto& [name, p] : params) {
    Matrix& value = p->value();
    auto [m_it, m_new] = opt.first_moment.try_emplace(name, Matrix::Zero(value.rows(), value.cols()));
    auto [v_it, v_new] = opt.second_moment.try_emplace(name, Matrix::Zero(value.rows(), value.cols()));
    Matrix& m = m_it->second;
    Matrix& v = v_it->second;
    if (!p->has_grad()) continue;
    const Matrix g = p->grad() * factor;
    m = opt.beta1 * m + (1.0 - opt.beta1) * g;
    v = opt.beta2 * v + (1.0 - opt.beta2) * g.cwiseAbs2();
    value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opt.eps);
    if (!value.allFinite()) throw NonFiniteError("parameter " + name + " became non-finite");
  }
}

}  // namespace training

/// One Adam step on the batch-mean objective. Mutates model and optimizer.
inline LossBreakdown train_step(Model& model, OptimizerState& opt, std::span<const PointCloud> batch,
                                const TrainConfig& cfg, std::uint64_t step_seed) {
  if (batch.empty()) throw DomainError("train_step: empty batch");
  model.zero_grad();
  Matrix stacked = stack_clouds(batch);
  PosteriorVars post = model.encoder().forward(ad::Var::constant(stacked), batch.front().size(), Mode::train);
  LossVars loss = batch_loss(model, post.mu, post.logvar, batch, cfg.weights, step_seed);
  LossBreakdown values = loss.values();
  if (auto bad = training::first_non_finite(values); !bad.empty())
    throw NonFiniteError("non-finite loss term: " + bad);
  ad::backward(loss.total);
  training::adam_update(model, opt, cfg.learning_rate, cfg.grad_clip_norm);
  return values;
}

struct TrainCallbacks {
  std::function<void(const TrainLogRecord&)> on_step;
  std::function<void(const TrainLogRecord&)> on_epoch;
  std::function<void(int epoch, const Model&, const OptimizerState&)> on_checkpoint;
};

struct TrainResult {
  Model model;
  OptimizerState optimizer;
  std::vector<TrainLogRecord> log;  // one epoch-mean record per epoch
};

namespace training {
inline void accumulate(LossBreakdown& acc, const LossBreakdown& b, double w) {
  acc.l_point += w * b.l_point;
  acc.l_prim += w * b.l_prim;
  acc.l_overlap += w * b.l_overlap;
  acc.l_kl += w * b.l_kl;
  acc.total += w * b.total;
}
}  // namespace training

/// Seeded mini-batch training from a freshly initialized model.
inline TrainResult train(std::span<const PointCloud> dataset, const TrainConfig& cfg,
                         const TrainCallbacks& callbacks = {}) {
  cfg.validate();
  if (dataset.empty()) throw DomainError("train: empty dataset");
  TrainResult result{Model(cfg.model, cfg.seed), OptimizerState{}, {}};
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown epoch_mean;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
      std::vector<PointCloud> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);
      LossBreakdown b = train_step(result.model, result.optimizer, batch, cfg, rng());
      training::accumulate(epoch_mean, b, double(end - start) / double(order.size()));
      if (callbacks.on_step) callbacks.on_step({epoch, result.optimizer.step, b});
    }
    TrainLogRecord rec{epoch, result.optimizer.step, epoch_mean};
    result.log.push_back(rec);
    if (callbacks.on_epoch) callbacks.on_epoch(rec);
    if (callbacks.on_checkpoint && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
      callbacks.on_checkpoint(epoch, result.model, result.optimizer);
  }
  return result;
}

}  // namespace editvae
