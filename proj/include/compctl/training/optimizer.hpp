#pragma once

#include "compctl/model/params.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

namespace compctl::training {

using model::ModelParams;

struct TrainConfig {
  double weight_decay = 0.01;
  double base_lr = 1e-4;
  int warmup_epochs = 10;
  double multiplier = 15.0;
  int cosine_epochs = 200;
  double min_lr = 1e-5;
  int epochs = 210;
  std::size_t batch_size = 2048;
  double grad_clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t master_seed = 0;
  int eval_every = 1;
  /// Evaluation uses at most this many examples per split.
  std::size_t eval_cap = 10000;
  /// 0: only the final checkpoint.
  int checkpoint_every = 0;
  /// Sequences per gradient chunk; also the unit of parallel work.
  std::size_t chunk_size = 256;
  int threads = 1;

  [[nodiscard]] double peak_lr() const noexcept { return multiplier * base_lr; }

  void validate() const {
    auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
    if (!positive(base_lr) || !positive(multiplier) || !positive(min_lr) || !positive(grad_clip_norm) ||
        !positive(eps)) {
      throw std::invalid_argument("TrainConfig: learning rates, clip norm and eps must be positive");
    }
    if (weight_decay < 0.0 || !std::isfinite(weight_decay)) {
      throw std::invalid_argument("TrainConfig: weight_decay must be non-negative");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("TrainConfig: betas must lie in [0, 1)");
    }
    if (warmup_epochs < 0 || cosine_epochs < 0 || epochs < 0) {
      throw std::invalid_argument("TrainConfig: epoch counts must be non-negative");
    }
    if (batch_size == 0 || chunk_size == 0 || eval_every < 1 || eval_cap == 0 || checkpoint_every < 0 ||
        threads < 1) {
      throw std::invalid_argument("TrainConfig: batch, chunk, eval and thread settings must be positive");
    }
  }
};

/// Linear ramp base -> peak over the warmup, cosine peak -> min_lr over
/// cosine_epochs, then min_lr.
inline double lr_at(double epoch, const TrainConfig& cfg) {
  if (epoch < 0.0) throw std::invalid_argument("lr_at: negative epoch");
  const double peak = cfg.peak_lr();
  if (epoch < cfg.warmup_epochs) {
    return cfg.base_lr + (peak - cfg.base_lr) * epoch / cfg.warmup_epochs;
  }
  const double t = epoch - cfg.warmup_epochs;
  if (t >= cfg.cosine_epochs) return cfg.min_lr;
  return cfg.min_lr + 0.5 * (peak - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * t / cfg.cosine_epochs));
}

inline double global_norm(const ModelParams& grads) {
  double sq = 0.0;
  grads.for_each([&](const model::TensorSlot&, const Tensor& g) { sq += g.squared_norm(); });
  return std::sqrt(sq);
}

/// Scales every gradient by max_norm / g when the global L2 norm g exceeds
/// max_norm. Returns the pre-clip norm.
inline double clip_gradients(ModelParams& grads, double max_norm) {
  const double g = global_norm(grads);
  if (g > max_norm) {
    const double s = max_norm / g;
    grads.for_each([&](const model::TensorSlot&, Tensor& t) { t *= s; });
  }
  return g;
}

struct OptimizerState {
  ModelParams m;
  ModelParams v;
  std::int64_t step = 0;

  static OptimizerState zeros_like(const ModelParams& p) {
    return {model::zero_params(p.config), model::zero_params(p.config), 0};
  }
};

/// Decoupled weight decay is applied to TensorRole::kWeight tensors only.
inline void adamw_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, double lr,
                       const TrainConfig& cfg) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  std::vector<Tensor*> ps, ms, vs;
  std::vector<const Tensor*> gs;
  std::vector<bool> decay;
  params.for_each([&](const model::TensorSlot& s, Tensor& t) {
    ps.push_back(&t);
    decay.push_back(s.role == model::TensorRole::kWeight);
  });
  grads.for_each([&](const model::TensorSlot&, const Tensor& t) { gs.push_back(&t); });
  state.m.for_each([&](const model::TensorSlot&, Tensor& t) { ms.push_back(&t); });
  state.v.for_each([&](const model::TensorSlot&, Tensor& t) { vs.push_back(&t); });
  if (gs.size() != ps.size() || ms.size() != ps.size() || vs.size() != ps.size()) {
    throw std::invalid_argument("adamw_step: parameter structure mismatch");
  }

  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!gs[i]->same_shape(*ps[i]) || !ms[i]->same_shape(*ps[i]) || !vs[i]->same_shape(*ps[i])) {
      throw std::invalid_argument("adamw_step: tensor shape mismatch");
    }
    double* w = ps[i]->raw();
    const double* g = gs[i]->raw();
    double* m = ms[i]->raw();
    double* v = vs[i]->raw();
    const double wd = decay[i] ? cfg.weight_decay : 0.0;
    for (std::size_t j = 0, n = ps[i]->size(); j < n; ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      w[j] = w[j] - lr * mh / (std::sqrt(vh) + cfg.eps) - lr * wd * w[j];
    }
  }
}

enum class ThresholdKind { kLoss, kPairAccuracy };

/// Index of the first entry crossing θ (loss: <= θ, accuracy: >= θ), or
/// nullopt when none does.
inline std::optional<std::size_t> epochs_to_threshold(const std::vector<double>& history, ThresholdKind kind,
                                                      double theta) {
  for (std::size_t i = 0; i < history.size(); ++i) {
    const double h = history[i];
    if (std::isnan(h)) continue;
    if (kind == ThresholdKind::kLoss ? h <= theta : h >= theta) return i;
  }
  return std::nullopt;
}

}  // namespace compctl::training
