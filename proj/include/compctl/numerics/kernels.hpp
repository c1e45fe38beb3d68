#pragma once

#include "compctl/numerics/tensor.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace compctl {

/// In-place softmax with max subtraction. Entries equal to -inf get weight 0;
/// a row that is entirely -inf is left as all zeros.
inline void softmax_inplace(std::span<double> row) noexcept {
  double max = -std::numeric_limits<double>::infinity();
  for (double v : row) max = v > max ? v : max;
  if (max == -std::numeric_limits<double>::infinity()) {
    for (double& v : row) v = 0.0;
    return;
  }
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v - max);
    sum += v;
  }
  const double inv = 1.0 / sum;
  for (double& v : row) v *= inv;
}

inline Tensor softmax_rows(Tensor m) {
  for (std::size_t r = 0; r < m.rows(); ++r) softmax_inplace(m.row(r));
  return m;
}

/// log-sum-exp of a row, stable for large magnitudes.
inline double log_sum_exp(std::span<const double> row) noexcept {
  double max = -std::numeric_limits<double>::infinity();
  for (double v : row) max = v > max ? v : max;
  if (!std::isfinite(max)) return max;
  double sum = 0.0;
  for (double v : row) sum += std::exp(v - max);
  return max + std::log(sum);
}

struct LayerNormStats {
  double mean = 0.0;
  double inv_std = 0.0;
};

/// out = gain * (x - mean) / sqrt(var + eps) + bias with the population variance.
inline LayerNormStats layer_norm_row(std::span<const double> x, std::span<const double> gain,
                                     std::span<const double> bias, double eps,
                                     std::span<double> out) noexcept {
  const auto n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv_std = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = gain[i] * ((x[i] - mean) * inv_std) + bias[i];
  }
  return {mean, inv_std};
}

inline std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gain,
                                      std::span<const double> bias, double eps = 1e-5) {
  if (x.size() < 2) throw std::invalid_argument("layer_norm: dimension must be >= 2");
  if (gain.size() != x.size() || bias.size() != x.size()) {
    throw std::invalid_argument("layer_norm: gain/bias size mismatch");
  }
  std::vector<double> out(x.size());
  layer_norm_row(x, gain, bias, eps, out);
  return out;
}

namespace detail {
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;
}  // namespace detail

/// GELU, tanh approximation.
inline double gelu(double x) noexcept {
  const double inner = detail::kGeluC * (x + detail::kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(inner));
}

inline double gelu_derivative(double x) noexcept {
  const double inner = detail::kGeluC * (x + detail::kGeluA * x * x * x);
  const double t = std::tanh(inner);
  const double dinner = detail::kGeluC * (1.0 + 3.0 * detail::kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

/// -log softmax(logits[last])[target]; only the final row is read.
inline double cross_entropy_last(const Tensor& logits, std::size_t target) {
  if (logits.rows() == 0) throw std::invalid_argument("cross_entropy_last: empty logits");
  const auto last = logits.row(logits.rows() - 1);
  if (target >= last.size()) throw std::out_of_range("cross_entropy_last: target out of range");
  const double lse = log_sum_exp(last);
  if (std::isinf(last[target]) && last[target] > 0) return 0.0;
  return lse - last[target];
}

}  // namespace compctl
