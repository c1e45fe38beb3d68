#pragma once

#include "compctl/numerics/kernels.hpp"
#include "compctl/numerics/tape.hpp"
#include "compctl/numerics/tensor.hpp"

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

// Differentiable primitives used by the transformer. Activations are stored as
// matrices whose rows are (sequence, position) pairs, sequence-major.
namespace compctl::ops {

/// How a masked key position is removed from post-softmax attention.
enum class MaskMode {
  kPreserve,  ///< zero the column after softmax, keep the remaining weights as they are
  kExclude,   ///< drop the column from the softmax, so the remaining weights renormalise
};

/// Removes every attention edge that reads `position` from another query position.
/// The masked position's attention to itself is kept.
struct AttentionMask {
  std::size_t position = 0;
  MaskMode mode = MaskMode::kPreserve;
};

struct AttentionShape {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t heads = 1;
};

namespace detail {
inline void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}
inline bool any_grad(const Tape& t, std::initializer_list<Var> vs) {
  for (Var v : vs) {
    if (v.valid() && t.requires_grad(v)) return true;
  }
  return false;
}
}  // namespace detail

/// y = x w^T (+ b). `w` is stored output-major: (out x in).
inline Var linear(Tape& tape, Var x, Var w, Var b = {}) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  detail::require(xv.cols() == wv.cols(), "linear: inner dimension mismatch");
  Tensor y = Tensor::matrix(xv.rows(), wv.rows());
  y.mat().noalias() = xv.mat() * wv.mat().transpose();
  if (b.valid()) {
    const Tensor& bv = tape.value(b);
    detail::require(bv.size() == wv.rows(), "linear: bias size mismatch");
    y.mat().rowwise() += bv.mat().row(0);
  }
  if (!detail::any_grad(tape, {x, w, b})) return tape.record(std::move(y), nullptr);
  return tape.record(std::move(y), [x, w, b](Tape& t, const Tensor& gy) {
    if (t.requires_grad(x)) t.grad(x).mat().noalias() += gy.mat() * t.value(w).mat();
    if (t.requires_grad(w)) t.grad(w).mat().noalias() += gy.mat().transpose() * t.value(x).mat();
    if (b.valid() && t.requires_grad(b)) t.grad(b).mat().row(0) += gy.mat().colwise().sum();
  });
}

inline Var add(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  detail::require(av.same_shape(bv), "add: shape mismatch");
  Tensor y = av;
  y += bv;
  if (!detail::any_grad(tape, {a, b})) return tape.record(std::move(y), nullptr);
  return tape.record(std::move(y), [a, b](Tape& t, const Tensor& gy) {
    if (t.requires_grad(a)) t.grad(a) += gy;
    if (t.requires_grad(b)) t.grad(b) += gy;
  });
}

/// Rows of `table` selected by `ids`.
inline Var embed(Tape& tape, Var table, std::span<const int> ids) {
  const Tensor& tv = tape.value(table);
  const std::size_t d = tv.cols();
  Tensor y = Tensor::matrix(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail::require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < tv.rows(),
                    "embed: id out of range");
    const auto src = tv.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), y.row(i).begin());
  }
  if (!tape.requires_grad(table)) return tape.record(std::move(y), nullptr);
  std::vector<int> saved(ids.begin(), ids.end());
  return tape.record(std::move(y), [table, saved = std::move(saved)](Tape& t, const Tensor& gy) {
    Tensor& gt = t.grad(table);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      auto dst = gt.row(static_cast<std::size_t>(saved[i]));
      const auto src = gy.row(i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  });
}

/// x[i] + pos[i mod period], i.e. a per-position table broadcast over sequences.
inline Var add_positional(Tape& tape, Var x, Var pos, std::size_t period) {
  const Tensor& xv = tape.value(x);
  const Tensor& pv = tape.value(pos);
  detail::require(pv.rows() == period && pv.cols() == xv.cols() && xv.rows() % period == 0,
                  "add_positional: shape mismatch");
  Tensor y = xv;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto dst = y.row(i);
    const auto src = pv.row(i % period);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
  }
  if (!detail::any_grad(tape, {x, pos})) return tape.record(std::move(y), nullptr);
  return tape.record(std::move(y), [x, pos, period](Tape& t, const Tensor& gy) {
    if (t.requires_grad(x)) t.grad(x) += gy;
    if (t.requires_grad(pos)) {
      Tensor& gp = t.grad(pos);
      for (std::size_t i = 0; i < gy.rows(); ++i) {
        auto dst = gp.row(i % period);
        const auto src = gy.row(i);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
      }
    }
  });
}

/// Row-wise layer normalisation with population variance.
inline Var layer_norm(Tape& tape, Var x, Var gain, Var bias, double eps = 1e-5) {
  const Tensor& xv = tape.value(x);
  const Tensor& gv = tape.value(gain);
  const Tensor& bv = tape.value(bias);
  const std::size_t d = xv.cols();
  detail::require(gv.size() == d && bv.size() == d, "layer_norm: gain/bias size mismatch");
  Tensor y = Tensor::matrix(xv.rows(), d);
  auto xhat = std::make_shared<Tensor>(Tensor::matrix(xv.rows(), d));
  auto inv_std = std::make_shared<std::vector<double>>(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const LayerNormStats s = layer_norm_row(xv.row(r), gv.data(), bv.data(), eps, y.row(r));
    (*inv_std)[r] = s.inv_std;
    auto xr = xv.row(r);
    auto hr = xhat->row(r);
    for (std::size_t c = 0; c < d; ++c) hr[c] = (xr[c] - s.mean) * s.inv_std;
  }
  if (!detail::any_grad(tape, {x, gain, bias})) return tape.record(std::move(y), nullptr);
  return tape.record(std::move(y), [x, gain, bias, xhat, inv_std](Tape& t, const Tensor& gy) {
    const std::size_t d = gy.cols();
    const auto n = static_cast<double>(d);
    const Tensor& g = t.value(gain);
    if (t.requires_grad(bias)) t.grad(bias).mat().row(0) += gy.mat().colwise().sum();
    if (t.requires_grad(gain)) {
      t.grad(gain).mat().row(0) += gy.mat().cwiseProduct(xhat->mat()).colwise().sum();
    }
    if (!t.requires_grad(x)) return;
    Tensor& gx = t.grad(x);
    std::vector<double> dxhat(d);
    for (std::size_t r = 0; r < gy.rows(); ++r) {
      const auto gr = gy.row(r);
      const auto hr = xhat->row(r);
      double mean_d = 0.0;
      double mean_dh = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        dxhat[c] = gr[c] * g[c];
        mean_d += dxhat[c];
        mean_dh += dxhat[c] * hr[c];
      }
      mean_d /= n;
      mean_dh /= n;
      auto out = gx.row(r);
      const double s = (*inv_std)[r];
      for (std::size_t c = 0; c < d; ++c) out[c] += s * (dxhat[c] - mean_d - hr[c] * mean_dh);
    }
  });
}

/// Tanh-form GELU. tanh(u) is evaluated as 1 - 2 / (exp(2u) + 1) on whole
/// arrays (absolute error below 1e-15), and kept for the backward pass.
inline Var gelu(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  const auto xa = Eigen::Map<const Eigen::ArrayXd>(xv.raw(), static_cast<Eigen::Index>(xv.size()));
  auto th = std::make_shared<Eigen::ArrayXd>(
      1.0 - 2.0 / ((2.0 * compctl::detail::kGeluC * (xa + compctl::detail::kGeluA * xa.cube())).exp() + 1.0));
  Tensor y(xv.shape());
  Eigen::Map<Eigen::ArrayXd>(y.raw(), static_cast<Eigen::Index>(y.size())) = 0.5 * xa * (1.0 + *th);
  if (!tape.requires_grad(x)) return tape.record(std::move(y), nullptr);
  return tape.record(std::move(y), [x, th](Tape& t, const Tensor& gy) {
    const Tensor& xv = t.value(x);
    Tensor& gx = t.grad(x);
    const auto n = static_cast<Eigen::Index>(gy.size());
    const auto xa = Eigen::Map<const Eigen::ArrayXd>(xv.raw(), n);
    const auto ga = Eigen::Map<const Eigen::ArrayXd>(gy.raw(), n);
    Eigen::Map<Eigen::ArrayXd>(gx.raw(), n) +=
        ga * (0.5 * (1.0 + *th) +
              0.5 * xa * (1.0 - th->square()) * compctl::detail::kGeluC * (1.0 + 3.0 * compctl::detail::kGeluA * xa.square()));
  });
}

/// Row (s * seq + seq - 1) of every sequence s.
inline Var take_last(Tape& tape, Var x, std::size_t seq) {
  const Tensor& xv = tape.value(x);
  detail::require(seq > 0 && xv.rows() % seq == 0, "take_last: rows not a multiple of seq");
  const std::size_t batch = xv.rows() / seq;
  Tensor y = Tensor::matrix(batch, xv.cols());
  for (std::size_t b = 0; b < batch; ++b) {
    const auto src = xv.row(b * seq + seq - 1);
    std::copy(src.begin(), src.end(), y.row(b).begin());
  }
  if (!tape.requires_grad(x)) return tape.record(std::move(y), nullptr);
  return tape.record(std::move(y), [x, seq](Tape& t, const Tensor& gy) {
    Tensor& gx = t.grad(x);
    for (std::size_t b = 0; b < gy.rows(); ++b) {
      auto dst = gx.row(b * seq + seq - 1);
      const auto src = gy.row(b);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  });
}

inline Var sum(Tape& tape, Var x) {
  double s = 0.0;
  for (double v : tape.value(x).data()) s += v;
  Tensor y = Tensor::matrix(1, 1, s);
  if (!tape.requires_grad(x)) return tape.record(std::move(y), nullptr);
  return tape.record(std::move(y), [x](Tape& t, const Tensor& gy) {
    Tensor& gx = t.grad(x);
    for (double& v : gx.data()) v += gy[0];
  });
}

/// scale * sum_i -log softmax(logits[i])[targets[i]], as a 1x1 value.
/// `row_losses`, when given, receives the unscaled per-row losses.
inline Var cross_entropy(Tape& tape, Var logits, std::span<const int> targets, double scale,
                         std::vector<double>* row_losses = nullptr) {
  const Tensor& lv = tape.value(logits);
  detail::require(lv.rows() == targets.size(), "cross_entropy: one target per row required");
  auto probs = std::make_shared<Tensor>(lv);
  double total = 0.0;
  if (row_losses) row_losses->assign(lv.rows(), 0.0);
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    const auto t = static_cast<std::size_t>(targets[r]);
    detail::require(targets[r] >= 0 && t < lv.cols(), "cross_entropy: target out of range");
    const double loss = log_sum_exp(lv.row(r)) - lv.at(r, t);
    if (row_losses) (*row_losses)[r] = loss;
    total += loss;
    softmax_inplace(probs->row(r));
  }
  Tensor y = Tensor::matrix(1, 1, scale * total);
  if (!tape.requires_grad(logits)) return tape.record(std::move(y), nullptr);
  std::vector<int> saved(targets.begin(), targets.end());
  return tape.record(std::move(y), [logits, probs, saved = std::move(saved), scale](
                                       Tape& t, const Tensor& gy) {
    Tensor& gl = t.grad(logits);
    const double s = scale * gy[0];
    for (std::size_t r = 0; r < probs->rows(); ++r) {
      auto dst = gl.row(r);
      const auto p = probs->row(r);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += s * p[c];
      dst[static_cast<std::size_t>(saved[r])] -= s;
    }
  });
}

/// Causal multi-head scaled dot-product attention.
///
/// `k` and `v` hold batch*seq rows. `q` holds batch*seq rows, or batch rows
/// when `last_query_only` is set (then only the final position attends).
/// `masks` is empty (no masking), a single mask applied to every sequence,
/// or one mask per sequence.
/// Head h uses columns [h*dk, (h+1)*dk). If `probs_out` is non-null it
/// receives the post-mask attention weights, one row per (sequence, head,
/// query position), each of width seq.
inline Var causal_attention(Tape& tape, Var q, Var k, Var v, AttentionShape shape,
                            std::span<const AttentionMask> masks, bool last_query_only,
                            Tensor* probs_out = nullptr) {
  const Tensor& qv = tape.value(q);
  const Tensor& kv = tape.value(k);
  const Tensor& vv = tape.value(v);
  const std::size_t seq = shape.seq;
  const std::size_t batch = shape.batch;
  const std::size_t heads = shape.heads;
  const std::size_t d = kv.cols();
  const std::size_t nq = last_query_only ? 1 : seq;
  detail::require(heads > 0 && d % heads == 0, "attention: d_model not divisible by heads");
  detail::require(kv.rows() == batch * seq && vv.rows() == batch * seq && vv.cols() == d,
                  "attention: key/value shape mismatch");
  detail::require(qv.rows() == batch * nq && qv.cols() == d, "attention: query shape mismatch");
  detail::require(masks.size() <= 1 || masks.size() == batch, "attention: need one mask per sequence");
  for (const AttentionMask& m : masks) {
    detail::require(m.position < seq, "attention: mask position out of range");
  }
  const std::size_t dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  // raw: softmax before any post-softmax masking; used: weights applied to V.
  auto raw = std::make_shared<Tensor>(Tensor::matrix(batch * heads * nq, seq));
  auto used = std::make_shared<Tensor>(Tensor::matrix(batch * heads * nq, seq));
  Tensor y = Tensor::matrix(batch * nq, d);

  for (std::size_t b = 0; b < batch; ++b) {
    const AttentionMask* mask =
        masks.empty() ? nullptr : (masks.size() == 1 ? &masks[0] : &masks[b]);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dk;
      for (std::size_t i = 0; i < nq; ++i) {
        const std::size_t pos = last_query_only ? seq - 1 : i;
        const std::size_t prow = (b * heads + h) * nq + i;
        const double* qr = qv.raw() + (b * nq + i) * d + off;
        auto pr = raw->row(prow);
        for (std::size_t r = 0; r < seq; ++r) {
          const bool excluded = r > pos || (mask && mask->mode == MaskMode::kExclude &&
                                            r == mask->position && pos != mask->position);
          if (excluded) {
            pr[r] = kNegInf;
            continue;
          }
          const double* kr = kv.raw() + (b * seq + r) * d + off;
          double dot = 0.0;
          for (std::size_t c = 0; c < dk; ++c) dot += qr[c] * kr[c];
          pr[r] = dot * scale;
        }
        softmax_inplace(pr);
        auto ur = used->row(prow);
        std::copy(pr.begin(), pr.end(), ur.begin());
        if (mask && mask->mode == MaskMode::kPreserve && pos != mask->position) {
          ur[mask->position] = 0.0;
        }
        double* yr = y.raw() + (b * nq + i) * d + off;
        for (std::size_t r = 0; r <= pos; ++r) {
          const double w = ur[r];
          if (w == 0.0) continue;
          const double* vr = vv.raw() + (b * seq + r) * d + off;
          for (std::size_t c = 0; c < dk; ++c) yr[c] += w * vr[c];
        }
      }
    }
  }
  if (probs_out != nullptr) *probs_out = *used;
  if (!detail::any_grad(tape, {q, k, v})) return tape.record(std::move(y), nullptr);

  return tape.record(std::move(y), [=](Tape& t, const Tensor& gy) {
    const Tensor& qv = t.value(q);
    const Tensor& kv = t.value(k);
    const Tensor& vv = t.value(v);
    const bool gq = t.requires_grad(q);
    const bool gk = t.requires_grad(k);
    const bool gv = t.requires_grad(v);
    double* dq = gq ? t.grad(q).raw() : nullptr;
    double* dkey = gk ? t.grad(k).raw() : nullptr;
    double* dval = gv ? t.grad(v).raw() : nullptr;
    std::vector<double> dp(seq);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dk;
        for (std::size_t i = 0; i < nq; ++i) {
          const std::size_t pos = last_query_only ? seq - 1 : i;
          const std::size_t prow = (b * heads + h) * nq + i;
          const auto pr = raw->row(prow);
          const auto ur = used->row(prow);
          const double* gyr = gy.raw() + (b * nq + i) * d + off;
          for (std::size_t r = 0; r <= pos; ++r) {
            const double* vr = vv.raw() + (b * seq + r) * d + off;
            double dot = 0.0;
            for (std::size_t c = 0; c < dk; ++c) dot += gyr[c] * vr[c];
            // weights zeroed after softmax pass no gradient to the scores
            dp[r] = (ur[r] == 0.0 && pr[r] != 0.0) ? 0.0 : dot;
            if (dval != nullptr && ur[r] != 0.0) {
              double* dvr = dval + (b * seq + r) * d + off;
              for (std::size_t c = 0; c < dk; ++c) dvr[c] += ur[r] * gyr[c];
            }
          }
          double inner = 0.0;
          for (std::size_t r = 0; r <= pos; ++r) inner += pr[r] * dp[r];
          const double* qr = qv.raw() + (b * nq + i) * d + off;
          double* dqr = dq != nullptr ? dq + (b * nq + i) * d + off : nullptr;
          for (std::size_t r = 0; r <= pos; ++r) {
            const double ds = pr[r] * (dp[r] - inner) * scale;
            if (ds == 0.0) continue;
            const double* kr = kv.raw() + (b * seq + r) * d + off;
            if (dqr != nullptr) {
              for (std::size_t c = 0; c < dk; ++c) dqr[c] += ds * kr[c];
            }
            if (dkey != nullptr) {
              double* dkr = dkey + (b * seq + r) * d + off;
              for (std::size_t c = 0; c < dk; ++c) dkr[c] += ds * qr[c];
            }
          }
        }
      }
    }
  });
}

}  // namespace compctl::ops
