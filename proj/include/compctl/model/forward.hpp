#pragma once

#include "compctl/model/params.hpp"
#include "compctl/numerics/ops.hpp"
#include "compctl/numerics/tape.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace compctl::model {

using MaskMode = ops::MaskMode;
using MaskSpec = ops::AttentionMask;

/// Tape handles for every parameter tensor, in ModelParams layout.
struct ParamVars {
  struct Layer {
    Var w_q, w_k, w_v, w_attn, ln_attn_gain, ln_attn_bias;
    Var ffn_in_weight, ffn_in_bias, ffn_out_weight, ffn_out_bias, ln_ffn_gain, ln_ffn_bias;
  };
  Var embedding, positional, head_weight, head_bias;
  std::vector<Layer> layers;
};

/// Records every parameter on `tape`. With `grads` non-null, gradients
/// accumulate into the matching tensor of `grads` (which must be zero-shaped
/// like `params`); with null, the parameters are treated as constants.
inline ParamVars bind_params(Tape& tape, const ModelParams& params, ModelParams* grads) {
  auto bind = [&](const Tensor& v, Tensor* g) { return tape.parameter(v, grads ? g : nullptr); };
  ParamVars pv;
  pv.embedding = bind(params.embedding, grads ? &grads->embedding : nullptr);
  pv.positional = bind(params.positional, grads ? &grads->positional : nullptr);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const LayerParams& L = params.layers[l];
    LayerParams* G = grads ? &grads->layers[l] : nullptr;
    pv.layers.push_back({bind(L.w_q, G ? &G->w_q : nullptr), bind(L.w_k, G ? &G->w_k : nullptr),
                         bind(L.w_v, G ? &G->w_v : nullptr), bind(L.w_attn, G ? &G->w_attn : nullptr),
                         bind(L.ln_attn_gain, G ? &G->ln_attn_gain : nullptr),
                         bind(L.ln_attn_bias, G ? &G->ln_attn_bias : nullptr),
                         bind(L.ffn_in_weight, G ? &G->ffn_in_weight : nullptr),
                         bind(L.ffn_in_bias, G ? &G->ffn_in_bias : nullptr),
                         bind(L.ffn_out_weight, G ? &G->ffn_out_weight : nullptr),
                         bind(L.ffn_out_bias, G ? &G->ffn_out_bias : nullptr),
                         bind(L.ln_ffn_gain, G ? &G->ln_ffn_gain : nullptr),
                         bind(L.ln_ffn_bias, G ? &G->ln_ffn_bias : nullptr)});
  }
  pv.head_weight = bind(params.head_weight, grads ? &grads->head_weight : nullptr);
  pv.head_bias = bind(params.head_bias, grads ? &grads->head_bias : nullptr);
  return pv;
}

struct GraphOptions {
  /// Empty: no masking. One entry: applied to every sequence. Otherwise one per
  /// sequence. Applied to the post-softmax attention of every layer.
  std::vector<MaskSpec> masks;
  /// Compute the last layer for the final position only (all the loss needs).
  bool last_only = false;
  /// Keep per-layer attention weights and activations.
  bool capture = false;
};

struct LayerCapture {
  Tensor attention;  // (batch * heads * queries) x seq, post-mask
  Var attn_out;      // X^{ao(l)}
  Var block_out;     // X^{do(l)}
};

struct GraphOutputs {
  Var logits;       // (batch * seq) x vocab, or batch x vocab with last_only
  Var last_hidden;  // batch x d_model: X^{do(L)} at the final position
  std::vector<LayerCapture> layers;
};

/// Post-LN decoder-only transformer:
///   X1 = X_em + X_pos
///   X_ao = LN(X + Attn(X) W_attn)
///   X_do = LN(MLP(X_ao) + X_ao)
///   logits = X_do(L) W_out + b_out
/// `tokens` holds `batch` sequences of config.seq_len ids, sequence-major.
inline GraphOutputs build_graph(Tape& tape, const ModelParams& params, const ParamVars& pv,
                                std::span<const int> tokens, const GraphOptions& opt) {
  const ModelConfig& cfg = params.config;
  const auto seq = static_cast<std::size_t>(cfg.seq_len);
  if (tokens.empty() || tokens.size() % seq != 0) {
    throw std::invalid_argument("build_graph: token count must be a multiple of seq_len");
  }
  const std::size_t batch = tokens.size() / seq;
  const ops::AttentionShape shape{batch, seq, static_cast<std::size_t>(cfg.n_heads)};

  GraphOutputs out;
  Var x = ops::embed(tape, pv.embedding, tokens);
  x = ops::add_positional(tape, x, pv.positional, seq);
  for (std::size_t l = 0; l < pv.layers.size(); ++l) {
    const ParamVars::Layer& L = pv.layers[l];
    const bool last_layer_trimmed = opt.last_only && l + 1 == pv.layers.size();
    const Var query_in = last_layer_trimmed ? ops::take_last(tape, x, seq) : x;
    const Var q = ops::linear(tape, query_in, L.w_q);
    const Var k = ops::linear(tape, x, L.w_k);
    const Var v = ops::linear(tape, x, L.w_v);
    LayerCapture cap;
    const Var mixed = ops::causal_attention(tape, q, k, v, shape, opt.masks, last_layer_trimmed,
                                            opt.capture ? &cap.attention : nullptr);
    const Var proj = ops::linear(tape, mixed, L.w_attn);
    const Var ao = ops::layer_norm(tape, ops::add(tape, query_in, proj), L.ln_attn_gain, L.ln_attn_bias);
    const Var hidden = ops::gelu(tape, ops::linear(tape, ao, L.ffn_in_weight, L.ffn_in_bias));
    const Var mlp = ops::linear(tape, hidden, L.ffn_out_weight, L.ffn_out_bias);
    x = ops::layer_norm(tape, ops::add(tape, mlp, ao), L.ln_ffn_gain, L.ln_ffn_bias);
    if (opt.capture) {
      cap.attn_out = ao;
      cap.block_out = x;
      out.layers.push_back(std::move(cap));
    }
  }
  out.last_hidden = opt.last_only ? x : ops::take_last(tape, x, seq);
  out.logits = ops::linear(tape, x, pv.head_weight, pv.head_bias);
  return out;
}

/// Everything recorded by one forward pass over a single sequence.
struct ForwardTrace {
  Tensor logits;                     // seq x vocab
  std::vector<Tensor> attention;     // per layer: (heads * seq) x seq, post-mask
  std::vector<Tensor> attn_out;      // per layer X^{ao(l)}: seq x d_model
  std::vector<Tensor> block_out;     // per layer X^{do(l)}: seq x d_model
  std::vector<double> last_hidden;   // X^{do(L)} at the final position
};

inline ForwardTrace forward(const ModelParams& params, std::span<const int> tokens,
                            std::optional<MaskSpec> mask = std::nullopt) {
  if (tokens.size() != static_cast<std::size_t>(params.config.seq_len)) {
    throw std::invalid_argument("forward: expected one sequence of seq_len tokens");
  }
  Tape tape;
  const ParamVars pv = bind_params(tape, params, nullptr);
  GraphOptions opt;
  if (mask) opt.masks.push_back(*mask);
  opt.capture = true;
  const GraphOutputs g = build_graph(tape, params, pv, tokens, opt);
  ForwardTrace tr;
  tr.logits = tape.value(g.logits);
  for (const LayerCapture& c : g.layers) {
    tr.attention.push_back(c.attention);
    tr.attn_out.push_back(tape.value(c.attn_out));
    tr.block_out.push_back(tape.value(c.block_out));
  }
  const auto h = tape.value(g.last_hidden).row(0);
  tr.last_hidden.assign(h.begin(), h.end());
  return tr;
}

/// Index of the largest entry; ties go to the lowest index.
inline int argmax(std::span<const double> row) {
  if (row.empty()) throw std::invalid_argument("argmax: empty row");
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return static_cast<int>(best);
}

/// Final-position logits and hidden states for many sequences at once.
struct BatchResult {
  Tensor logits;  // batch x vocab
  Tensor hidden;  // batch x d_model
};

inline BatchResult run_batch(const ModelParams& params, std::span<const int> tokens,
                             std::vector<MaskSpec> masks = {}) {
  Tape tape;
  const ParamVars pv = bind_params(tape, params, nullptr);
  GraphOptions opt;
  opt.masks = std::move(masks);
  opt.last_only = true;
  const GraphOutputs g = build_graph(tape, params, pv, tokens, opt);
  return {tape.value(g.logits), tape.value(g.last_hidden)};
}

inline int predict(const ModelParams& params, std::span<const int> tokens) {
  const BatchResult r = run_batch(params, tokens);
  return argmax(r.logits.row(0));
}

}  // namespace compctl::model
