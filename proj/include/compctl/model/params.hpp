#pragma once

#include "compctl/corpus/vocabulary.hpp"
#include "compctl/numerics/rng.hpp"
#include "compctl/numerics/tensor.hpp"

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace compctl::model {

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 1;
  int d_model = 128;
  int d_ffn = 512;
  int vocab_size = corpus::kVocabSize;
  int seq_len = corpus::kSeqLen;
  /// gamma: weights are drawn from N(0, d_in^(-2 gamma)).
  double init_rate = 0.5;

  [[nodiscard]] int d_k() const noexcept { return n_heads > 0 ? d_model / n_heads : 0; }

  void validate() const {
    if (n_layers < 1 || n_heads < 1 || d_model < 2 || d_ffn < 1) {
      throw std::invalid_argument("ModelConfig: layer, head and width counts must be positive");
    }
    if (d_model % n_heads != 0) throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
    if (vocab_size < 1 || seq_len < 1) throw std::invalid_argument("ModelConfig: bad vocab/sequence size");
    if (!(init_rate > 0.0)) throw std::invalid_argument("ModelConfig: init_rate must be positive");
  }

  bool operator==(const ModelConfig&) const = default;

  /// 2 layers, 1 head: the configuration used for mechanism analyses.
  static ModelConfig small(double gamma) { return {2, 1, 128, 512, corpus::kVocabSize, corpus::kSeqLen, gamma}; }
  /// 10 layers, 10 heads: the sweep architecture.
  static ModelConfig sweep(double gamma) { return {10, 10, 200, 800, corpus::kVocabSize, corpus::kSeqLen, gamma}; }
};

enum class TensorRole {
  kWeight,      ///< gamma-initialised, weight-decayed
  kPositional,  ///< gamma-initialised, not decayed
  kBias,        ///< zero-initialised, not decayed
  kNormGain,    ///< one-initialised, not decayed
  kNormBias,    ///< zero-initialised, not decayed
};

struct LayerParams {
  // Attention weights are stored output-major (out x in), so row i of w_q is
  // the input weight vector of query neuron i. Heads are stacked along rows.
  Tensor w_q, w_k, w_v, w_attn;
  Tensor ln_attn_gain, ln_attn_bias;
  Tensor ffn_in_weight, ffn_in_bias;
  Tensor ffn_out_weight, ffn_out_bias;
  Tensor ln_ffn_gain, ln_ffn_bias;

  bool operator==(const LayerParams&) const = default;
};

struct TensorSlot {
  std::string name;
  TensorRole role;
  std::size_t fan_in;  // input dimension used by the initialiser
};

/// Every trainable tensor of the decoder-only transformer.
struct ModelParams {
  ModelConfig config;
  Tensor embedding;   // vocab x d_model; row t is token t's embedding
  Tensor positional;  // seq_len x d_model
  std::vector<LayerParams> layers;
  Tensor head_weight;  // vocab x d_model
  Tensor head_bias;    // vocab

  bool operator==(const ModelParams&) const = default;

  /// Visits (slot, tensor) in the canonical order used by checkpoints.
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    const auto d = static_cast<std::size_t>(self.config.d_model);
    const auto ffn = static_cast<std::size_t>(self.config.d_ffn);
    const auto vocab = static_cast<std::size_t>(self.config.vocab_size);
    f(TensorSlot{"embedding", TensorRole::kWeight, vocab}, self.embedding);
    f(TensorSlot{"positional", TensorRole::kPositional, d}, self.positional);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      f(TensorSlot{p + "w_q", TensorRole::kWeight, d}, L.w_q);
      f(TensorSlot{p + "w_k", TensorRole::kWeight, d}, L.w_k);
      f(TensorSlot{p + "w_v", TensorRole::kWeight, d}, L.w_v);
      f(TensorSlot{p + "w_attn", TensorRole::kWeight, d}, L.w_attn);
      f(TensorSlot{p + "ln_attn.gain", TensorRole::kNormGain, d}, L.ln_attn_gain);
      f(TensorSlot{p + "ln_attn.bias", TensorRole::kNormBias, d}, L.ln_attn_bias);
      f(TensorSlot{p + "ffn_in.weight", TensorRole::kWeight, d}, L.ffn_in_weight);
      f(TensorSlot{p + "ffn_in.bias", TensorRole::kBias, d}, L.ffn_in_bias);
      f(TensorSlot{p + "ffn_out.weight", TensorRole::kWeight, ffn}, L.ffn_out_weight);
      f(TensorSlot{p + "ffn_out.bias", TensorRole::kBias, ffn}, L.ffn_out_bias);
      f(TensorSlot{p + "ln_ffn.gain", TensorRole::kNormGain, d}, L.ln_ffn_gain);
      f(TensorSlot{p + "ln_ffn.bias", TensorRole::kNormBias, d}, L.ln_ffn_bias);
    }
    f(TensorSlot{"head.weight", TensorRole::kWeight, d}, self.head_weight);
    f(TensorSlot{"head.bias", TensorRole::kBias, d}, self.head_bias);
  }

  template <class F>
  void for_each(F&& f) {
    visit(*this, std::forward<F>(f));
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, std::forward<F>(f));
  }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const TensorSlot&, const Tensor& t) { n += t.size(); });
    return n;
  }
};

/// Correctly shaped parameters with every entry zero.
inline ModelParams zero_params(const ModelConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto f = static_cast<std::size_t>(cfg.d_ffn);
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  ModelParams p;
  p.config = cfg;
  p.embedding = Tensor::matrix(v, d);
  p.positional = Tensor::matrix(static_cast<std::size_t>(cfg.seq_len), d);
  p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (LayerParams& L : p.layers) {
    L.w_q = Tensor::matrix(d, d);
    L.w_k = Tensor::matrix(d, d);
    L.w_v = Tensor::matrix(d, d);
    L.w_attn = Tensor::matrix(d, d);
    L.ln_attn_gain = Tensor::vector(d);
    L.ln_attn_bias = Tensor::vector(d);
    L.ffn_in_weight = Tensor::matrix(f, d);
    L.ffn_in_bias = Tensor::vector(f);
    L.ffn_out_weight = Tensor::matrix(d, f);
    L.ffn_out_bias = Tensor::vector(d);
    L.ln_ffn_gain = Tensor::vector(d);
    L.ln_ffn_bias = Tensor::vector(d);
  }
  p.head_weight = Tensor::matrix(v, d);
  p.head_bias = Tensor::vector(v);
  return p;
}

inline double init_std(std::size_t fan_in, double gamma) {
  return std::pow(static_cast<double>(fan_in), -gamma);
}

/// Weight matrices and the positional table ~ N(0, fan_in^(-2 gamma)); biases
/// and norm shifts 0; norm gains 1. Each tensor draws from its own stream
/// split off `rng` by tensor name.
inline ModelParams init_params(const ModelConfig& cfg, const RngStream& rng) {
  ModelParams p = zero_params(cfg);
  p.for_each([&](const TensorSlot& slot, Tensor& t) {
    switch (slot.role) {
      case TensorRole::kWeight:
      case TensorRole::kPositional: {
        RngStream s = rng.split(slot.name);
        const double sd = init_std(slot.fan_in, cfg.init_rate);
        for (double& v : t.data()) v = sd * s.normal();
        break;
      }
      case TensorRole::kNormGain: t.fill(1.0); break;
      case TensorRole::kBias:
      case TensorRole::kNormBias: t.fill(0.0); break;
    }
  });
  return p;
}

}  // namespace compctl::model
