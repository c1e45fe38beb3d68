#pragma once

#include "compctl/corpus/dataset.hpp"
#include "compctl/model/forward.hpp"

#include <algorithm>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace compctl::analysis {

using corpus::Example;

inline constexpr std::size_t kEvalBatch = 512;

/// Flattened token ids of the given examples, sequence-major.
inline std::vector<int> flatten_tokens(std::span<const Example> examples) {
  std::vector<int> tokens;
  tokens.reserve(examples.size() * corpus::kSeqLen);
  for (const Example& e : examples) tokens.insert(tokens.end(), e.tokens.begin(), e.tokens.end());
  return tokens;
}

/// Runs the model over `examples` in fixed-size batches and hands each batch
/// result to `sink(first_index, result)`. `mask_for`, when set, supplies the
/// attention mask for every example.
inline void for_each_batch(const model::ModelParams& params, std::span<const Example> examples,
                           const std::function<void(std::size_t, const model::BatchResult&)>& sink,
                           const std::function<model::MaskSpec(const Example&)>& mask_for = {}) {
  for (std::size_t start = 0; start < examples.size(); start += kEvalBatch) {
    const auto chunk = examples.subspan(start, std::min(kEvalBatch, examples.size() - start));
    std::vector<model::MaskSpec> masks;
    if (mask_for) {
      for (const Example& e : chunk) masks.push_back(mask_for(e));
    }
    sink(start, model::run_batch(params, flatten_tokens(chunk), std::move(masks)));
  }
}

inline std::vector<int> predict_all(const model::ModelParams& params, std::span<const Example> examples) {
  std::vector<int> out(examples.size());
  for_each_batch(params, examples, [&](std::size_t first, const model::BatchResult& r) {
    for (std::size_t i = 0; i < r.logits.rows(); ++i) out[first + i] = model::argmax(r.logits.row(i));
  });
  return out;
}

/// Fraction of examples whose prediction equals the target.
inline double accuracy(const model::ModelParams& params, std::span<const Example> examples) {
  if (examples.empty()) throw std::invalid_argument("accuracy: empty example set");
  const std::vector<int> pred = predict_all(params, examples);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) hits += pred[i] == examples[i].target ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

/// The same example with its two anchors swapped in place.
inline Example swap_anchors(const Example& e) {
  Example s = e;
  std::swap(s.tokens[static_cast<std::size_t>(e.pair_pos)], s.tokens[static_cast<std::size_t>(e.pair_pos + 1)]);
  return s;
}

/// Fraction of examples whose prediction is unchanged when the two anchors
/// are swapped; targets are not consulted.
inline double commutativity_probability(const model::ModelParams& params, std::span<const Example> examples) {
  if (examples.empty()) throw std::invalid_argument("commutativity_probability: empty example set");
  std::vector<Example> swapped;
  swapped.reserve(examples.size());
  for (const Example& e : examples) swapped.push_back(swap_anchors(e));
  const std::vector<int> a = predict_all(params, examples);
  const std::vector<int> b = predict_all(params, swapped);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) agree += a[i] == b[i] ? 1 : 0;
  return static_cast<double>(agree) / static_cast<double>(a.size());
}

/// The first `cap` examples (all of them if fewer).
inline std::span<const Example> capped(const std::vector<Example>& v, std::size_t cap) {
  return std::span<const Example>(v).first(std::min(cap, v.size()));
}

}  // namespace compctl::analysis
