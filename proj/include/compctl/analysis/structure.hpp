#pragma once

#include "compctl/corpus/vocabulary.hpp"
#include "compctl/model/params.hpp"
#include "compctl/numerics/linalg.hpp"

#include <optional>
#include <stdexcept>
#include <vector>

namespace compctl::analysis {

/// All heads' first-layer query weights as one d_model x d_model matrix.
/// Heads are already stacked along the output axis in storage, so this is a
/// copy.
inline Tensor merged_query_weights(const model::ModelParams& params) {
  if (params.layers.empty()) throw std::invalid_argument("model has no layers");
  return params.layers[0].w_q;
}

/// Cosine similarity between the input-weight vectors (rows) of first-layer
/// query neurons. With `head` set, only that head's d_k rows are used;
/// otherwise every row of the merged matrix.
inline Tensor condensation_matrix(const model::ModelParams& params, std::optional<int> head = std::nullopt) {
  const Tensor w = merged_query_weights(params);
  if (!head) return cosine_similarity_matrix(w);
  const int dk = params.config.d_k();
  if (*head < 0 || *head >= params.config.n_heads) throw std::out_of_range("condensation_matrix: bad head");
  Tensor rows = Tensor::matrix(static_cast<std::size_t>(dk), w.cols());
  rows.mat() = w.mat().middleRows(static_cast<Eigen::Index>(*head) * dk, dk);
  return cosine_similarity_matrix(rows);
}

/// Mean |cosine| over off-diagonal entries of the condensation matrix.
inline double condensation_score(const model::ModelParams& params) {
  return mean_abs_off_diagonal(condensation_matrix(params));
}

inline double stable_rank_report(const model::ModelParams& params) {
  return stable_rank(merged_query_weights(params));
}

struct EmbeddingPoint {
  int token;
  double pc1;
  double pc2;
};

/// 2-D PCA of the embedding rows of tokens 20..100.
inline std::vector<EmbeddingPoint> embedding_pca(const model::ModelParams& params) {
  const std::size_t d = params.embedding.cols();
  Tensor rows = Tensor::matrix(corpus::kKeyCount, d);
  for (int t = corpus::kKeyMin; t <= corpus::kKeyMax; ++t) {
    const auto src = params.embedding.row(static_cast<std::size_t>(t));
    std::copy(src.begin(), src.end(), rows.row(static_cast<std::size_t>(t - corpus::kKeyMin)).begin());
  }
  const PcaResult p = pca(rows, 2);
  std::vector<EmbeddingPoint> out;
  for (int t = corpus::kKeyMin; t <= corpus::kKeyMax; ++t) {
    const auto r = static_cast<std::size_t>(t - corpus::kKeyMin);
    out.push_back({t, p.coords.at(r, 0), p.coords.at(r, 1)});
  }
  return out;
}

}  // namespace compctl::analysis
