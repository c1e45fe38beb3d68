#pragma once

#include "compctl/analysis/evaluation.hpp"
#include "compctl/corpus/dataset.hpp"
#include "compctl/numerics/linalg.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace compctl::analysis {

using corpus::AnchorPair;

/// Mean over the anchor-pair groups {(ai,aj),(aj,ai)} of the distance
/// between the two order centroids, divided by the mean distance between all
/// distinct pair centroids. The four self-pair groups contribute 0. Lower
/// means the two orders of a pair are represented alike.
///
/// `points` holds one row per sample, `pair_index[i]` its AnchorPair index.
inline double merge_score(const Tensor& points, const std::vector<int>& pair_index) {
  if (points.rows() != pair_index.size()) throw std::invalid_argument("merge_score: one label per row");
  const std::size_t dim = points.cols();
  std::array<std::vector<double>, corpus::kPairCount> centroid;
  std::array<std::size_t, corpus::kPairCount> count{};
  for (auto& c : centroid) c.assign(dim, 0.0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const auto p = static_cast<std::size_t>(pair_index[i]);
    if (p >= corpus::kPairCount) throw std::out_of_range("merge_score: bad pair index");
    const auto r = points.row(i);
    for (std::size_t c = 0; c < dim; ++c) centroid[p][c] += r[c];
    ++count[p];
  }
  for (std::size_t p = 0; p < corpus::kPairCount; ++p) {
    if (count[p] == 0) throw std::invalid_argument("merge_score: every anchor pair needs samples");
    for (double& v : centroid[p]) v /= static_cast<double>(count[p]);
  }
  auto dist = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t c = 0; c < dim; ++c) s += (centroid[a][c] - centroid[b][c]) * (centroid[a][c] - centroid[b][c]);
    return std::sqrt(s);
  };
  double group_sum = 0.0;
  int groups = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = i; j < 4; ++j) {
      group_sum += dist(static_cast<std::size_t>(4 * i + j), static_cast<std::size_t>(4 * j + i));
      ++groups;
    }
  }
  double all_sum = 0.0;
  int all = 0;
  for (std::size_t a = 0; a < corpus::kPairCount; ++a) {
    for (std::size_t b = a + 1; b < corpus::kPairCount; ++b) {
      all_sum += dist(a, b);
      ++all;
    }
  }
  const double mean_all = all_sum / all;
  if (mean_all == 0.0) return 0.0;
  return (group_sum / groups) / mean_all;
}

/// Mean cosine similarity within groups (off-diagonal) minus the mean
/// between groups. `group[i]` labels row/column i of `sim`.
inline double contrast_score(const Tensor& sim, const std::vector<int>& group) {
  if (sim.rows() != sim.cols() || sim.rows() != group.size()) {
    throw std::invalid_argument("contrast_score: square matrix with one label per row required");
  }
  double within = 0.0, between = 0.0;
  std::size_t n_within = 0, n_between = 0;
  for (std::size_t i = 0; i < group.size(); ++i) {
    for (std::size_t j = 0; j < group.size(); ++j) {
      if (i == j) continue;
      if (group[i] == group[j]) {
        within += sim.at(i, j);
        ++n_within;
      } else {
        between += sim.at(i, j);
        ++n_between;
      }
    }
  }
  if (n_within == 0 || n_between == 0) throw std::invalid_argument("contrast_score: need two groups of size >= 2");
  return within / static_cast<double>(n_within) - between / static_cast<double>(n_between);
}

struct MaskedPairStudy {
  std::vector<int> pair_index;  // per sample
  Tensor hidden;                // samples x d_model, masked X^{do(L)} at the last position
  Tensor coords;                // samples x 2 (PCA)
  double merge_score = 0.0;
};

/// For every one of the 16 anchor pairs, `n_per_pair` random inputs with the
/// key token masked (PRESERVE) are run through the model; the final hidden
/// states are projected to 2-D by PCA.
inline MaskedPairStudy masked_pair_study(const model::ModelParams& params, const corpus::MappingTable& table,
                                         std::size_t n_per_pair = 50, std::uint64_t seed = 0) {
  if (n_per_pair == 0) throw std::invalid_argument("masked_pair_study: n_per_pair must be positive");
  RngStream rng(seed, "masked_pair_study");
  std::vector<Example> samples;
  MaskedPairStudy out;
  for (const AnchorPair p : corpus::all_pairs()) {
    for (std::size_t i = 0; i < n_per_pair; ++i) {
      samples.push_back(corpus::gen_example(rng, p, corpus::Split::kTrain, table, corpus::PairPolicy::kAllPairs));
      out.pair_index.push_back(p.index());
    }
  }
  out.hidden = Tensor::matrix(samples.size(), static_cast<std::size_t>(params.config.d_model));
  for_each_batch(
      params, samples,
      [&](std::size_t first, const model::BatchResult& r) {
        for (std::size_t i = 0; i < r.hidden.rows(); ++i) {
          const auto src = r.hidden.row(i);
          std::copy(src.begin(), src.end(), out.hidden.row(first + i).begin());
        }
      },
      [](const Example& e) {
        return model::MaskSpec{static_cast<std::size_t>(e.key_pos), model::MaskMode::kPreserve};
      });
  out.coords = pca(out.hidden, 2).coords;
  out.merge_score = merge_score(out.coords, out.pair_index);
  return out;
}

struct SingleAnchorSample {
  int value;  // g(x; a1)
  int key;    // x
  corpus::Anchor first;
};

struct MaskedSingleAnchorStudy {
  std::vector<SingleAnchorSample> samples;  // ordered by value, then first anchor
  Tensor hidden;
  Tensor similarity;  // samples x samples cosine similarity
  double contrast_score = 0.0;
};

/// Inputs grouped by v = g(x; a1): for every v reachable from all four
/// anchors (v in [25, 92]) the four (x, a1) with x = v - offset(a1), each
/// with `samples_per_combo` random a2, positions and noise. The second anchor
/// is masked (PRESERVE) so the output can depend on x and a1 only.
/// The pair is placed at positions 1..6 so a2 never sits at the final
/// position, whose query keeps its own token.
inline MaskedSingleAnchorStudy masked_single_anchor_study(const model::ModelParams& params, std::uint64_t seed = 0,
                                                          std::size_t samples_per_combo = 2) {
  if (samples_per_combo == 0) throw std::invalid_argument("masked_single_anchor_study: need samples");
  RngStream rng(seed, "masked_single_anchor_study");
  int v_lo = corpus::kKeyMin, v_hi = corpus::kKeyMax;
  for (const corpus::Anchor a : corpus::kAnchors) {
    v_lo = std::max(v_lo, corpus::kKeyMin + corpus::offset_of(a));
    v_hi = std::min(v_hi, corpus::kKeyMax + corpus::offset_of(a));
  }
  MaskedSingleAnchorStudy out;
  std::vector<Example> inputs;
  for (int v = v_lo; v <= v_hi; ++v) {
    for (const corpus::Anchor a1 : corpus::kAnchors) {
      const int x = v - corpus::offset_of(a1);
      for (std::size_t s = 0; s < samples_per_combo; ++s) {
        Example e;
        e.pair_pos = rng.uniform_int(1, corpus::kSeqLen - 3);
        e.key_pos = e.pair_pos - 1;
        for (int i = 0; i < corpus::kSeqLen; ++i) e.tokens[static_cast<std::size_t>(i)] = rng.uniform_int(corpus::kKeyMin, corpus::kKeyMax);
        e.tokens[static_cast<std::size_t>(e.key_pos)] = x;
        e.tokens[static_cast<std::size_t>(e.pair_pos)] = corpus::token_of(a1);
        e.tokens[static_cast<std::size_t>(e.pair_pos + 1)] =
            corpus::token_of(corpus::kAnchors[rng.uniform_int(std::uint64_t{4})]);
        inputs.push_back(e);
        out.samples.push_back({v, x, a1});
      }
    }
  }
  out.hidden = Tensor::matrix(inputs.size(), static_cast<std::size_t>(params.config.d_model));
  for_each_batch(
      params, inputs,
      [&](std::size_t first, const model::BatchResult& r) {
        for (std::size_t i = 0; i < r.hidden.rows(); ++i) {
          const auto src = r.hidden.row(i);
          std::copy(src.begin(), src.end(), out.hidden.row(first + i).begin());
        }
      },
      [](const Example& e) {
        return model::MaskSpec{static_cast<std::size_t>(e.pair_pos + 1), model::MaskMode::kPreserve};
      });
  out.similarity = cosine_similarity_matrix(out.hidden);
  std::vector<int> groups;
  for (const auto& s : out.samples) groups.push_back(s.value);
  out.contrast_score = contrast_score(out.similarity, groups);
  return out;
}

}  // namespace compctl::analysis
