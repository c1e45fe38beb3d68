#pragma once

#include "compctl/corpus/mapping.hpp"
#include "compctl/training/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace compctl::analysis {

using training::ThresholdKind;

struct ComplexitySpec {
  std::vector<int> k_values{0, 2, 4, 6};
  std::vector<double> gammas{0.3, 0.8};
  int trials = 3;
  model::ModelConfig model = model::ModelConfig::small(0.5);
  training::TrainConfig train;
  std::size_t n_train = 20000;
  std::size_t n_eval = 1000;
  ThresholdKind kind = ThresholdKind::kLoss;
  double threshold = 5e-2;
  double pair_threshold = 0.6;
  std::uint64_t seed = 0;
};

/// Master seed of trial `t`; shared by every (k, gamma) cell of that trial so
/// cells differ only in what the sweep varies.
inline std::uint64_t trial_seed(std::uint64_t sweep_seed, int trial) {
  return RngStream(sweep_seed, "trial:" + std::to_string(trial)).next_u64();
}

struct ComplexityCell {
  int k = 0;
  double gamma = 0.0;
  int trial = 0;
  std::uint64_t master_seed = 0;
  std::vector<corpus::PerturbedGroup> perturbed;
  /// Epochs trained when the threshold was first met (1-based count).
  std::optional<int> epochs;
  std::array<std::optional<int>, corpus::kPairCount> pair_epochs{};
};

inline std::optional<int> epochs_needed(const std::vector<double>& history, ThresholdKind kind, double theta) {
  const auto idx = training::epochs_to_threshold(history, kind, theta);
  if (!idx) return std::nullopt;
  return static_cast<int>(*idx) + 1;
}

/// Everything a cell's training run needs, derived from the sweep spec.
struct CellSetup {
  model::ModelConfig model;
  training::TrainConfig train;
  corpus::DatasetBundle data;
};

inline CellSetup complexity_cell_setup(const ComplexitySpec& spec, int k, double gamma, int trial) {
  CellSetup s;
  s.model = spec.model;
  s.model.init_rate = gamma;
  s.train = spec.train;
  s.train.master_seed = trial_seed(spec.seed, trial);
  const corpus::MappingTable table = corpus::perturb_mappings(k, training::data_seed(s.train.master_seed));
  s.data = corpus::build_datasets(
      {spec.n_train, spec.n_eval, spec.n_eval, training::data_seed(s.train.master_seed), corpus::PairPolicy::kAllPairs},
      table);
  return s;
}

inline ComplexityCell complexity_cell_result(const ComplexitySpec& spec, int k, double gamma, int trial,
                                             const CellSetup& setup, const training::RunResult& run) {
  ComplexityCell c;
  c.k = k;
  c.gamma = gamma;
  c.trial = trial;
  c.master_seed = setup.train.master_seed;
  c.perturbed = setup.data.table.perturbed_groups();
  if (spec.kind == ThresholdKind::kLoss) {
    c.epochs = epochs_needed(run.loss_history(), ThresholdKind::kLoss, spec.threshold);
  } else {
    std::vector<double> acc;
    for (const auto& t : run.train_history) acc.push_back(t.train_acc);
    c.epochs = epochs_needed(acc, ThresholdKind::kPairAccuracy, spec.threshold);
  }
  for (const corpus::AnchorPair p : corpus::all_pairs()) {
    c.pair_epochs[static_cast<std::size_t>(p.index())] =
        epochs_needed(run.pair_accuracy_history(p), ThresholdKind::kPairAccuracy, spec.pair_threshold);
  }
  return c;
}

/// perturb_mappings(k) -> build_datasets (all 16 pairs) -> train_run ->
/// epochs to threshold, for one cell.
inline ComplexityCell run_complexity_cell(const ComplexitySpec& spec, int k, double gamma, int trial,
                                          const training::RunOptions& opt = {}) {
  const CellSetup setup = complexity_cell_setup(spec, k, gamma, trial);
  const training::RunResult run = training::train_run(setup.data, setup.model, setup.train, opt);
  return complexity_cell_result(spec, k, gamma, trial, setup, run);
}

struct ComplexitySummary {
  int k = 0;
  double gamma = 0.0;
  double mean_epochs = std::nan("");
  double std_epochs = std::nan("");
  int reached = 0;
  int total = 0;
};

/// Mean and sample standard deviation of epochs per (k, gamma), over the
/// trials that reached the threshold.
inline std::vector<ComplexitySummary> summarize_complexity(const std::vector<ComplexityCell>& cells) {
  std::vector<ComplexitySummary> out;
  for (const ComplexityCell& c : cells) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const ComplexitySummary& s) { return s.k == c.k && s.gamma == c.gamma; });
    if (it == out.end()) {
      out.push_back({c.k, c.gamma});
      it = out.end() - 1;
    }
    it->total += 1;
  }
  for (ComplexitySummary& s : out) {
    std::vector<double> v;
    for (const ComplexityCell& c : cells) {
      if (c.k == s.k && c.gamma == s.gamma && c.epochs) v.push_back(*c.epochs);
    }
    s.reached = static_cast<int>(v.size());
    if (v.empty()) continue;
    s.mean_epochs = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - s.mean_epochs) * (x - s.mean_epochs);
      s.std_epochs = std::sqrt(ss / static_cast<double>(v.size() - 1));
    } else {
      s.std_epochs = 0.0;
    }
  }
  std::sort(out.begin(), out.end(), [](const ComplexitySummary& a, const ComplexitySummary& b) {
    return a.gamma != b.gamma ? a.gamma < b.gamma : a.k < b.k;
  });
  return out;
}

/// 1-based ranks with ties sharing their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// NaN when either input is constant.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length samples");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nan("");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace compctl::analysis
