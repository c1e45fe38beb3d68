#include "compctl/analysis/complexity.hpp"
#include "compctl/analysis/evaluation.hpp"
#include "compctl/analysis/masking.hpp"
#include "compctl/analysis/phase.hpp"
#include "compctl/analysis/report.hpp"
#include "compctl/analysis/structure.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace compctl;
using namespace compctl::analysis;
using corpus::Anchor;

namespace {

model::ModelConfig small_cfg(double gamma = 0.5, int d = 32) {
  model::ModelConfig c;
  c.d_model = d;
  c.d_ffn = 2 * d;
  c.init_rate = gamma;
  return c;
}

// All weights zero: the network outputs head_bias for every input.
model::ModelParams constant_model(int winner) {
  model::ModelParams p = model::zero_params(small_cfg());
  p.head_bias[static_cast<std::size_t>(winner)] = 1.0;
  return p;
}

std::vector<Example> ood_examples(std::size_t n, std::uint64_t seed) {
  return corpus::build_datasets({1, 1, n, seed, corpus::PairPolicy::kHoldOut}, corpus::MappingTable::compositional())
      .ood_test;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Phase, Examples) {
  EXPECT_EQ(classify_phase(0.5, 0.01, 0.2).phase, 1);
  const PhaseLabel two = classify_phase(0.99, 0.02, 0.9);
  EXPECT_EQ(two.phase, 2);
  EXPECT_EQ(two.flag_name(), "WITH");
  EXPECT_EQ(classify_phase(0.99, 0.97, 0.99).phase, 3);
  EXPECT_EQ(classify_phase(0.99, 0.97, 0.5).flag_name(), "WITHOUT");
}

TEST(Phase, BoundariesCountAsPassing) {
  EXPECT_EQ(classify_phase(0.9, 0.0, 0.0).phase, 2);
  EXPECT_EQ(classify_phase(std::nextafter(0.9, 0.0), 1.0, 1.0).phase, 1);
  EXPECT_EQ(classify_phase(0.95, 0.5, 0.7).phase, 3);
  EXPECT_EQ(classify_phase(0.95, 0.5, 0.7).commutativity, CommutativityFlag::kWith);
  EXPECT_EQ(classify_phase(0.95, std::nextafter(0.5, 0.0), std::nextafter(0.7, 0.0)),
            (PhaseLabel{2, CommutativityFlag::kWithout}));
  EXPECT_THROW(classify_phase(1.1, 0.5, 0.5), std::invalid_argument);
  EXPECT_THROW(classify_phase(0.5, std::nan(""), 0.5), std::invalid_argument);
}

TEST(Accuracy, AllCorrectAndDuplicationInvariant) {
  const model::ModelParams p = model::init_params(small_cfg(), RngStream(1, "init"));
  std::vector<Example> ex = ood_examples(300, 3);
  const auto pred = predict_all(p, ex);
  std::vector<Example> relabelled = ex;
  for (std::size_t i = 0; i < ex.size(); ++i) relabelled[i].target = pred[i];
  EXPECT_EQ(accuracy(p, relabelled), 1.0);

  std::vector<Example> twice = ex;
  twice.insert(twice.end(), ex.begin(), ex.end());
  EXPECT_EQ(accuracy(p, ex), accuracy(p, twice));
  EXPECT_THROW(accuracy(p, std::vector<Example>{}), std::invalid_argument);
}

TEST(Accuracy, BatchedPredictionMatchesSingleSequencePredict) {
  const model::ModelParams p = model::init_params(small_cfg(), RngStream(2, "init"));
  const std::vector<Example> ex = ood_examples(kEvalBatch + 37, 4);
  const auto pred = predict_all(p, ex);
  for (std::size_t i = 0; i < ex.size(); i += 41) EXPECT_EQ(pred[i], model::predict(p, ex[i].tokens));
}

TEST(Accuracy, UntrainedModelsAreNearChance) {
  double total = 0.0;
  const int seeds = 8;
  for (int s = 0; s < seeds; ++s) {
    const model::ModelParams p = model::init_params(small_cfg(0.5), RngStream(static_cast<std::uint64_t>(s), "init"));
    total += accuracy(p, ood_examples(1000, static_cast<std::uint64_t>(100 + s)));
  }
  // Mean of 8000 Bernoulli(1/124) trials; 0.03 is far outside its spread.
  EXPECT_LT(total / seeds, 0.03);
}

TEST(Commutativity, ConstantModelAlwaysAgrees) {
  EXPECT_EQ(commutativity_probability(constant_model(40), ood_examples(200, 5)), 1.0);
}

TEST(Commutativity, AgreementAndDisagreementAreComplementary) {
  const model::ModelParams p = model::init_params(small_cfg(0.3), RngStream(3, "init"));
  const auto ex = ood_examples(400, 6);
  std::vector<Example> swapped;
  for (const Example& e : ex) swapped.push_back(swap_anchors(e));
  const auto a = predict_all(p, ex), b = predict_all(p, swapped);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < a.size(); ++i) differ += a[i] != b[i];
  EXPECT_DOUBLE_EQ(commutativity_probability(p, ex), 1.0 - static_cast<double>(differ) / ex.size());
}

TEST(Commutativity, SwapExchangesOnlyTheAnchors) {
  const auto ex = ood_examples(20, 7);
  for (const Example& e : ex) {
    const Example s = swap_anchors(e);
    EXPECT_EQ(s.pair(), e.pair().swapped());
    for (int i = 0; i < corpus::kSeqLen; ++i) {
      if (i != e.pair_pos && i != e.pair_pos + 1) {
        EXPECT_EQ(s.tokens[i], e.tokens[i]);
      }
    }
  }
}

TEST(Condensation, FreshInitIsNotCondensed) {
  const model::ModelParams p = model::init_params(small_cfg(0.5, 128), RngStream(4, "init"));
  const Tensor c = condensation_matrix(p);
  ASSERT_EQ(c.rows(), 128u);
  for (std::size_t i = 0; i < c.rows(); ++i) EXPECT_EQ(c.at(i, i), 1.0);
  EXPECT_LT(condensation_score(p), 0.2);
}

TEST(Condensation, DuplicatedNeuronGivesOne) {
  model::ModelParams p = model::init_params(small_cfg(), RngStream(5, "init"));
  auto& w = p.layers[0].w_q;
  for (std::size_t j = 0; j < w.cols(); ++j) w.at(3, j) = 2.5 * w.at(7, j);
  EXPECT_NEAR(condensation_matrix(p).at(3, 7), 1.0, 1e-15);
}

TEST(Condensation, HeadSelectsItsRows) {
  model::ModelConfig cfg = small_cfg();
  cfg.n_heads = 4;
  const model::ModelParams p = model::init_params(cfg, RngStream(6, "init"));
  const Tensor full = condensation_matrix(p);
  const Tensor h2 = condensation_matrix(p, 2);
  ASSERT_EQ(h2.rows(), 8u);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(h2.at(i, j), full.at(16 + i, 16 + j), 1e-15);
  }
  EXPECT_THROW(condensation_matrix(p, 4), std::out_of_range);
}

TEST(StableRankReport, HandBuiltDiagonalAndBounds) {
  model::ModelParams p = model::zero_params(small_cfg());
  const std::size_t d = 32;
  for (std::size_t i = 0; i < d; ++i) p.layers[0].w_q.at(i, i) = 1.0;
  p.layers[0].w_q.at(0, 0) = 2.0;
  EXPECT_NEAR(stable_rank_report(p), (4.0 + (d - 1.0)) / 4.0, 1e-10);
  const model::ModelParams r = model::init_params(small_cfg(), RngStream(7, "init"));
  EXPECT_GE(stable_rank_report(r), 1.0);
  EXPECT_LE(stable_rank_report(r), 32.0);
}

TEST(StableRankReport, MergingHeadsIsTheStoredMatrix) {
  model::ModelConfig cfg = small_cfg();
  const model::ModelParams one = model::init_params(cfg, RngStream(8, "init"));
  EXPECT_EQ(merged_query_weights(one), one.layers[0].w_q);
}

TEST(EmbeddingPca, CountDeterminismAndCoincidence) {
  model::ModelParams p = model::init_params(small_cfg(), RngStream(9, "init"));
  const auto a = embedding_pca(p), b = embedding_pca(p);
  ASSERT_EQ(a.size(), 81u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].token, 20 + static_cast<int>(i));
    EXPECT_EQ(a[i].pc1, b[i].pc1);
    EXPECT_EQ(a[i].pc2, b[i].pc2);
  }
  for (std::size_t j = 0; j < p.embedding.cols(); ++j) p.embedding.at(50, j) = p.embedding.at(60, j);
  const auto c = embedding_pca(p);
  EXPECT_NEAR(c[30].pc1, c[40].pc1, 1e-12);
  EXPECT_NEAR(c[30].pc2, c[40].pc2, 1e-12);
}

TEST(MergeScore, CoincidentOrdersScoreZeroAndSelfPairsAddNothing) {
  // Centroid of (i,j) equals that of (j,i); every pair still has its own spot.
  Tensor pts = Tensor::matrix(32, 2);
  std::vector<int> idx;
  for (int p = 0; p < 16; ++p) {
    const int i = p / 4, j = p % 4;
    const int lo = std::min(i, j), hi = std::max(i, j);
    for (int s = 0; s < 2; ++s) {
      const std::size_t r = static_cast<std::size_t>(2 * p + s);
      pts.at(r, 0) = lo * 10.0 + (s ? 0.5 : -0.5);
      pts.at(r, 1) = hi * 7.0;
      idx.push_back(p);
    }
  }
  EXPECT_EQ(merge_score(pts, idx), 0.0);

  // Separating only one cross group gives 1/10 of its distance over the mean.
  Tensor moved = pts;
  for (std::size_t r = 0; r < 32; ++r) {
    if (idx[r] == 1) moved.at(r, 0) += 3.0;  // (a,b)
  }
  const double s = merge_score(moved, idx);
  EXPECT_GT(s, 0.0);
  Tensor self_moved = pts;
  for (std::size_t r = 0; r < 32; ++r) {
    if (idx[r] == 0) self_moved.at(r, 0) += 3.0;  // (a,a) has no partner
  }
  // Moving a self pair changes only the normaliser, never the numerator.
  EXPECT_EQ(merge_score(self_moved, idx), 0.0);
}

TEST(MergeScore, InvariantToRotationAndScale) {
  RngStream rng(10, "ms");
  Tensor pts = Tensor::matrix(64, 2);
  std::vector<int> idx;
  for (std::size_t r = 0; r < 64; ++r) {
    pts.at(r, 0) = rng.normal();
    pts.at(r, 1) = rng.normal();
    idx.push_back(static_cast<int>(r % 16));
  }
  const double th = 0.7, sc = 3.0;
  Tensor rot = Tensor::matrix(64, 2);
  for (std::size_t r = 0; r < 64; ++r) {
    rot.at(r, 0) = sc * (std::cos(th) * pts.at(r, 0) - std::sin(th) * pts.at(r, 1));
    rot.at(r, 1) = sc * (std::sin(th) * pts.at(r, 0) + std::cos(th) * pts.at(r, 1));
  }
  EXPECT_NEAR(merge_score(pts, idx), merge_score(rot, idx), 1e-12);
}

TEST(MaskedPairStudy, RowCountAndConstantModel) {
  const auto table = corpus::MappingTable::compositional();
  const MaskedPairStudy s = masked_pair_study(constant_model(7), table, 50, 1);
  EXPECT_EQ(s.pair_index.size(), 800u);
  EXPECT_EQ(s.coords.rows(), 800u);
  EXPECT_EQ(s.merge_score, 0.0);
  const model::ModelParams p = model::init_params(small_cfg(), RngStream(11, "init"));
  const MaskedPairStudy a = masked_pair_study(p, table, 10, 3), b = masked_pair_study(p, table, 10, 3);
  EXPECT_EQ(a.coords, b.coords);
  EXPECT_GT(a.merge_score, 0.0);
}

TEST(ContrastScore, IdealisedGroupsAreMaximal) {
  // Rows are one-hot in their group: similarity 1 within, 0 between.
  const std::vector<int> group{0, 0, 1, 1, 2, 2};
  Tensor rows = Tensor::matrix(6, 3);
  for (std::size_t i = 0; i < 6; ++i) rows.at(i, static_cast<std::size_t>(group[i])) = 1.0;
  EXPECT_DOUBLE_EQ(contrast_score(cosine_similarity_matrix(rows), group), 1.0);
  EXPECT_THROW(contrast_score(cosine_similarity_matrix(rows), {0, 0, 0, 0, 0, 0}), std::invalid_argument);
}

TEST(MaskedSingleAnchorStudy, OrderingShapeAndSymmetry) {
  const model::ModelParams p = model::init_params(small_cfg(), RngStream(12, "init"));
  const MaskedSingleAnchorStudy s = masked_single_anchor_study(p, 0, 2);
  ASSERT_EQ(s.samples.size(), (92u - 25u + 1u) * 4u * 2u);
  for (std::size_t i = 1; i < s.samples.size(); ++i) EXPECT_LE(s.samples[i - 1].value, s.samples[i].value);
  for (const auto& smp : s.samples) EXPECT_EQ(corpus::apply_anchor(smp.key, smp.first), smp.value);
  for (std::size_t i = 0; i < s.similarity.rows(); ++i) {
    EXPECT_EQ(s.similarity.at(i, i), 1.0);
    for (std::size_t j = 0; j < i; ++j) EXPECT_EQ(s.similarity.at(i, j), s.similarity.at(j, i));
  }
}

TEST(Spearman, RanksAndCorrelation) {
  EXPECT_EQ(average_ranks({10, 30, 20, 20}), (std::vector<double>{1, 4, 2.5, 2.5}));
  EXPECT_DOUBLE_EQ(spearman({0, 2, 4, 6}, {3, 5, 9, 20}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({0, 2, 4, 6}, {20, 9, 5, 3}), -1.0);
  EXPECT_TRUE(std::isnan(spearman({0, 2, 4, 6}, {1, 1, 1, 1})));
  // Pearson on ranks [1,2,3,4] vs [1,3,2,4]: 0.8.
  EXPECT_NEAR(spearman({0, 2, 4, 6}, {1, 7, 5, 9}), 0.8, 1e-15);
}

TEST(ComplexitySummary, MeansOverReachedTrials) {
  std::vector<ComplexityCell> cells;
  auto add = [&](int k, double g, std::optional<int> e) {
    ComplexityCell c;
    c.k = k;
    c.gamma = g;
    c.epochs = e;
    cells.push_back(c);
  };
  add(0, 0.8, 4);
  add(0, 0.8, 6);
  add(2, 0.8, 9);
  add(2, 0.8, std::nullopt);
  add(0, 0.3, 5);
  const auto s = summarize_complexity(cells);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].gamma, 0.3);
  EXPECT_EQ(s[1].k, 0);
  EXPECT_DOUBLE_EQ(s[1].mean_epochs, 5.0);
  EXPECT_NEAR(s[1].std_epochs, std::sqrt(2.0), 1e-15);
  EXPECT_EQ(s[2].reached, 1);
  EXPECT_EQ(s[2].total, 2);
  EXPECT_EQ(epochs_needed({0.9, 0.04}, training::ThresholdKind::kLoss, 5e-2), std::optional<int>(2));
}

TEST(ComplexitySetup, CellsShareTrialSeedsAndPerturbTheTable) {
  ComplexitySpec spec;
  const CellSetup a = complexity_cell_setup(spec, 2, 0.3, 1);
  const CellSetup b = complexity_cell_setup(spec, 2, 0.8, 1);
  EXPECT_EQ(a.train.master_seed, b.train.master_seed);
  EXPECT_EQ(a.data.table, b.data.table);
  EXPECT_EQ(a.data.table.reasoning_complexity(), 2);
  EXPECT_EQ(b.model.init_rate, 0.8);
  EXPECT_NE(complexity_cell_setup(spec, 2, 0.3, 2).train.master_seed, a.train.master_seed);
  std::set<int> pairs;
  for (const Example& e : a.data.train) pairs.insert(e.pair().index());
  EXPECT_EQ(pairs.size(), 16u);
}

TEST(Report, WritesRequestedFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "compctl_test_report";
  std::filesystem::remove_all(dir);
  const model::ModelParams p = model::init_params(small_cfg(), RngStream(13, "init"));
  ReportOptions o;
  o.n_per_pair = 5;
  o.samples_per_combo = 1;
  o.svg = true;
  o.metrics = training::EpochRecord{9, 0.1, 0.99, 0.95, 0.2, 0.5, 1e-5};
  const auto rep = write_analysis_report(dir, p, corpus::MappingTable::compositional(),
                                         {ReportKind::kCondensation, ReportKind::kStableRank, ReportKind::kEmbeddingPca,
                                          ReportKind::kMaskPair, ReportKind::kMaskAnchor},
                                         o);
  EXPECT_EQ(rep["phase"]["phase"], 2);
  EXPECT_EQ(rep["phase"]["commutativity_flag"], "WITHOUT");
  for (const char* f : {"condensation.csv", "condensation.svg", "embedding_pca.csv", "mask_pair_pca.csv",
                        "mask_anchor_similarity.csv", "mask_anchor_samples.csv", "report.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  // 81 points plus a header.
  const std::string emb = slurp(dir / "embedding_pca.csv");
  EXPECT_EQ(std::count(emb.begin(), emb.end(), '\n'), 82);
  const std::string json_text = slurp(dir / "report.json");
  EXPECT_EQ(nlohmann::ordered_json::parse(json_text).dump(2) + "\n", json_text);
  EXPECT_EQ(report_from_name("mask-anchor"), ReportKind::kMaskAnchor);
  EXPECT_THROW(report_from_name("tsne"), std::invalid_argument);
}

TEST(Report, LargeHeatmapsAreBlockAveraged) {
  const auto path = std::filesystem::temp_directory_path() / "compctl_test_heatmap.svg";
  Tensor m = Tensor::matrix(400, 400);
  for (std::size_t i = 0; i < 400; ++i) m.at(i, i) = 1.0;
  svg::heatmap(path, m, -1.0, 1.0, "t");
  const std::string s = slurp(path);
  std::size_t rects = 0;
  for (auto p = s.find("<rect"); p != std::string::npos; p = s.find("<rect", p + 1)) ++rects;
  EXPECT_EQ(rects, 100u * 100u);
  // Off-diagonal blocks average to 0, the middle of the [-1, 1] scale.
  EXPECT_NE(s.find("fill=\"rgb(127,60,127)\""), std::string::npos);
}
