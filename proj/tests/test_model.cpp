#include "compctl/model/checkpoint.hpp"
#include "compctl/model/forward.hpp"
#include "compctl/training/trainer.hpp"
#include "support/finite_difference.hpp"
#include "support/reference_model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <vector>

using namespace compctl;
using model::MaskMode;
using model::MaskSpec;
using model::ModelConfig;
using model::ModelParams;

namespace {

ModelConfig tiny(int heads = 1) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = heads;
  c.d_model = 16;
  c.d_ffn = 64;
  c.init_rate = 0.5;
  return c;
}

std::vector<int> sample_tokens(RngStream& rng) {
  std::vector<int> t(corpus::kSeqLen);
  for (int& v : t) v = rng.uniform_int(0, corpus::kVocabSize - 1);
  return t;
}

double max_abs_diff(const Tensor& a, const reference::Mat& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = 0; j < b[i].size(); ++j) m = std::max(m, std::abs(a.at(i, j) - b[i][j]));
  return m;
}

}  // namespace

TEST(Forward, MatchesPlainLoopReference) {
  for (int heads : {1, 2, 4}) {
    const ModelParams p = model::init_params(tiny(heads), RngStream(7, "init"));
    RngStream rng(11, "tokens");
    for (int trial = 0; trial < 5; ++trial) {
      const auto tokens = sample_tokens(rng);
      const auto ours = model::forward(p, tokens);
      const auto ref = reference::forward(p, tokens);
      EXPECT_LT(max_abs_diff(ours.logits, ref.logits), 1e-12) << "heads=" << heads;
      for (std::size_t l = 0; l < ours.attention.size(); ++l) {
        EXPECT_LT(max_abs_diff(ours.attention[l], ref.attention[l]), 1e-13);
      }
    }
  }
}

TEST(Forward, MaskedPassesMatchReference) {
  const ModelParams p = model::init_params(tiny(2), RngStream(3, "init"));
  RngStream rng(5, "tokens");
  for (int pos = 0; pos < corpus::kSeqLen; ++pos) {
    const auto tokens = sample_tokens(rng);
    for (bool exclude : {false, true}) {
      const MaskSpec m{static_cast<std::size_t>(pos), exclude ? MaskMode::kExclude : MaskMode::kPreserve};
      const auto ours = model::forward(p, tokens, m);
      const auto ref = reference::forward(p, tokens, reference::Mask{pos, exclude});
      EXPECT_LT(max_abs_diff(ours.logits, ref.logits), 1e-12);
      EXPECT_LT(max_abs_diff(ours.attention[0], ref.attention[0]), 1e-13);
    }
  }
}

TEST(Forward, ExcludedKeyCannotReachTheLastPosition) {
  const ModelParams p = model::init_params(tiny(2), RngStream(8, "init"));
  RngStream rng(6, "tokens");
  for (std::size_t key_pos = 0; key_pos < 7; ++key_pos) {
    auto tokens = sample_tokens(rng);
    const MaskSpec m{key_pos, MaskMode::kExclude};
    tokens[key_pos] = 20;
    const auto base = model::forward(p, tokens, m).logits.row(corpus::kSeqLen - 1);
    const std::vector<double> ref(base.begin(), base.end());
    for (int v = 21; v <= 100; v += 4) {
      tokens[key_pos] = v;
      const auto last = model::forward(p, tokens, m).logits.row(corpus::kSeqLen - 1);
      for (std::size_t c = 0; c < last.size(); ++c) EXPECT_LE(std::abs(last[c] - ref[c]), 1e-12);
    }
  }
}

TEST(Forward, PreserveOnlyZeroesTheMaskedColumn) {
  const ModelParams p = model::init_params(tiny(2), RngStream(8, "init"));
  RngStream rng(2, "tokens");
  for (std::size_t pos = 0; pos < corpus::kSeqLen; ++pos) {
    const auto tokens = sample_tokens(rng);
    const auto plain = model::forward(p, tokens).attention[0];
    const auto masked = model::forward(p, tokens, MaskSpec{pos, MaskMode::kPreserve}).attention[0];
    for (std::size_t r = 0; r < plain.rows(); ++r) {
      const std::size_t query = r % corpus::kSeqLen;
      for (std::size_t c = 0; c < plain.cols(); ++c) {
        if (c == pos && query != pos) {
          EXPECT_EQ(masked.at(r, c), 0.0);
        } else {
          EXPECT_EQ(masked.at(r, c), plain.at(r, c));
        }
      }
    }
  }
}

TEST(Forward, BatchedLastPositionMatchesSingleSequence) {
  const ModelParams p = model::init_params(tiny(2), RngStream(9, "init"));
  RngStream rng(1, "tokens");
  std::vector<int> all;
  std::vector<std::vector<int>> seqs;
  for (int i = 0; i < 6; ++i) {
    seqs.push_back(sample_tokens(rng));
    all.insert(all.end(), seqs.back().begin(), seqs.back().end());
  }
  const auto batch = model::run_batch(p, all);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto single = model::forward(p, seqs[i]);
    const auto last = single.logits.row(corpus::kSeqLen - 1);
    for (std::size_t c = 0; c < last.size(); ++c) EXPECT_NEAR(batch.logits.at(i, c), last[c], 1e-12);
    for (std::size_t c = 0; c < single.last_hidden.size(); ++c) {
      EXPECT_NEAR(batch.hidden.at(i, c), single.last_hidden[c], 1e-12);
    }
  }
}

TEST(Forward, RejectsWrongLength) {
  const ModelParams p = model::init_params(tiny(), RngStream(1, "init"));
  std::vector<int> t(5, 3);
  EXPECT_THROW(model::forward(p, t), std::invalid_argument);
  EXPECT_THROW(model::run_batch(p, t), std::invalid_argument);
}

TEST(Forward, ArgmaxTiesGoToLowestIndex) {
  const std::vector<double> row{0.5, 2.0, 2.0, -1.0};
  EXPECT_EQ(model::argmax(row), 1);
}

TEST(Gradients, FullModelMatchesCentralDifferences) {
  for (int heads : {1, 2}) {
    const ModelParams p = model::init_params(tiny(heads), RngStream(21, "init"));
    RngStream rng(4, "batch");
    std::vector<corpus::Example> examples;
    const auto table = corpus::MappingTable::compositional();
    for (int i = 0; i < 3; ++i) {
      examples.push_back(corpus::gen_example(rng, corpus::seen_pairs()[static_cast<std::size_t>(i)],
                                             corpus::Split::kTrain, table));
    }
    std::vector<const corpus::Example*> batch;
    for (const auto& e : examples) batch.push_back(&e);
    ModelParams grads;
    training::batch_gradient(p, batch, grads, 2, 1);

    auto loss = [&](const ModelParams& q) {
      double total = 0.0;
      for (const auto& e : examples) {
        const auto out = reference::forward(q, {e.tokens.begin(), e.tokens.end()});
        const auto& last = out.logits.back();
        double mx = last[0];
        for (double v : last) mx = std::max(mx, v);
        double z = 0.0;
        for (double v : last) z += std::exp(v - mx);
        total += mx + std::log(z) - last[static_cast<std::size_t>(e.target)];
      }
      return total / static_cast<double>(examples.size());
    };
    std::size_t checked = 0;
    for (const auto& e : fd::compare(p, grads, loss, 1e-3)) {
      ASSERT_LE(std::abs(e.analytic - e.numeric), 1e-4 * std::max(1.0, std::abs(e.analytic)))
          << e.tensor << "[" << e.index << "] heads=" << heads;
      ++checked;
    }
    EXPECT_EQ(checked, p.parameter_count());
  }
}

TEST(Gradients, ChunkingAndThreadsDoNotChangeTheResult) {
  const ModelParams p = model::init_params(tiny(), RngStream(2, "init"));
  const auto data = corpus::build_datasets({40, 1, 1, 3, corpus::PairPolicy::kHoldOut},
                                           corpus::MappingTable::compositional());
  std::vector<const corpus::Example*> batch;
  for (const auto& e : data.train) batch.push_back(&e);
  ModelParams a, b, c;
  training::batch_gradient(p, batch, a, 8, 1);
  training::batch_gradient(p, batch, b, 8, 3);
  training::batch_gradient(p, batch, c, 40, 1);
  EXPECT_EQ(a, b);
  // A different chunking only reorders the sum.
  EXPECT_NEAR(training::global_norm(a), training::global_norm(c), 1e-12);
}

TEST(Init, WeightVarianceFollowsInitRate) {
  for (double gamma : {0.3, 0.5, 0.8}) {
    ModelConfig c = ModelConfig::small(gamma);
    const ModelParams p = model::init_params(c, RngStream(17, "init"));
    p.for_each([&](const model::TensorSlot& s, const Tensor& t) {
      double sum = 0.0, sq = 0.0;
      for (double v : t.data()) {
        sum += v;
        sq += v * v;
      }
      const double n = static_cast<double>(t.size());
      switch (s.role) {
        case model::TensorRole::kWeight:
        case model::TensorRole::kPositional: {
          const double want = std::pow(static_cast<double>(s.fan_in), -gamma);
          const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
          // sampling error of a std estimate is about sd / sqrt(2n)
          EXPECT_NEAR(sd / want, 1.0, 5.0 / std::sqrt(2.0 * n)) << s.name;
          break;
        }
        case model::TensorRole::kNormGain:
          for (double v : t.data()) EXPECT_EQ(v, 1.0);
          break;
        default:
          for (double v : t.data()) EXPECT_EQ(v, 0.0);
      }
    });
  }
}

TEST(Init, DeterministicPerSeedAndDistinctAcrossSeeds) {
  const auto a = model::init_params(tiny(), RngStream(1, "init"));
  const auto b = model::init_params(tiny(), RngStream(1, "init"));
  const auto c = model::init_params(tiny(), RngStream(2, "init"));
  EXPECT_EQ(a, b);
  EXPECT_NE(a.embedding, c.embedding);
}

TEST(Params, CountMatchesClosedForm) {
  const ModelConfig c = ModelConfig::small(0.5);
  const std::size_t d = 128, f = 512, v = 124, s = 9;
  const std::size_t per_layer = 4 * d * d + 2 * d + f * d + f + d * f + d + 2 * d;
  EXPECT_EQ(model::zero_params(c).parameter_count(), v * d + s * d + 2 * per_layer + v * d + v);
}

TEST(Params, ConfigValidation) {
  ModelConfig c = tiny();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny();
  c.init_rate = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / "compctl_ckpt_test";
  std::filesystem::remove_all(dir);
  const ModelParams p = model::init_params(tiny(2), RngStream(5, "init"));
  model::save_checkpoint(dir, p, {{"note", "x"}}, {{"m.embedding", p.embedding}});
  const auto loaded = model::load_checkpoint(dir);
  EXPECT_EQ(loaded.params, p);
  EXPECT_EQ(loaded.manifest.at("note"), "x");
  ASSERT_EQ(loaded.optimizer.size(), 1u);
  EXPECT_EQ(loaded.optimizer[0].tensor, p.embedding);
  EXPECT_EQ(std::filesystem::file_size(dir / "weights.bin"), p.parameter_count() * 8);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, RejectsMismatchedManifest) {
  const auto dir = std::filesystem::temp_directory_path() / "compctl_ckpt_bad";
  std::filesystem::remove_all(dir);
  const ModelParams p = model::init_params(tiny(), RngStream(5, "init"));
  model::save_checkpoint(dir, p, nlohmann::ordered_json::object());
  auto j = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
  j["model_config"]["d_model"] = 32;
  j["model_config"]["d_ffn"] = 64;
  std::ofstream(dir / "manifest.json") << j.dump();
  EXPECT_THROW(model::load_checkpoint(dir), std::runtime_error);
  EXPECT_THROW(model::load_checkpoint(dir / "missing"), std::runtime_error);
  std::filesystem::remove_all(dir);
}
