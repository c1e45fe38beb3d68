#include "compctl/corpus/dataset.hpp"
#include "compctl/corpus/io.hpp"
#include "compctl/corpus/mapping.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace compctl;
using namespace compctl::corpus;

namespace {

// Independent restatement of the anchor rule used as an oracle below.
int oracle_anchor(int x, char a) {
  switch (a) {
    case 'a': return x + 5;
    case 'b': return x + 1;
    case 'c': return x - 2;
    default: return x - 8;
  }
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("compctl_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Vocabulary, LayoutAndAnchorTokens) {
  EXPECT_EQ(kVocabSize, 124);
  EXPECT_EQ(token_of(Anchor::kA), 120);
  EXPECT_EQ(token_of(Anchor::kD), 123);
  EXPECT_TRUE(is_anchor_token(121));
  EXPECT_FALSE(is_anchor_token(119));
  EXPECT_EQ(anchor_of_token(122), Anchor::kC);
  EXPECT_FALSE(anchor_of_token(50).has_value());
}

TEST(Vocabulary, ApplyAnchorExamples) {
  EXPECT_EQ(apply_anchor(23, Anchor::kA), 28);
  EXPECT_EQ(apply_anchor(20, Anchor::kB), 21);
  EXPECT_EQ(apply_anchor(20, Anchor::kD), 12);
}

TEST(Vocabulary, PairIndexIsRowMajorAndSwapIsInvolution) {
  std::set<int> seen;
  for (AnchorPair p : all_pairs()) {
    EXPECT_EQ(p.index(), 4 * index_of(p.first) + index_of(p.second));
    EXPECT_EQ(AnchorPair::from_index(p.index()), p);
    EXPECT_EQ(p.swapped().swapped(), p);
    seen.insert(p.index());
  }
  EXPECT_EQ(seen.size(), 16u);
  EXPECT_EQ(seen_pairs().size(), 14u);
  for (AnchorPair p : seen_pairs()) EXPECT_FALSE(is_ood_pair(p));
  EXPECT_TRUE(is_ood_pair({Anchor::kC, Anchor::kD}));
  EXPECT_TRUE(is_ood_pair({Anchor::kD, Anchor::kC}));
}

TEST(Mapping, CompositeTargetExamples) {
  const MappingTable t = MappingTable::compositional();
  EXPECT_EQ(composite_target(23, Anchor::kA, Anchor::kB, t), 29);
  EXPECT_EQ(composite_target(50, Anchor::kC, Anchor::kD, t), 40);
  EXPECT_EQ(composite_target(50, Anchor::kD, Anchor::kC, t), 40);
  EXPECT_EQ(composite_target(30, Anchor::kD, Anchor::kD, t), 14);
}

TEST(Mapping, CompositionalTableMatchesBruteForce) {
  const MappingTable t = MappingTable::compositional();
  for (AnchorPair p : all_pairs()) {
    for (int x = kKeyMin; x <= kKeyMax; ++x) {
      const int want = oracle_anchor(oracle_anchor(x, name_of(p.first)), name_of(p.second));
      EXPECT_EQ(t.lookup(p, x), want) << p.name() << " x=" << x;
      EXPECT_TRUE(is_numeric_token(want));
    }
  }
}

TEST(Mapping, LookupRejectsKeysOutsideRange) {
  const MappingTable t = MappingTable::compositional();
  EXPECT_THROW((void)t.lookup({Anchor::kA, Anchor::kA}, 19), std::out_of_range);
  EXPECT_THROW((void)t.lookup({Anchor::kA, Anchor::kA}, 101), std::out_of_range);
}

TEST(Perturbation, ZeroIsTheCompositionalTable) {
  EXPECT_EQ(perturb_mappings(0, 123), MappingTable::compositional());
  EXPECT_EQ(perturb_mappings(0, 123).reasoning_complexity(), 0);
}

TEST(Perturbation, ShiftedGroupExample) {
  const MappingTable t = MappingTable::with_perturbations({{0, kPerturbationGroups[0], +3}});
  const int oracle = oracle_anchor(oracle_anchor(50, 'a'), 'b') + 3;
  EXPECT_EQ(oracle, 59);
  EXPECT_EQ(t.lookup({Anchor::kA, Anchor::kB}, 50), oracle);
  EXPECT_EQ(t.lookup({Anchor::kB, Anchor::kA}, 50), oracle);
  EXPECT_EQ(t.lookup({Anchor::kA, Anchor::kC}, 50), oracle_anchor(oracle_anchor(50, 'a'), 'c'));
}

TEST(Perturbation, GroupsStaySymmetricAndOnlyThoseChange) {
  const MappingTable base = MappingTable::compositional();
  for (int k = 0; k <= 6; ++k) {
    for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
      const MappingTable t = perturb_mappings(k, seed);
      ASSERT_EQ(t.reasoning_complexity(), k);
      std::set<int> changed;
      for (const PerturbedGroup& g : t.perturbed_groups()) {
        EXPECT_NE(g.delta, 0);
        changed.insert(g.pair.index());
        changed.insert(g.pair.swapped().index());
      }
      for (AnchorPair p : all_pairs()) {
        for (int x = kKeyMin; x <= kKeyMax; ++x) {
          EXPECT_TRUE(is_numeric_token(t.lookup(p, x)));
          if (changed.count(p.index())) {
            EXPECT_EQ(t.lookup(p, x), t.lookup(p.swapped(), x));
            EXPECT_NE(t.lookup(p, x), base.lookup(p, x));
          } else {
            EXPECT_EQ(t.lookup(p, x), base.lookup(p, x));
          }
        }
      }
    }
  }
  EXPECT_THROW(perturb_mappings(7, 0), std::out_of_range);
  EXPECT_THROW(perturb_mappings(-1, 0), std::out_of_range);
}

TEST(Perturbation, DeterministicInSeed) {
  EXPECT_EQ(perturb_mappings(4, 5), perturb_mappings(4, 5));
}

TEST(SplitRule, Examples) {
  EXPECT_EQ(split_of(23, 2, 9), SplitRule::kTestOk);
  EXPECT_EQ(split_of(23, 3, 9), SplitRule::kTrainOk);
  EXPECT_EQ(split_of(27, 6, 9), SplitRule::kTestOk);
  EXPECT_THROW(split_of(23, 9, 9), std::out_of_range);
}

TEST(GenExample, StructuralPostconditions) {
  const MappingTable t = MappingTable::compositional();
  RngStream rng(3, "gen");
  for (int i = 0; i < 500; ++i) {
    const Example e = gen_example(rng, {Anchor::kA, Anchor::kB}, Split::kTrain, t);
    EXPECT_NO_THROW(validate_example(e, t));
    EXPECT_EQ(e.key_pos, e.pair_pos - 1);
    EXPECT_EQ(e.tokens[static_cast<std::size_t>(e.pair_pos)], 120);
    EXPECT_EQ(e.tokens[static_cast<std::size_t>(e.pair_pos + 1)], 121);
    int noise = 0;
    for (int p = 0; p < kSeqLen; ++p) {
      if (p != e.key_pos && p != e.pair_pos && p != e.pair_pos + 1) ++noise;
    }
    EXPECT_EQ(noise, 6);
    EXPECT_NE(e.key() % 7, e.key_pos);
    EXPECT_EQ(e.target, e.key() + 6);
  }
}

TEST(GenExample, OodPairRejectedForTraining) {
  const MappingTable t = MappingTable::compositional();
  RngStream rng(3, "gen");
  EXPECT_THROW(gen_example(rng, {Anchor::kC, Anchor::kD}, Split::kTrain, t), std::invalid_argument);
  EXPECT_THROW(gen_example(rng, {Anchor::kA, Anchor::kD}, Split::kOodTest, t), std::invalid_argument);
  EXPECT_NO_THROW(gen_example(rng, {Anchor::kC, Anchor::kD}, Split::kTrain, t, PairPolicy::kAllPairs));
}

TEST(GenExample, TestKeysFollowTheModRule) {
  const MappingTable t = MappingTable::compositional();
  RngStream rng(4, "gen");
  std::set<int> positions;
  for (int i = 0; i < 2000; ++i) {
    const Example e = gen_example(rng, {Anchor::kB, Anchor::kD}, Split::kIdTest, t);
    EXPECT_EQ(e.key() % 7, e.key_pos);
    positions.insert(e.pair_pos);
    const Example o = gen_example(rng, {Anchor::kD, Anchor::kC}, Split::kOodTest, t);
    EXPECT_EQ(o.key() % 7, o.key_pos);
  }
  EXPECT_EQ(positions, (std::set<int>{1, 2, 3, 4, 5, 6, 7}));
}

TEST(Datasets, SizesPairsAndDisjointKeys) {
  const DatasetBundle b = build_datasets({20000, 2000, 2000, 9, PairPolicy::kHoldOut}, MappingTable::compositional());
  ASSERT_EQ(b.train.size(), 20000u);
  ASSERT_EQ(b.id_test.size(), 2000u);
  ASSERT_EQ(b.ood_test.size(), 2000u);
  std::set<int> train_pairs, id_pairs, ood_pairs;
  std::set<std::pair<int, int>> train_keys;
  for (const Example& e : b.train) {
    train_pairs.insert(e.pair().index());
    train_keys.insert({e.key(), e.key_pos});
  }
  for (const Example& e : b.id_test) {
    id_pairs.insert(e.pair().index());
    EXPECT_EQ(train_keys.count({e.key(), e.key_pos}), 0u);
  }
  for (const Example& e : b.ood_test) ood_pairs.insert(e.pair().index());
  EXPECT_EQ(train_pairs.size(), 14u);
  EXPECT_EQ(id_pairs.size(), 14u);
  EXPECT_EQ(ood_pairs, (std::set<int>{AnchorPair{Anchor::kC, Anchor::kD}.index(),
                                      AnchorPair{Anchor::kD, Anchor::kC}.index()}));
}

TEST(Datasets, AllPairsPolicyTrainsOnSixteen) {
  const DatasetBundle b = build_datasets({5000, 100, 100, 1, PairPolicy::kAllPairs}, perturb_mappings(2, 1));
  std::set<int> pairs;
  for (const Example& e : b.train) pairs.insert(e.pair().index());
  EXPECT_EQ(pairs.size(), 16u);
  for (const Example& e : b.train) EXPECT_NO_THROW(validate_example(e, b.table));
}

TEST(Datasets, SameSeedSameBundleDifferentSeedDifferent) {
  const MappingTable t = MappingTable::compositional();
  const DatasetBundle a = build_datasets({3000, 300, 300, 5, PairPolicy::kHoldOut}, t);
  const DatasetBundle b = build_datasets({3000, 300, 300, 5, PairPolicy::kHoldOut}, t);
  const DatasetBundle c = build_datasets({3000, 300, 300, 6, PairPolicy::kHoldOut}, t);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.id_test, b.id_test);
  EXPECT_EQ(a.ood_test, b.ood_test);
  EXPECT_NE(a.train, c.train);
}

TEST(DatasetIo, ExportImportRoundTripAndStableBytes) {
  const DatasetBundle b = build_datasets({500, 50, 50, 2, PairPolicy::kHoldOut}, perturb_mappings(2, 2));
  const auto d1 = scratch("io1");
  const auto d2 = scratch("io2");
  export_bundle(b, d1);
  export_bundle(build_datasets({500, 50, 50, 2, PairPolicy::kHoldOut}, perturb_mappings(2, 2)), d2);
  for (const char* f : {"train.jsonl", "id_test.jsonl", "ood_test.jsonl", "manifest.json"}) {
    EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
  }
  const DatasetBundle r = import_bundle(d1);
  EXPECT_EQ(r.train, b.train);
  EXPECT_EQ(r.id_test, b.id_test);
  EXPECT_EQ(r.ood_test, b.ood_test);
  EXPECT_EQ(r.table, b.table);
  EXPECT_EQ(r.seed, b.seed);
  const auto manifest = nlohmann::json::parse(slurp(d1 / "manifest.json"));
  EXPECT_EQ(manifest.at("perturbation").at("k"), 2);
  EXPECT_EQ(manifest.at("perturbation").at("groups").size(), 2u);
}

TEST(DatasetIo, RecordFormat) {
  Example e;
  e.tokens = {30, 40, 120, 121, 50, 60, 70, 80, 90};
  e.key_pos = 1;
  e.pair_pos = 2;
  e.target = 46;
  EXPECT_EQ(example_to_jsonl(e),
            R"({"tokens":[30,40,120,121,50,60,70,80,90],"key_pos":1,"pair":[120,121],"target":46})");
  EXPECT_EQ(example_from_json(nlohmann::json::parse(example_to_jsonl(e)), Split::kTrain), e);
}

TEST(DatasetIo, ImportRejectsWrongTargets) {
  const DatasetBundle b = build_datasets({20, 5, 5, 2, PairPolicy::kHoldOut}, MappingTable::compositional());
  const auto dir = scratch("io_bad");
  export_bundle(b, dir);
  Example bad = b.train[0];
  bad.target += 1;
  std::ofstream(dir / "train.jsonl", std::ios::app) << example_to_jsonl(bad) << '\n';
  EXPECT_THROW(import_bundle(dir), std::invalid_argument);
}
