#pragma once

#include "compctl/corpus/mapping.hpp"
#include "compctl/corpus/vocabulary.hpp"
#include "compctl/numerics/rng.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace compctl::corpus {

enum class Split { kTrain, kIdTest, kOodTest };

inline const char* split_name(Split s) noexcept {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kIdTest: return "id_test";
    case Split::kOodTest: return "ood_test";
  }
  return "?";
}

enum class SplitRule { kTrainOk, kTestOk };

/// Key token x may sit at 0-based position `pos` in test data iff
/// x mod (n - 2) == pos, and in training data otherwise.
inline SplitRule split_of(int x, int pos, int n = kSeqLen) {
  if (n < 3 || pos < 0 || pos >= n) throw std::out_of_range("split_of: position out of range");
  return x % (n - 2) == pos ? SplitRule::kTestOk : SplitRule::kTrainOk;
}

/// Which anchor pairs training data may use.
enum class PairPolicy {
  kHoldOut,   ///< the 14 seen pairs; (c,d) and (d,c) only in OOD test data
  kAllPairs,  ///< all 16 pairs in training (reasoning-complexity experiments)
};

struct Example {
  std::array<int, kSeqLen> tokens{};
  int key_pos = 0;
  int pair_pos = 1;
  int target = 0;
  Split split = Split::kTrain;

  [[nodiscard]] int key() const noexcept { return tokens[static_cast<std::size_t>(key_pos)]; }
  [[nodiscard]] AnchorPair pair() const {
    return {*anchor_of_token(tokens[static_cast<std::size_t>(pair_pos)]),
            *anchor_of_token(tokens[static_cast<std::size_t>(pair_pos + 1)])};
  }

  bool operator==(const Example&) const = default;
};

inline bool pair_allowed(AnchorPair p, Split split, PairPolicy policy) noexcept {
  if (split == Split::kOodTest) return is_ood_pair(p);
  return policy == PairPolicy::kAllPairs || !is_ood_pair(p);
}

/// Throws std::invalid_argument when the example breaks a structural invariant.
inline void validate_example(const Example& e, const MappingTable& table) {
  if (e.pair_pos < 1 || e.pair_pos > kSeqLen - 2 || e.key_pos != e.pair_pos - 1) {
    throw std::invalid_argument("example: bad key/pair positions");
  }
  for (int i = 0; i < kSeqLen; ++i) {
    const int t = e.tokens[static_cast<std::size_t>(i)];
    const bool anchor_slot = i == e.pair_pos || i == e.pair_pos + 1;
    if (anchor_slot != is_anchor_token(t)) throw std::invalid_argument("example: anchor placement");
    if (!anchor_slot && (t < kKeyMin || t > kKeyMax)) {
      throw std::invalid_argument("example: numeric token outside [20, 100]");
    }
  }
  if (e.target != table.lookup(e.pair(), e.key())) throw std::invalid_argument("example: wrong target");
}

/// One sequence: the pair starts uniformly in {1..7}, the key token sits just
/// before it and is drawn uniformly from the values the split rule allows at
/// that position, and every other slot holds a uniform noise token.
inline Example gen_example(RngStream& rng, AnchorPair pair, Split split, const MappingTable& table,
                           PairPolicy policy = PairPolicy::kHoldOut) {
  if (!pair_allowed(pair, split, policy)) {
    throw std::invalid_argument("gen_example: anchor pair " + pair.name() + " not allowed in " +
                                split_name(split));
  }
  Example e;
  e.split = split;
  e.pair_pos = rng.uniform_int(1, kSeqLen - 2);
  e.key_pos = e.pair_pos - 1;
  const SplitRule want = split == Split::kTrain ? SplitRule::kTrainOk : SplitRule::kTestOk;

  std::array<int, kKeyCount> eligible{};
  std::size_t n_eligible = 0;
  for (int x = kKeyMin; x <= kKeyMax; ++x) {
    if (split_of(x, e.key_pos) == want) eligible[n_eligible++] = x;
  }
  if (n_eligible == 0) throw std::logic_error("gen_example: no eligible key token");

  for (int i = 0; i < kSeqLen; ++i) {
    auto& slot = e.tokens[static_cast<std::size_t>(i)];
    if (i == e.key_pos) {
      slot = eligible[rng.uniform_int(n_eligible)];
    } else if (i == e.pair_pos) {
      slot = token_of(pair.first);
    } else if (i == e.pair_pos + 1) {
      slot = token_of(pair.second);
    } else {
      slot = rng.uniform_int(kKeyMin, kKeyMax);
    }
  }
  e.target = table.lookup(pair, e.key());
  return e;
}

struct DatasetConfig {
  std::size_t n_train = 900000;
  std::size_t n_id_test = 10000;
  std::size_t n_ood_test = 10000;
  std::uint64_t seed = 0;
  PairPolicy policy = PairPolicy::kHoldOut;
};

struct DatasetBundle {
  std::vector<Example> train;
  std::vector<Example> id_test;
  std::vector<Example> ood_test;
  std::uint64_t seed = 0;
  PairPolicy policy = PairPolicy::kHoldOut;
  MappingTable table = MappingTable::compositional();

  [[nodiscard]] const std::vector<Example>& split(Split s) const {
    switch (s) {
      case Split::kTrain: return train;
      case Split::kIdTest: return id_test;
      case Split::kOodTest: return ood_test;
    }
    throw std::logic_error("unknown split");
  }
};

inline std::vector<AnchorPair> allowed_pairs(Split split, PairPolicy policy) {
  std::vector<AnchorPair> out;
  for (AnchorPair p : all_pairs()) {
    if (pair_allowed(p, split, policy)) out.push_back(p);
  }
  return out;
}

inline std::vector<Example> generate_split(std::size_t n, Split split, std::uint64_t seed,
                                           const MappingTable& table, PairPolicy policy) {
  RngStream rng(seed, split_name(split));
  const std::vector<AnchorPair> pairs = allowed_pairs(split, policy);
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const AnchorPair p = pairs[rng.uniform_int(pairs.size())];
    out.push_back(gen_example(rng, p, split, table, policy));
  }
  return out;
}

/// Pure function of (cfg, table).
inline DatasetBundle build_datasets(const DatasetConfig& cfg, const MappingTable& table) {
  if (cfg.n_train == 0 || cfg.n_id_test == 0 || cfg.n_ood_test == 0) {
    throw std::invalid_argument("build_datasets: split sizes must be positive");
  }
  DatasetBundle b;
  b.seed = cfg.seed;
  b.policy = cfg.policy;
  b.table = table;
  b.train = generate_split(cfg.n_train, Split::kTrain, cfg.seed, table, cfg.policy);
  b.id_test = generate_split(cfg.n_id_test, Split::kIdTest, cfg.seed, table, cfg.policy);
  b.ood_test = generate_split(cfg.n_ood_test, Split::kOodTest, cfg.seed, table, cfg.policy);
  return b;
}

}  // namespace compctl::corpus
