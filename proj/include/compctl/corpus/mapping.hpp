#pragma once

#include "compctl/corpus/vocabulary.hpp"
#include "compctl/numerics/rng.hpp"

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace compctl::corpus {

/// Symmetric anchor-pair groups eligible for perturbation, in the fixed order
/// used to pick the first k of them. Each entry names one member; its swap is
/// the other.
inline constexpr std::array<AnchorPair, 6> kPerturbationGroups{
    AnchorPair{Anchor::kA, Anchor::kB}, AnchorPair{Anchor::kA, Anchor::kC},
    AnchorPair{Anchor::kA, Anchor::kD}, AnchorPair{Anchor::kB, Anchor::kC},
    AnchorPair{Anchor::kB, Anchor::kD}, AnchorPair{Anchor::kC, Anchor::kD}};

inline constexpr std::array<int, 4> kPerturbationDeltas{+3, -3, +4, -4};

struct PerturbedGroup {
  int group = 0;      // index into kPerturbationGroups
  AnchorPair pair{};  // the listed member; pair.swapped() shares the mapping
  int delta = 0;

  bool operator==(const PerturbedGroup&) const = default;
};

/// Target for every (anchor pair, key token) combination.
class MappingTable {
 public:
  /// f(x; a1, a2) = g(g(x; a1); a2) for every pair.
  static MappingTable compositional() {
    MappingTable t;
    for (AnchorPair p : all_pairs()) {
      for (int x = kKeyMin; x <= kKeyMax; ++x) {
        t.set(p, x, apply_anchor(apply_anchor(x, p.first), p.second));
      }
    }
    return t;
  }

  /// Compositional table with the given groups shifted by their delta. Both
  /// orders of a group receive the identical mapping.
  static MappingTable with_perturbations(const std::vector<PerturbedGroup>& groups) {
    MappingTable t = compositional();
    for (const PerturbedGroup& g : groups) {
      if (g.group < 0 || g.group >= static_cast<int>(kPerturbationGroups.size())) {
        throw std::out_of_range("MappingTable: perturbation group out of range");
      }
      if (g.delta == 0) throw std::invalid_argument("MappingTable: perturbation delta must be nonzero");
      const AnchorPair p = kPerturbationGroups[static_cast<std::size_t>(g.group)];
      for (int x = kKeyMin; x <= kKeyMax; ++x) {
        const int y = t.lookup(p, x) + g.delta;
        if (!is_numeric_token(y)) throw std::out_of_range("MappingTable: perturbed target out of range");
        t.set(p, x, y);
        t.set(p.swapped(), x, y);
      }
      t.groups_.push_back({g.group, p, g.delta});
    }
    return t;
  }

  [[nodiscard]] int lookup(AnchorPair p, int x) const {
    if (x < kKeyMin || x > kKeyMax) throw std::out_of_range("MappingTable: key token outside [20, 100]");
    return targets_[static_cast<std::size_t>(p.index())][static_cast<std::size_t>(x - kKeyMin)];
  }

  [[nodiscard]] const std::vector<PerturbedGroup>& perturbed_groups() const noexcept {
    return groups_;
  }
  [[nodiscard]] int reasoning_complexity() const noexcept { return static_cast<int>(groups_.size()); }

  bool operator==(const MappingTable&) const = default;

 private:
  void set(AnchorPair p, int x, int y) {
    targets_[static_cast<std::size_t>(p.index())][static_cast<std::size_t>(x - kKeyMin)] = y;
  }

  std::array<std::array<int, kKeyCount>, kPairCount> targets_{};
  std::vector<PerturbedGroup> groups_;
};

inline int composite_target(int x, Anchor a1, Anchor a2, const MappingTable& table) {
  return table.lookup({a1, a2}, x);
}

/// Perturbs the first k groups of kPerturbationGroups. Each delta is drawn
/// from kPerturbationDeltas with a stream derived from `seed`; a draw that
/// would push a target out of the numeric range is rejected and redrawn.
inline MappingTable perturb_mappings(int k, std::uint64_t seed) {
  if (k < 0 || k > static_cast<int>(kPerturbationGroups.size())) {
    throw std::out_of_range("perturb_mappings: k must lie in [0, 6]");
  }
  const MappingTable base = MappingTable::compositional();
  RngStream rng(seed, "perturbation");
  std::vector<PerturbedGroup> groups;
  for (int g = 0; g < k; ++g) {
    const AnchorPair p = kPerturbationGroups[static_cast<std::size_t>(g)];
    for (;;) {
      const int delta = kPerturbationDeltas[rng.uniform_int(kPerturbationDeltas.size())];
      bool ok = true;
      for (int x = kKeyMin; x <= kKeyMax && ok; ++x) ok = is_numeric_token(base.lookup(p, x) + delta);
      if (ok) {
        groups.push_back({g, p, delta});
        break;
      }
    }
  }
  return MappingTable::with_perturbations(groups);
}

}  // namespace compctl::corpus
