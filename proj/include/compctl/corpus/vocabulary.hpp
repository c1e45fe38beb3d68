#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace compctl::corpus {

/// Numeric tokens 0..119 map to ids 0..119; the anchors a, b, c, d follow.
inline constexpr int kNumericTokens = 120;
inline constexpr int kVocabSize = 124;
inline constexpr int kKeyMin = 20;
inline constexpr int kKeyMax = 100;
inline constexpr int kKeyCount = kKeyMax - kKeyMin + 1;
inline constexpr int kSeqLen = 9;

enum class Anchor : int { kA = 0, kB = 1, kC = 2, kD = 3 };

inline constexpr std::array<Anchor, 4> kAnchors{Anchor::kA, Anchor::kB, Anchor::kC, Anchor::kD};

/// g(x; a) = x + offset(a).
inline constexpr std::array<int, 4> kAnchorOffsets{+5, +1, -2, -8};

constexpr int index_of(Anchor a) noexcept { return static_cast<int>(a); }
constexpr int offset_of(Anchor a) noexcept { return kAnchorOffsets[static_cast<std::size_t>(a)]; }
constexpr int token_of(Anchor a) noexcept { return kNumericTokens + index_of(a); }
constexpr char name_of(Anchor a) noexcept { return static_cast<char>('a' + index_of(a)); }

constexpr bool is_anchor_token(int token) noexcept {
  return token >= kNumericTokens && token < kVocabSize;
}
constexpr bool is_numeric_token(int token) noexcept {
  return token >= 0 && token < kNumericTokens;
}

inline std::optional<Anchor> anchor_of_token(int token) noexcept {
  if (!is_anchor_token(token)) return std::nullopt;
  return static_cast<Anchor>(token - kNumericTokens);
}

inline Anchor anchor_from_name(char c) {
  if (c < 'a' || c > 'd') throw std::invalid_argument(std::string("unknown anchor '") + c + "'");
  return static_cast<Anchor>(c - 'a');
}

/// g(x; anchor). Throws std::out_of_range when the result leaves the numeric range.
inline int apply_anchor(int x, Anchor anchor) {
  const int y = x + offset_of(anchor);
  if (!is_numeric_token(x) || !is_numeric_token(y)) {
    throw std::out_of_range("apply_anchor: result outside the numeric vocabulary");
  }
  return y;
}

struct AnchorPair {
  Anchor first = Anchor::kA;
  Anchor second = Anchor::kA;

  [[nodiscard]] constexpr int index() const noexcept {
    return 4 * index_of(first) + index_of(second);
  }
  [[nodiscard]] constexpr AnchorPair swapped() const noexcept { return {second, first}; }
  [[nodiscard]] std::string name() const { return {name_of(first), name_of(second)}; }

  static constexpr AnchorPair from_index(int i) noexcept {
    return {static_cast<Anchor>(i / 4), static_cast<Anchor>(i % 4)};
  }

  constexpr bool operator==(const AnchorPair&) const = default;
};

inline constexpr int kPairCount = 16;

constexpr bool is_ood_pair(AnchorPair p) noexcept {
  return (p.first == Anchor::kC && p.second == Anchor::kD) ||
         (p.first == Anchor::kD && p.second == Anchor::kC);
}

inline constexpr std::array<AnchorPair, 2> kOodPairs{AnchorPair{Anchor::kC, Anchor::kD},
                                                     AnchorPair{Anchor::kD, Anchor::kC}};

constexpr std::array<AnchorPair, 16> all_pairs() noexcept {
  std::array<AnchorPair, 16> out{};
  for (int i = 0; i < 16; ++i) out[static_cast<std::size_t>(i)] = AnchorPair::from_index(i);
  return out;
}

/// The 14 pairs that appear in training and ID test data, in index order.
constexpr std::array<AnchorPair, 14> seen_pairs() noexcept {
  std::array<AnchorPair, 14> out{};
  std::size_t n = 0;
  for (AnchorPair p : all_pairs()) {
    if (!is_ood_pair(p)) out[n++] = p;
  }
  return out;
}

}  // namespace compctl::corpus
