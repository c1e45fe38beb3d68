#pragma once

#include <stdexcept>
#include <string>

namespace compctl::analysis {

enum class CommutativityFlag { kWith, kWithout };

struct PhaseLabel {
  int phase = 1;
  CommutativityFlag commutativity = CommutativityFlag::kWith;

  bool operator==(const PhaseLabel&) const = default;

  [[nodiscard]] std::string flag_name() const {
    return commutativity == CommutativityFlag::kWith ? "WITH" : "WITHOUT";
  }
};

inline constexpr double kIdThreshold = 0.9;
inline constexpr double kOodThreshold = 0.5;
inline constexpr double kCommutThreshold = 0.7;

/// Phase 1: ID accuracy below 0.9. Phase 3: otherwise, OOD accuracy at
/// least 0.5. Phase 2: the rest. The flag is WITHOUT iff commutativity is
/// below 0.7. Values exactly on a threshold count as passing it.
inline PhaseLabel classify_phase(double id_acc, double ood_acc, double commut_prob) {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(id_acc) || !in_unit(ood_acc) || !in_unit(commut_prob)) {
    throw std::invalid_argument("classify_phase: inputs must lie in [0, 1]");
  }
  PhaseLabel out;
  out.phase = id_acc < kIdThreshold ? 1 : (ood_acc >= kOodThreshold ? 3 : 2);
  out.commutativity = commut_prob < kCommutThreshold ? CommutativityFlag::kWithout : CommutativityFlag::kWith;
  return out;
}

}  // namespace compctl::analysis
