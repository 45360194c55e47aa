#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brmil/seqscan.hpp"

namespace brmil {

enum class SynthRule {
  /// Bag is positive iff it contains at least one strong planted site:
  /// solvable by per-window scoring plus max pooling.
  SingleStrongest,
  /// Positive bags hold coop_k strong sites in distinct position bins,
  /// negative bags coop_k-1: no single-window rule pooled by max can
  /// separate them.
  Cooperative,
};

SynthRule synth_rule_from(const std::string& name);
std::string to_string(SynthRule rule);

/// Planted-signal bag generator. Pool sizes follow a clipped log-normal;
/// each window's tensor carries a motif block whose intact-column count
/// encodes the planted strength.
struct SynthSpec {
  int n_pairs = 256;
  double mu_n = 3.0;     // log-normal location of the pool size
  double sigma_n = 0.8;  // log-normal scale
  int n_max = 256;
  SynthRule rule = SynthRule::SingleStrongest;
  int coop_k = 3;
  int position_bins = 8;  // distinct-bin placement for cooperative signals
  double noise = 0.0;     // per-motif-column corruption probability
  std::uint64_t seed = 2020;

  void validate() const;
};

/// Motif block layout inside each window tensor: columns
/// [kSynthMotifStart, kSynthMotifStart + kSynthMotifLen).
inline constexpr int kSynthMotifStart = 20;
inline constexpr int kSynthMotifLen = 10;
/// Planted strengths: background windows draw below kSynthBackgroundTop,
/// signal windows above kSynthSignalFloor; the window label threshold sits
/// between them.
inline constexpr double kSynthBackgroundTop = 0.5;
inline constexpr double kSynthSignalFloor = 0.8;
inline constexpr double kSynthInstanceThreshold = 0.65;

/// Deterministic per seed. Labels are balanced coin flips; the candidate
/// pool of each bag is constructed to satisfy the chosen rule exactly.
std::vector<Bag> gen_synthetic(const SynthSpec& spec);

/// Reads the planted strength back out of a window tensor: the fraction of
/// intact motif columns. Inverse of the generator's encoding when noise = 0.
double planted_strength(const Tensor& x);

}  // namespace brmil
