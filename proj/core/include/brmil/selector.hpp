#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brmil/tensor.hpp"

namespace brmil {

enum class SelectorVariant { S0, S1, S2 };

SelectorVariant selector_variant_from(const std::string& name);
std::string to_string(SelectorVariant v);

struct SelectorConfig {
  int kmax = 64;
  double rho = 0.5;        // share of the budget spent on pure Top-K
  int bins = 16;           // position bins (B)
  int heap_size = 8;       // per-bin heap capacity (m)
  int hash_bits = 8;       // SimHash key width (b)
  int per_key_cap = 2;     // max survivors per key within a bin (c)
  int quota_top = 4;       // scores summed per bin for quota weights (t)
  double tau_w = 1.0;      // quota-weight temperature
  SelectorVariant variant = SelectorVariant::S2;
  /// Key source: sign bits of the first hash_bits coordinates (default), or
  /// of hash_bits fixed random projections derived from simhash_seed.
  bool simhash_random_proj = false;
  std::uint64_t simhash_seed = 12345;

  void validate() const;
};

struct SelectionStats {
  std::vector<int> bin_occupancy;      // after Step B (before dedup)
  int dedup_removed = 0;               // Step C evictions
  int fill_count = 0;                  // Step E top-up picks
  /// Admission score comparisons against the per-bin heaps (one per candidate
  /// that meets a full heap); intra-heap reordering is excluded.
  std::int64_t heap_comparisons = 0;
};

struct SelectionResult {
  std::vector<int> S;         // ascending original indices, |S| = min(K, n)
  /// Same members as S, ordered by (z̃ descending, index ascending); the
  /// packing order that keeps the strongest sites when a budget truncates.
  std::vector<int> priority;
  int K = 0;
  int K1 = 0;
  int K2 = 0;
  SelectionStats stats;
};

/// Budgeted deterministic subset selection over cheap signals.
/// S0: pure Top-K. S1: Top-K1 + position-bin quotas. S2: S1 + per-bin
/// SimHash dedup. Ties always break toward the lower original index.
SelectionResult select(const SelectorConfig& cfg, const std::vector<double>& z_tilde,
                       const Tensor& h_tilde, const std::vector<double>& p);

// Individual stages, exposed for oracle tests and the complexity probe.

/// Exactly the k largest-score indices.
std::vector<int> step_a_topk(const std::vector<double>& z_tilde, int k);

/// Bins candidates by position (bin = min(⌊p·B⌋, B−1)) keeping each bin's
/// top-m by score via a bounded heap; bins come back best-first.
/// comparisons, when given, accumulates the number of score comparisons.
std::vector<std::vector<int>> step_b_bins(const std::vector<double>& p,
                                          const std::vector<double>& z_tilde, int bins,
                                          int heap_size,
                                          std::int64_t* comparisons = nullptr);

std::uint64_t simhash_key(const SelectorConfig& cfg, const Tensor& h_tilde, int row);

/// Caps each SimHash key to per_key_cap survivors per bin (highest score
/// kept). removed, when given, counts evictions.
std::vector<std::vector<int>> step_c_dedup(const SelectorConfig& cfg,
                                           const Tensor& h_tilde,
                                           const std::vector<double>& z_tilde,
                                           const std::vector<std::vector<int>>& bins,
                                           int* removed = nullptr);

/// Largest-remainder apportionment of K2 over bin weights
/// w_b = Σ_{i∈top-t(b)} exp(z̃_i/τ_w), honoring occupancy caps and granting
/// every nonempty bin at least one slot when K2 allows.
std::vector<int> step_d_quota(const std::vector<std::vector<int>>& bins,
                              const std::vector<double>& z_tilde, int k2, int quota_top,
                              double tau_w);

/// Union of the Step A picks and the per-bin quota picks, topped up to K by
/// descending score from the untouched remainder.
SelectionResult step_e_merge(const std::vector<int>& step_a,
                             const std::vector<int>& quota_picks,
                             const std::vector<double>& z_tilde, int k, int n);

/// View of a pool truncated to the n_cap highest-score candidates; original
/// indices are preserved (ascending) for traceability.
struct CappedPool {
  std::vector<int> original_index;
  std::vector<double> z_tilde;
  std::vector<double> p;
  Tensor h_tilde;  // [n', d]
};

CappedPool visible_pool_cap(const std::vector<double>& z_tilde, const Tensor& h_tilde,
                            const std::vector<double>& p, int n_cap);

/// Fraction of the exp(z̃/τ)-weighted position-bin mass lying in bins that
/// hold at least one selected candidate. 1.0 when every nonempty bin is
/// covered; higher is better coverage.
double covered_bin_mass(const std::vector<int>& selected,
                        const std::vector<double>& z_tilde,
                        const std::vector<double>& p, int bins, double tau_w = 1.0);

}  // namespace brmil
