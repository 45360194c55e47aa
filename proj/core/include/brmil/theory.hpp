#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "brmil/aggregator.hpp"
#include "brmil/metrics.hpp"
#include "brmil/model.hpp"

namespace brmil {

/// Any scalar set function evaluated on a masked token batch; the harness
/// differentiates it with respect to the token matrix.
using MaskedScalarFn = std::function<Tensor(const TokenBatch&, Tape*)>;

enum class InfluenceMode {
  /// Exact sensitivity suprema over every masked state (live count <= 12).
  Exhaustive,
  /// Suprema over a sampled subset of states: an under-estimate, so any
  /// bound built on it is advisory only.
  Sampled,
};

/// Per-token sensitivity summary of a scalar set function on one batch.
/// Row indices match the batch; rows that are masked in the input batch
/// carry zero sensitivity and are never unmasked.
struct InfluenceProfile {
  std::vector<double> w;  // normalized weights, >= 0, summing to 1
  std::vector<double> g;  // raw per-row sensitivity suprema
  double G = 0.0;         // sum of g: the per-bag Lipschitz surrogate
  double R = 0.0;         // token radius: max row 2-norm incl. the zero pad
  bool exact = true;      // exhaustive suprema vs sampled under-estimates

  int count() const { return static_cast<int>(w.size()); }
  /// Weight mass captured by the given row indices.
  double covered_mass(const std::vector<int>& rows) const;
  /// Tail mass beyond the K largest weights; psi(0) = 1, psi(count) = 0.
  double psi(int k) const;
};

/// g_i = max over masked states of the 2-norm of d f / d token_i, taken
/// across every state in which row i is live (it is zero elsewhere).
/// Exhaustive mode enumerates all states of the live rows; Sampled mode
/// evaluates the full state plus random states drawn from sample_seed
/// (falling back to full enumeration when the budget covers it).
InfluenceProfile influence_weights(const MaskedScalarFn& f, const TokenBatch& batch,
                                   InfluenceMode mode, int sample_states = 256,
                                   std::uint64_t sample_seed = 99);
InfluenceProfile influence_weights(const AggModel& agg, const TokenBatch& batch,
                                   InfluenceMode mode, int sample_states = 256,
                                   std::uint64_t sample_seed = 99);

/// Mass of the K largest weights and the remaining tail, with K clamped to
/// the vector length. The greedy sorted sum is provably the best-K optimum.
struct BestKMass {
  double covered = 0.0;
  double psi = 0.0;
};
BestKMass best_k_mass(const std::vector<double>& w, int k);

/// Uncovered mass eps_K of a selection and its suboptimality delta_K
/// against the best same-size subset. delta_K >= 0 always; a negative
/// value beyond rounding noise raises NumericalError.
struct SelectorGap {
  double eps_k = 0.0;
  double delta_k = 0.0;
};
SelectorGap selector_gap(const InfluenceProfile& profile, const std::vector<int>& rows);

/// One truncation-error check: gap = |f(full) - f(masked to rows)| against
/// the sensitivity bound 2 * G * R * eps_K. chain_sum is the summed
/// one-row-at-a-time masking gaps, which upper-bounds gap by the triangle
/// inequality.
struct BoundReport {
  double full = 0.0;
  double masked = 0.0;
  double gap = 0.0;
  double bound = 0.0;
  double eps_k = 0.0;
  double chain_sum = 0.0;
  bool ok = false;        // gap <= bound * (1 + 1e-6)
  bool advisory = false;  // profile was sampled: bound not sound
};
BoundReport bound_check(const MaskedScalarFn& f, const TokenBatch& batch,
                        const std::vector<int>& rows, const InfluenceProfile& profile);
BoundReport bound_check(const AggModel& agg, const TokenBatch& batch,
                        const std::vector<int>& rows, const InfluenceProfile& profile);

/// One evaluated operating point of a budget or pool-cap sweep.
struct SweepRow {
  int x = 0;  // budget K or visible-pool cap
  MetricSet metrics;
  double mean_gap = 0.0;  // mean |reference prediction - operating prediction|
};

/// Evaluates one trained model at several budgets by masking all but the
/// first k selected tokens; the reference prediction uses the full budget.
std::vector<SweepRow> sweep_truncate(const PairModel& model, const std::vector<Bag>& data,
                                     const std::vector<int>& ks);

/// Evaluates one trained model while capping the visible candidate pool;
/// the reference prediction sees the uncapped pool.
std::vector<SweepRow> sweep_pool_caps(const PairModel& model, const std::vector<Bag>& data,
                                      const std::vector<int>& caps);

/// Mean and sample standard deviation over per-seed sweep rows.
struct SweepPoint {
  int x = 0;
  double pr_auc_mean = 0.0, pr_auc_std = 0.0;
  double f1_mean = 0.0, f1_std = 0.0;
  double gap_mean = 0.0, gap_std = 0.0;
};

struct SweepResult {
  std::string mode;  // "truncate", "retrain" or "n_cap"
  std::vector<SweepPoint> points;
  std::string csv() const;
};

/// Folds per-seed rows (one inner vector per seed, aligned by position)
/// into mean +- sample std. Requires at least one seed and identical x
/// grids across seeds.
SweepResult aggregate_sweep(const std::string& mode,
                            const std::vector<std::vector<SweepRow>>& per_seed);

}  // namespace brmil
