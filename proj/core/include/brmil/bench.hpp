#pragma once

// CPU stage-breakdown profiler. Times each stage of the budgeted pipeline
// (candidate materialization, gather, cheap scan, selection, expensive
// encoding, token packing, aggregation) across expensive-token budgets, and
// profiles two reference pipelines over the identical input queue:
//   targetnet_like — expensive scoring of every candidate + max pooling
//                    (budget-independent reference)
//   naive          — expensive encoding of every candidate + full attention
//                    over the whole pool (the quadratic-in-n reference)
// All readings come from a monotonic clock; stages whose mean lands under
// 10x the measured clock granularity are flagged and suppressed in reports.

#include <cstdint>
#include <string>
#include <vector>

#include "brmil/model.hpp"
#include "brmil/selector.hpp"

namespace brmil {

enum class Pipeline { Budgeted, ScoreAllMax, EncodeAllFull };

std::string pipeline_name(Pipeline p);
Pipeline pipeline_from_name(const std::string& name);

struct BenchConfig {
  std::vector<int> ks = {32, 64, 128, 256, 512};
  /// Bags processed per timed iteration; throughput is batch / latency.
  int batch = 8;
  int warmup = 10;
  int iters = 50;
  std::vector<Pipeline> pipelines = {Pipeline::Budgeted, Pipeline::ScoreAllMax,
                                     Pipeline::EncodeAllFull};

  void validate() const;
};

/// Aggregated timings for one (pipeline, budget) cell. Stage fields are mean
/// nanoseconds per iteration; a stage the pipeline never runs stays at zero
/// and is never flagged.
struct StageTimings {
  Pipeline pipeline = Pipeline::Budgeted;
  int k = 0;
  int batch = 0;
  std::int64_t pool_total = 0;  // windows per iteration, summed over the batch
  int repetitions = 0;
  int warmup = 0;

  double cts_generation = 0;
  double gather_all = 0;
  double cheap_scan = 0;
  double selection = 0;
  double expensive_encode = 0;
  double tokenize_pack = 0;
  double aggregation = 0;

  double end_to_end_mean = 0;
  double end_to_end_std = 0;

  /// Stage names whose mean fell below 10x clock granularity despite running.
  std::vector<std::string> below_resolution;

  double stage_sum() const;
};

/// Time every requested (pipeline, budget) cell over the same rotating queue
/// of bags. The workload is deterministic: equal seeds and inputs give equal
/// operation counts, only the clock readings vary.
std::vector<StageTimings> profile_pipeline(const PairModel& model,
                                           const std::vector<Bag>& data,
                                           const BenchConfig& cfg);

/// One cell; k is ignored by the reference pipelines (recorded for the grid).
StageTimings profile_one(const PairModel& model, const std::vector<Bag>& data,
                         const BenchConfig& cfg, Pipeline pipeline, int k);

/// The exact workload the profiler times, without timing: one prediction per
/// bag. At k equal to the model's own budget the budgeted pipeline matches
/// the model's forward pass.
std::vector<double> pipeline_predictions(const PairModel& model,
                                         const std::vector<Bag>& data,
                                         Pipeline pipeline, int k);

struct ComplexityPoint {
  int n = 0;
  int heap_size = 0;
  std::int64_t heap_comparisons = 0;
  double wall_ns = 0;  // best of `reps` runs
};

/// Runs the selector alone on synthetic score/embedding/position arrays of
/// each requested pool size and reports the instrumented heap-comparison
/// counts plus wall time. Counts are deterministic; time is best-of-reps.
std::vector<ComplexityPoint> selector_complexity_probe(const std::vector<int>& ns,
                                                       const SelectorConfig& cfg,
                                                       std::uint64_t seed = 2020,
                                                       int d_embed = 8, int reps = 3);

/// Peak resident set size of this process in kB (VmHWM), or -1 if unknown.
std::int64_t peak_rss_kb();

/// Measured monotonic-clock granularity in nanoseconds (cached).
double clock_granularity_ns();

/// CSV table, one row per (pipeline, budget): latency mean/std, throughput in
/// bags per second, peak RSS, per-stage means. Flagged stage cells are left
/// empty; the trailing column lists the flagged stage names.
std::string emit_report(const std::vector<StageTimings>& timings);

/// CSV for the complexity probe: n, heap size, comparisons, wall ns.
std::string emit_complexity_report(const std::vector<ComplexityPoint>& points);

}  // namespace brmil
