#include "brmil/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "brmil/aggregator.hpp"

namespace brmil {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ns(Clock::time_point a, Clock::time_point b) {
  return static_cast<double>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count());
}

/// One bag's work items, materialized so the downstream stages touch plain
/// contiguous storage instead of the dataset.
struct QueueItem {
  std::vector<Tensor> x;        // candidate windows
  std::vector<SiteAttr> attrs;  // (p, s_esa) per candidate
};

constexpr const char* kStageNames[] = {
    "cts_generation", "gather_all",    "cheap_scan", "selection",
    "expensive_encode", "tokenize_pack", "aggregation"};
constexpr int kStages = 7;

struct StageAccum {
  double ns[kStages] = {0, 0, 0, 0, 0, 0, 0};
  bool ran[kStages] = {false, false, false, false, false, false, false};

  void add(int stage, Clock::time_point a, Clock::time_point b) {
    ns[stage] += elapsed_ns(a, b);
    ran[stage] = true;
  }
};

/// Copies the iteration's slice of bags into a fresh queue. This stands in
/// for candidate-window production: every downstream stage reads only what
/// this stage wrote.
std::vector<QueueItem> materialize(const std::vector<Bag>& data, int offset, int batch) {
  std::vector<QueueItem> queue;
  queue.reserve(static_cast<std::size_t>(batch));
  const int total = static_cast<int>(data.size());
  for (int b = 0; b < batch; ++b) {
    const Bag& bag = data[static_cast<std::size_t>((offset + b) % total)];
    QueueItem item;
    item.x.reserve(bag.candidates.size());
    item.attrs.reserve(bag.candidates.size());
    for (const CtsCandidate& c : bag.candidates) {
      item.x.push_back(c.x.clone());
      item.attrs.push_back(SiteAttr{c.p, c.s_esa});
    }
    queue.push_back(std::move(item));
  }
  return queue;
}

/// Flat view of one queue item assembled for batched encoding.
struct Gathered {
  std::vector<const Tensor*> x;
  std::vector<const SiteAttr*> attrs;
};

Gathered gather(const QueueItem& item) {
  Gathered g;
  g.x.reserve(item.x.size());
  g.attrs.reserve(item.attrs.size());
  for (std::size_t i = 0; i < item.x.size(); ++i) {
    g.x.push_back(&item.x[i]);
    g.attrs.push_back(&item.attrs[i]);
  }
  return g;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// One bag through one pipeline, timing each stage it runs; returns the
/// bag-level prediction.
double run_bag(const PairModel& model, const QueueItem& item, Pipeline pipeline,
               const SelectorConfig& sel_cfg, int pack_k, StageAccum& acc) {
  const int n = static_cast<int>(item.x.size());
  if (n == 0) return 0.5;

  auto t0 = Clock::now();
  Gathered g = gather(item);
  auto t1 = Clock::now();
  acc.add(1, t0, t1);

  if (pipeline == Pipeline::Budgeted) {
    t0 = Clock::now();
    std::vector<double> z_tilde, p;
    const int d_student = model.config().encoder.d_student;
    Tensor h_tilde = Tensor::zeros({n, d_student});
    for (int i = 0; i < n; ++i) {
      CheapSignals sig = model.student().forward(*g.x[static_cast<std::size_t>(i)],
                                                 *g.attrs[static_cast<std::size_t>(i)]);
      z_tilde.push_back(sig.z_tilde.item());
      std::copy(sig.h_tilde.data(), sig.h_tilde.data() + d_student,
                h_tilde.data() + i * d_student);
      p.push_back(g.attrs[static_cast<std::size_t>(i)]->p);
    }
    t1 = Clock::now();
    acc.add(2, t0, t1);

    t0 = Clock::now();
    SelectionResult sel = select(sel_cfg, z_tilde, h_tilde, p);
    t1 = Clock::now();
    acc.add(3, t0, t1);

    t0 = Clock::now();
    std::vector<ExpensiveOut> outs;
    outs.reserve(sel.priority.size());
    for (int idx : sel.priority)
      outs.push_back(model.teacher().forward(*g.x[static_cast<std::size_t>(idx)],
                                             *g.attrs[static_cast<std::size_t>(idx)]));
    t1 = Clock::now();
    acc.add(4, t0, t1);

    t0 = Clock::now();
    std::vector<Tensor> tokens;
    tokens.reserve(outs.size());
    for (std::size_t j = 0; j < outs.size(); ++j) {
      const SiteAttr& a = *g.attrs[static_cast<std::size_t>(sel.priority[j])];
      tokens.push_back(tokenize(outs[j], a.s_esa, a.p));
    }
    TokenBatch packed = pack(tokens, pack_k);
    t1 = Clock::now();
    acc.add(5, t0, t1);

    t0 = Clock::now();
    const double y = model.aggregator().predict(packed);
    t1 = Clock::now();
    acc.add(6, t0, t1);
    return y;
  }

  if (pipeline == Pipeline::ScoreAllMax) {
    t0 = Clock::now();
    double best = -1e300;
    for (int i = 0; i < n; ++i) {
      ExpensiveOut out = model.teacher().forward(*g.x[static_cast<std::size_t>(i)],
                                                 *g.attrs[static_cast<std::size_t>(i)]);
      best = std::max(best, out.z.item());
    }
    t1 = Clock::now();
    acc.add(4, t0, t1);

    t0 = Clock::now();
    const double y = sigmoid(best);
    t1 = Clock::now();
    acc.add(6, t0, t1);
    return y;
  }

  t0 = Clock::now();
  std::vector<ExpensiveOut> outs;
  outs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    outs.push_back(model.teacher().forward(*g.x[static_cast<std::size_t>(i)],
                                           *g.attrs[static_cast<std::size_t>(i)]));
  t1 = Clock::now();
  acc.add(4, t0, t1);

  t0 = Clock::now();
  std::vector<Tensor> tokens;
  tokens.reserve(outs.size());
  for (int i = 0; i < n; ++i)
    tokens.push_back(tokenize(outs[static_cast<std::size_t>(i)],
                              g.attrs[static_cast<std::size_t>(i)]->s_esa,
                              g.attrs[static_cast<std::size_t>(i)]->p));
  TokenBatch packed = pack(tokens, n);
  t1 = Clock::now();
  acc.add(5, t0, t1);

  t0 = Clock::now();
  const double y = model.aggregator().predict(packed);
  t1 = Clock::now();
  acc.add(6, t0, t1);
  return y;
}

/// One timed iteration of one pipeline; returns end-to-end nanoseconds and
/// accumulates per-stage time. `sink` absorbs predictions so the work cannot
/// be optimized away.
double run_iteration(const PairModel& model, const std::vector<Bag>& data, int offset,
                     int batch, Pipeline pipeline, const SelectorConfig& sel_cfg,
                     int pack_k, StageAccum& acc, double& sink) {
  const auto t_begin = Clock::now();

  const auto t0 = Clock::now();
  std::vector<QueueItem> queue = materialize(data, offset, batch);
  const auto t1 = Clock::now();
  acc.add(0, t0, t1);

  for (const QueueItem& item : queue)
    sink += run_bag(model, item, pipeline, sel_cfg, pack_k, acc);

  return elapsed_ns(t_begin, Clock::now());
}

}  // namespace

std::string pipeline_name(Pipeline p) {
  switch (p) {
    case Pipeline::Budgeted: return "brmil";
    case Pipeline::ScoreAllMax: return "targetnet_like";
    case Pipeline::EncodeAllFull: return "naive";
  }
  throw ShapeError("pipeline_name: unknown pipeline");
}

Pipeline pipeline_from_name(const std::string& name) {
  if (name == "brmil") return Pipeline::Budgeted;
  if (name == "targetnet_like") return Pipeline::ScoreAllMax;
  if (name == "naive") return Pipeline::EncodeAllFull;
  throw ShapeError("pipeline_from_name: unknown pipeline '" + name + "'");
}

void BenchConfig::validate() const {
  if (ks.empty()) throw ShapeError("bench: need at least one budget");
  for (int k : ks)
    if (k < 1) throw ShapeError("bench: budgets must be >= 1");
  if (batch < 1) throw ShapeError("bench: batch must be >= 1");
  if (warmup < 0) throw ShapeError("bench: warmup must be >= 0");
  if (iters < 10) throw ShapeError("bench: timed iterations must be >= 10");
  if (pipelines.empty()) throw ShapeError("bench: need at least one pipeline");
}

double StageTimings::stage_sum() const {
  return cts_generation + gather_all + cheap_scan + selection + expensive_encode +
         tokenize_pack + aggregation;
}

double clock_granularity_ns() {
  static const double cached = [] {
    double best = 1e9;
    for (int rep = 0; rep < 9; ++rep) {
      const auto a = Clock::now();
      auto b = Clock::now();
      while (b == a) b = Clock::now();
      best = std::min(best, elapsed_ns(a, b));
    }
    return std::max(best, 1.0);
  }();
  return cached;
}

std::int64_t peak_rss_kb() {
  std::ifstream status("/proc/self/status");
  std::string line;
  while (std::getline(status, line)) {
    if (line.rfind("VmHWM:", 0) == 0) {
      std::istringstream fields(line.substr(6));
      std::int64_t kb = -1;
      fields >> kb;
      return kb;
    }
  }
  return -1;
}

StageTimings profile_one(const PairModel& model, const std::vector<Bag>& data,
                         const BenchConfig& cfg, Pipeline pipeline, int k) {
  cfg.validate();
  if (data.empty()) throw ShapeError("bench: empty dataset");

  SelectorConfig sel_cfg = model.config().selector;
  sel_cfg.kmax = k;
  sel_cfg.validate();

  StageTimings out;
  out.pipeline = pipeline;
  out.k = k;
  out.batch = cfg.batch;
  out.repetitions = cfg.iters;
  out.warmup = cfg.warmup;
  const int total = static_cast<int>(data.size());
  for (int b = 0; b < cfg.batch; ++b)
    out.pool_total += data[static_cast<std::size_t>(b % total)].n();

  double sink = 0.0;
  for (int it = 0; it < cfg.warmup; ++it) {
    StageAccum scratch;
    run_iteration(model, data, 0, cfg.batch, pipeline, sel_cfg, k, scratch, sink);
  }

  StageAccum acc;
  std::vector<double> end_to_end;
  end_to_end.reserve(static_cast<std::size_t>(cfg.iters));
  for (int it = 0; it < cfg.iters; ++it)
    end_to_end.push_back(
        run_iteration(model, data, 0, cfg.batch, pipeline, sel_cfg, k, acc, sink));
  if (!std::isfinite(sink)) throw NumericalError("bench: non-finite prediction");

  double* stage_means[kStages] = {&out.cts_generation,   &out.gather_all,
                                  &out.cheap_scan,       &out.selection,
                                  &out.expensive_encode, &out.tokenize_pack,
                                  &out.aggregation};
  const double floor_ns = 10.0 * clock_granularity_ns();
  for (int s = 0; s < kStages; ++s) {
    *stage_means[s] = acc.ns[s] / cfg.iters;
    if (acc.ran[s] && *stage_means[s] < floor_ns)
      out.below_resolution.push_back(kStageNames[s]);
  }

  double mean = 0.0;
  for (double v : end_to_end) mean += v;
  mean /= static_cast<double>(end_to_end.size());
  double var = 0.0;
  for (double v : end_to_end) var += (v - mean) * (v - mean);
  if (end_to_end.size() > 1) var /= static_cast<double>(end_to_end.size() - 1);
  out.end_to_end_mean = mean;
  out.end_to_end_std = std::sqrt(var);
  return out;
}

std::vector<StageTimings> profile_pipeline(const PairModel& model,
                                           const std::vector<Bag>& data,
                                           const BenchConfig& cfg) {
  cfg.validate();
  std::vector<StageTimings> out;
  for (Pipeline p : cfg.pipelines)
    for (int k : cfg.ks) out.push_back(profile_one(model, data, cfg, p, k));
  return out;
}

std::vector<double> pipeline_predictions(const PairModel& model,
                                         const std::vector<Bag>& data,
                                         Pipeline pipeline, int k) {
  if (data.empty()) throw ShapeError("bench: empty dataset");
  SelectorConfig sel_cfg = model.config().selector;
  sel_cfg.kmax = k;
  sel_cfg.validate();
  std::vector<QueueItem> queue =
      materialize(data, 0, static_cast<int>(data.size()));
  std::vector<double> out;
  out.reserve(queue.size());
  StageAccum scratch;
  for (const QueueItem& item : queue)
    out.push_back(run_bag(model, item, pipeline, sel_cfg, k, scratch));
  return out;
}

std::vector<ComplexityPoint> selector_complexity_probe(const std::vector<int>& ns,
                                                       const SelectorConfig& cfg,
                                                       std::uint64_t seed, int d_embed,
                                                       int reps) {
  cfg.validate();
  if (ns.empty()) throw ShapeError("complexity probe: need at least one pool size");
  if (reps < 1) throw ShapeError("complexity probe: reps must be >= 1");
  std::vector<ComplexityPoint> out;
  for (int n : ns) {
    if (n < 1) throw ShapeError("complexity probe: pool sizes must be >= 1");
    RngState rng(seed + static_cast<std::uint64_t>(n));
    std::vector<double> z(static_cast<std::size_t>(n)), p(static_cast<std::size_t>(n));
    Tensor h = Tensor::zeros({n, d_embed});
    for (int i = 0; i < n; ++i) {
      z[static_cast<std::size_t>(i)] = rng.normal();
      p[static_cast<std::size_t>(i)] = rng.uniform();
      for (int c = 0; c < d_embed; ++c) h.data()[i * d_embed + c] = rng.uniform(-1, 1);
    }
    ComplexityPoint point;
    point.n = n;
    point.heap_size = cfg.heap_size;
    point.wall_ns = 1e300;
    for (int rep = 0; rep < reps; ++rep) {
      const auto a = Clock::now();
      SelectionResult sel = select(cfg, z, h, p);
      const auto b = Clock::now();
      point.heap_comparisons = sel.stats.heap_comparisons;
      point.wall_ns = std::min(point.wall_ns, elapsed_ns(a, b));
    }
    out.push_back(point);
  }
  return out;
}

std::string emit_report(const std::vector<StageTimings>& timings) {
  if (timings.empty()) throw ShapeError("bench report: no timings");
  std::ostringstream csv;
  csv.precision(10);
  csv << "pipeline,k,batch,pool_total,reps,warmup,latency_mean_ns,latency_std_ns,"
         "throughput_bags_s,peak_rss_kb,cts_generation_ns,gather_all_ns,cheap_scan_ns,"
         "selection_ns,expensive_encode_ns,tokenize_pack_ns,aggregation_ns,flags\n";
  const std::int64_t rss = peak_rss_kb();
  for (const StageTimings& t : timings) {
    csv << pipeline_name(t.pipeline) << ',' << t.k << ',' << t.batch << ','
        << t.pool_total << ',' << t.repetitions << ',' << t.warmup << ','
        << t.end_to_end_mean << ',' << t.end_to_end_std << ','
        << (t.end_to_end_mean > 0 ? t.batch / (t.end_to_end_mean * 1e-9) : 0.0) << ','
        << rss;
    const double* stages[kStages] = {&t.cts_generation,   &t.gather_all,
                                     &t.cheap_scan,       &t.selection,
                                     &t.expensive_encode, &t.tokenize_pack,
                                     &t.aggregation};
    for (int s = 0; s < kStages; ++s) {
      const bool flagged =
          std::find(t.below_resolution.begin(), t.below_resolution.end(),
                    kStageNames[s]) != t.below_resolution.end();
      csv << ',';
      if (!flagged) csv << *stages[s];
    }
    csv << ',';
    for (std::size_t f = 0; f < t.below_resolution.size(); ++f) {
      if (f) csv << ';';
      csv << t.below_resolution[f];
    }
    csv << '\n';
  }
  return csv.str();
}

std::string emit_complexity_report(const std::vector<ComplexityPoint>& points) {
  if (points.empty()) throw ShapeError("complexity report: no points");
  std::ostringstream csv;
  csv.precision(10);
  csv << "n,heap_size,heap_comparisons,wall_ns\n";
  for (const ComplexityPoint& p : points)
    csv << p.n << ',' << p.heap_size << ',' << p.heap_comparisons << ',' << p.wall_ns
        << '\n';
  return csv.str();
}

}  // namespace brmil
