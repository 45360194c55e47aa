// Microbenchmarks for the hot paths: window alignment and scanning, both
// encoders, budgeted selection across pool sizes, and the set aggregator
// across budgets. Inputs are generated once per size outside the timed loop.

#include <benchmark/benchmark.h>

#include <map>
#include <string>
#include <vector>

#include "brmil/aggregator.hpp"
#include "brmil/encoders.hpp"
#include "brmil/model.hpp"
#include "brmil/selector.hpp"
#include "brmil/seqscan.hpp"
#include "brmil/synthetic.hpp"

namespace {

using namespace brmil;

std::string random_rna(int len, RngState& rng) {
  static const char* alphabet = "ACGU";
  std::string s;
  s.reserve(static_cast<std::size_t>(len));
  for (int i = 0; i < len; ++i)
    s += alphabet[rng.uniform_int(4)];
  return s;
}

const NucSeq& bench_mirna() {
  static const NucSeq m = parse_seq("UGAGGUAGUAGGUUGUAUAGUU", NucSeq::Role::mirna);
  return m;
}

void BM_EsaAlign(benchmark::State& state) {
  RngState rng(1);
  const std::string window = random_rna(kWindowLen, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(esa_align(bench_mirna(), window));
  }
}
BENCHMARK(BM_EsaAlign);

void BM_Scan(benchmark::State& state) {
  RngState rng(2);
  const NucSeq utr = parse_seq(random_rna(static_cast<int>(state.range(0)), rng),
                               NucSeq::Role::utr);
  std::size_t candidates = 0;
  for (auto _ : state) {
    const Bag bag = scan(bench_mirna(), utr, "bench");
    candidates += static_cast<std::size_t>(bag.n());
    benchmark::DoNotOptimize(bag);
  }
  state.counters["candidates"] =
      static_cast<double>(candidates) / static_cast<double>(state.iterations());
}
BENCHMARK(BM_Scan)->Arg(200)->Arg(1000)->Unit(benchmark::kMicrosecond);

Tensor bench_window() {
  RngState rng(3);
  const std::string w = random_rna(kWindowLen, rng);
  return encode_cts(bench_mirna(), w, esa_align(bench_mirna(), w));
}

void BM_StudentEncode(benchmark::State& state) {
  RngState rng(4);
  const EncoderConfig cfg;
  StudentEncoder enc(cfg, rng);
  const Tensor x = bench_window();
  const SiteAttr attr{0.4, 7.5};
  for (auto _ : state) {
    benchmark::DoNotOptimize(enc.forward(x, attr, nullptr));
  }
}
BENCHMARK(BM_StudentEncode)->Unit(benchmark::kMicrosecond);

void BM_TeacherEncode(benchmark::State& state) {
  RngState rng(5);
  const EncoderConfig cfg;
  TeacherEncoder enc(cfg, rng);
  const Tensor x = bench_window();
  const SiteAttr attr{0.4, 7.5};
  for (auto _ : state) {
    benchmark::DoNotOptimize(enc.forward(x, attr, nullptr));
  }
}
BENCHMARK(BM_TeacherEncode)->Unit(benchmark::kMicrosecond);

struct SelectInputs {
  std::vector<double> z, p;
  Tensor h;
};

const SelectInputs& select_inputs(int n) {
  static std::map<int, SelectInputs> cache;
  auto it = cache.find(n);
  if (it == cache.end()) {
    RngState rng(static_cast<std::uint64_t>(6 + n));
    SelectInputs in;
    in.z.resize(static_cast<std::size_t>(n));
    in.p.resize(static_cast<std::size_t>(n));
    in.h = Tensor::uniform({n, 8}, -1.0, 1.0, rng);
    for (int i = 0; i < n; ++i) {
      in.z[static_cast<std::size_t>(i)] = rng.normal();
      in.p[static_cast<std::size_t>(i)] = rng.uniform();
    }
    it = cache.emplace(n, std::move(in)).first;
  }
  return it->second;
}

void BM_Select(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const SelectInputs& in = select_inputs(n);
  SelectorConfig cfg;  // full-scale defaults, budget 64
  std::size_t comparisons = 0;
  for (auto _ : state) {
    const SelectionResult sel = select(cfg, in.z, in.h, in.p);
    comparisons += static_cast<std::size_t>(sel.stats.heap_comparisons);
    benchmark::DoNotOptimize(sel);
  }
  state.counters["heap_cmp"] =
      static_cast<double>(comparisons) / static_cast<double>(state.iterations());
  state.SetComplexityN(n);
}
BENCHMARK(BM_Select)->Arg(1000)->Arg(10000)->Arg(100000)->Unit(benchmark::kMicrosecond)
    ->Complexity(benchmark::oN);

TokenBatch packed_batch(const AggConfig& cfg, int k, RngState& rng) {
  std::vector<Tensor> tokens;
  for (int i = 0; i < k; ++i)
    tokens.push_back(Tensor::uniform({cfg.d_token}, -0.5, 0.5, rng));
  return pack(tokens, k, nullptr);
}

void BM_AggregatorForward(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  AggConfig cfg;  // full-scale defaults
  cfg.kmax = k;
  RngState rng(7);
  AggModel agg(cfg, rng);
  const TokenBatch batch = packed_batch(cfg, k, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(agg.forward(batch, nullptr));
  }
}
BENCHMARK(BM_AggregatorForward)->Arg(32)->Arg(128)->Arg(512)
    ->Unit(benchmark::kMillisecond);

void BM_AggregatorGrad(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  AggConfig cfg;
  cfg.kmax = k;
  RngState rng(8);
  AggModel agg(cfg, rng);
  std::vector<Tensor> tokens;
  for (int i = 0; i < k; ++i)
    tokens.push_back(Tensor::uniform({cfg.d_token}, -0.5, 0.5, rng));
  for (auto _ : state) {
    Tape tape;
    TokenBatch batch = pack(tokens, k, &tape);
    Tensor out = agg.forward(batch, &tape);
    tape.backward(out);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(BM_AggregatorGrad)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ForwardBag(benchmark::State& state) {
  SynthSpec spec;
  spec.n_pairs = 8;
  spec.mu_n = 4.0;
  spec.sigma_n = 0.3;
  spec.n_max = 128;
  spec.seed = 9;
  const std::vector<Bag> bags = gen_synthetic(spec);
  PairModelConfig cfg;  // full-scale defaults
  RngState rng(10);
  const PairModel model(cfg, rng);
  std::size_t i = 0;
  for (auto _ : state) {
    const BagForward fwd = model.forward_bag(bags[i % bags.size()]);
    ++i;
    benchmark::DoNotOptimize(fwd.y_hat);
  }
}
BENCHMARK(BM_ForwardBag)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
