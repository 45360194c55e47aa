// Command-line front end: wires candidate scanning, budgeted selection,
// three-stage training, inference, the ablation/sweep/verification drivers
// and the stage profiler into one binary with shared configuration handling.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical failure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "brmil/bagio.hpp"
#include "brmil/bench.hpp"
#include "brmil/checkpoint.hpp"
#include "brmil/config.hpp"
#include "brmil/fasta.hpp"
#include "brmil/metrics.hpp"
#include "brmil/model.hpp"
#include "brmil/seqscan.hpp"
#include "brmil/synthetic.hpp"
#include "brmil/theory.hpp"
#include "brmil/training.hpp"

namespace {

using namespace brmil;

// ---------------------------------------------------------------------------
// Shared plumbing

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::int64_t seed = -1;  // < 0: keep per-module seeds from the config
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "key = value configuration file");
  cmd->add_option("--set", opts.sets,
                  "override one configuration key, e.g. --set selector.kmax=32");
  cmd->add_option("--seed", opts.seed,
                  "master seed threaded into every stochastic component");
}

GlobalConfig resolve_config(const CommonOpts& opts) {
  GlobalConfig cfg;
  if (!opts.config_path.empty()) cfg.apply(parse_config_file(opts.config_path));
  for (const std::string& kv : opts.sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.apply_one(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opts.seed >= 0) cfg.reseed(static_cast<std::uint64_t>(opts.seed));
  cfg.validate();
  if (cfg.threads > 1)
    std::cerr << "warning: threads=" << cfg.threads
              << " requested; running single-threaded\n";
  return cfg;
}

void write_text_file(const std::string& path, const std::string& schema,
                     const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out << "# " << schema << "\n" << body;
  if (!out) throw ParseError("write failed: " + path);
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(10);
  out << v;
  return out.str();
}

std::vector<Bag> load_data(const GlobalConfig& cfg, const std::string& bags_path) {
  if (!bags_path.empty()) return read_bags_file(bags_path);
  return gen_synthetic(cfg.synth);
}

PairModel make_model(const GlobalConfig& cfg, const std::string& checkpoint_path) {
  RngState rng(cfg.seed);
  PairModel model(cfg.model, rng);
  if (!checkpoint_path.empty()) {
    const Checkpoint ckp = load_checkpoint(checkpoint_path);
    if (ckp.meta.find("brmil.ckpt.v1") == std::string::npos)
      throw ParseError("checkpoint " + checkpoint_path +
                       ": missing brmil.ckpt.v1 schema marker");
    model.from_checkpoint(ckp);
  }
  return model;
}

std::string checkpoint_meta(const GlobalConfig& cfg) {
  nlohmann::json meta;
  meta["schema"] = "brmil.ckpt.v1";
  nlohmann::json jcfg;
  for (const auto& [key, value] : cfg.dump()) jcfg[key] = value;
  meta["config"] = std::move(jcfg);
  return meta.dump();
}

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) {
      try {
        out.push_back(std::stoi(item));
      } catch (const std::exception&) {
        throw ConfigError(what + ": bad integer '" + item + "'");
      }
    }
  if (out.empty()) throw ConfigError(what + ": empty list");
  return out;
}

// ---------------------------------------------------------------------------
// scan

struct ScanOpts {
  CommonOpts common;
  std::string mirna_path, utr_path, out_path;
  double threshold = 6.0;
};

void cmd_scan(const ScanOpts& o) {
  resolve_config(o.common);  // validates overrides even though scan has no knobs
  const std::vector<FastaRecord> mirnas = read_fasta_file(o.mirna_path);
  const std::vector<FastaRecord> utrs = read_fasta_file(o.utr_path);
  if (mirnas.size() != utrs.size())
    throw ParseError("record count mismatch: " + std::to_string(mirnas.size()) +
                     " guide sequences vs " + std::to_string(utrs.size()) + " targets");

  std::vector<Bag> bags;
  ScanDiagnostics diag;  // totals across pairs; scan() itself reports per call
  for (std::size_t i = 0; i < mirnas.size(); ++i) {
    const FastaRecord& mr = mirnas[i];
    const FastaRecord& ur = utrs[i];
    try {
      const NucSeq mirna = parse_seq(mr.seq, NucSeq::Role::mirna);
      const NucSeq utr = parse_seq(ur.seq, NucSeq::Role::utr);
      ScanDiagnostics one;
      bags.push_back(scan(mirna, utr, mr.id + "|" + ur.id, o.threshold, &one));
      diag.windows += one.windows;
      diag.below_threshold += one.below_threshold;
      diag.too_wide += one.too_wide;
    } catch (const std::exception& e) {
      throw ParseError("record '" + mr.id + "' / '" + ur.id + "' (lines " +
                       std::to_string(mr.line) + ", " + std::to_string(ur.line) +
                       "): " + e.what());
    }
  }

  write_bags_file(o.out_path, bags);

  if (bags.empty()) std::cerr << "warning: no input records; wrote an empty bag file\n";
  std::size_t total = 0;
  int empty = 0;
  std::map<int, int> histogram;  // bucket upper bound -> count
  for (const Bag& bag : bags) {
    total += static_cast<std::size_t>(bag.n());
    if (bag.n() == 0) ++empty;
    int top = 1;
    while (top < bag.n()) top *= 2;
    histogram[bag.n() == 0 ? 0 : top] += 1;
  }
  std::cout << "pairs: " << bags.size() << "\ncandidates: " << total
            << "\nwindows_scanned: " << diag.windows
            << "\nbelow_threshold: " << diag.below_threshold
            << "\ntoo_wide: " << diag.too_wide << "\nempty_pools: " << empty << "\n";
  for (const auto& [top, count] : histogram)
    std::cout << "pool_size<=" << top << ": " << count << "\n";
}

// ---------------------------------------------------------------------------
// select

struct SelectOpts {
  CommonOpts common;
  std::string bags_path, out_path, checkpoint;
};

void cmd_select(const SelectOpts& o) {
  const GlobalConfig cfg = resolve_config(o.common);
  const std::vector<Bag> bags = load_data(cfg, o.bags_path);
  if (o.checkpoint.empty())
    std::cerr << "warning: no checkpoint given; scoring with a seed-initialized model\n";
  const PairModel model = make_model(cfg, o.checkpoint);

  std::ostringstream csv;
  csv << "pair_id,n,k,s_size,k1,k2,s,priority,heap_comparisons,dedup_removed,"
         "fill_count,covered_bin_mass\n";
  for (const Bag& bag : bags) {
    if (bag.n() == 0) {
      csv << bag.pair_id << ",0," << cfg.model.selector.kmax << ",0,0,0,,,0,0,0,0\n";
      continue;
    }
    const PairModel::CheapPass cheap = model.cheap_scan(bag);
    const SelectionResult sel =
        select(cfg.model.selector, cheap.z_tilde, cheap.h_tilde, cheap.p);
    auto join = [](const std::vector<int>& xs) {
      std::string out;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(xs[i]);
      }
      return out;
    };
    csv << bag.pair_id << ',' << bag.n() << ',' << sel.K << ',' << sel.S.size() << ','
        << sel.K1 << ',' << sel.K2 << ',' << join(sel.S) << ',' << join(sel.priority)
        << ',' << sel.stats.heap_comparisons << ',' << sel.stats.dedup_removed << ','
        << sel.stats.fill_count << ','
        << fmt(covered_bin_mass(sel.S, cheap.z_tilde, cheap.p, cfg.model.selector.bins,
                                cfg.model.selector.tau_w))
        << '\n';
  }
  write_text_file(o.out_path, "brmil.select.v1", csv.str());
  std::cout << "selections: " << bags.size() << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  CommonOpts common;
  std::string bags_path, emit_synth_path, out_dir = ".";
  std::string checkpoint_in, checkpoint_out;
  std::string stages = "1,2,3";
};

void cmd_train(const TrainOpts& o) {
  GlobalConfig cfg = resolve_config(o.common);
  if (!o.bags_path.empty() && !o.emit_synth_path.empty())
    throw ConfigError("--bags and --emit-synth are mutually exclusive");

  std::vector<Bag> data = load_data(cfg, o.bags_path);
  if (!o.emit_synth_path.empty()) write_bags_file(o.emit_synth_path, data);

  const std::vector<int> stages = parse_int_list(o.stages, "--stages");
  for (int s : stages)
    if (s < 1 || s > 3) throw ConfigError("--stages entries must be 1, 2 or 3");

  PairModel model = make_model(cfg, o.checkpoint_in);

  std::ostringstream log;
  log << train_log_csv_header() << "\n";
  auto append_rows = [&log](const StageResult& res) {
    for (const EpochRow& row : res.log) log << train_log_csv_row(row) << "\n";
  };

  for (int s : stages) {
    if (s == 1) {
      const StageResult res = run_stage1(model, data, cfg.stage1, cfg.loss);
      append_rows(res);
      std::cout << "stage 1: best_epoch " << res.best_epoch << " best_val_pr_auc "
                << fmt(res.best_val_pr_auc) << "\n";
    } else if (s == 2) {
      const StageResult res = run_stage2(model, data, cfg.stage2, cfg.loss, cfg.distill);
      append_rows(res);
      std::cout << "stage 2: best_epoch " << res.best_epoch << "\n";
    } else {
      const StageResult res = run_stage3(model, data, cfg.stage3, cfg.loss);
      append_rows(res);
      std::cout << "stage 3: best_epoch " << res.best_epoch << " best_val_pr_auc "
                << fmt(res.best_val_pr_auc) << " budget_violations "
                << res.budget_violations << " max_expensive_calls "
                << res.max_expensive_calls << "\n";
    }
  }

  write_text_file(o.out_dir + "/train_log.csv", "brmil.trainlog.v1", log.str());
  const std::string ckpt_path =
      o.checkpoint_out.empty() ? o.out_dir + "/model.ckpt" : o.checkpoint_out;
  save_checkpoint(ckpt_path, model.to_checkpoint(checkpoint_meta(cfg)));
  std::cout << "checkpoint: " << ckpt_path << "\n";
}

// ---------------------------------------------------------------------------
// infer

struct InferOpts {
  CommonOpts common;
  std::string bags_path, out_path, checkpoint;
};

void cmd_infer(const InferOpts& o) {
  const GlobalConfig cfg = resolve_config(o.common);
  const std::vector<Bag> bags = load_data(cfg, o.bags_path);
  const PairModel model = make_model(cfg, o.checkpoint);

  std::ostringstream csv;
  csv << "pair_id,n,k,s_size,z_pair,y_hat,empty\n";
  int empties = 0;
  for (const Bag& bag : bags) {
    const BagForward fwd = model.forward_bag(bag);
    csv << bag.pair_id << ',' << fwd.n << ',' << cfg.model.selector.kmax << ','
        << fwd.selected << ',';
    if (fwd.empty) {
      ++empties;
      csv << ',' << fmt(0.5) << ",1\n";
    } else {
      csv << fmt(fwd.logit.item()) << ',' << fmt(fwd.y_hat) << ",0\n";
    }
  }
  write_text_file(o.out_path, "brmil.preds.v1", csv.str());
  if (empties > 0)
    std::cerr << "warning: " << empties << " empty pools pinned to y_hat=0.5\n";
  std::cout << "predictions: " << bags.size() << "\n";
}

// ---------------------------------------------------------------------------
// ablate

struct AblateOpts {
  CommonOpts common;
  std::string bags_path, out_path, checkpoint;
  std::string variants = "S0,S1,S2";
  std::string ks = "32,64";
  std::string seeds = "2020,2025,2026";
};

struct EvalOutcome {
  MetricSet metrics;
  double covered_mass = 0.0;
};

EvalOutcome evaluate_config(const GlobalConfig& cfg, const Checkpoint& ckp,
                            SelectorVariant variant, int k,
                            const std::vector<Bag>& bags) {
  GlobalConfig local = cfg;
  local.model.selector.variant = variant;
  local.model.selector.kmax = k;
  local.model.aggregator.kmax = k;
  RngState rng(local.seed);
  PairModel model(local.model, rng);
  model.from_checkpoint(ckp);

  std::vector<double> scores;
  std::vector<int> labels;
  double covered = 0.0;
  int covered_n = 0;
  for (const Bag& bag : bags) {
    if (!bag.label) throw ShapeError("ablate: bag '" + bag.pair_id + "' is unlabeled");
    const BagForward fwd = model.forward_bag(bag);
    scores.push_back(fwd.y_hat);
    labels.push_back(*bag.label);
    if (!fwd.empty) {
      const PairModel::CheapPass cheap = model.cheap_scan(bag);
      covered += covered_bin_mass(fwd.selection.S, cheap.z_tilde, cheap.p,
                                  local.model.selector.bins, local.model.selector.tau_w);
      ++covered_n;
    }
  }
  EvalOutcome out;
  out.metrics = compute_metrics(scores, labels);
  out.covered_mass = covered_n > 0 ? covered / covered_n : 0.0;
  return out;
}

void cmd_ablate(const AblateOpts& o) {
  const GlobalConfig cfg = resolve_config(o.common);
  const Checkpoint ckp = load_checkpoint(o.checkpoint);
  if (ckp.meta.find("brmil.ckpt.v1") == std::string::npos)
    throw ParseError("checkpoint " + o.checkpoint + ": missing brmil.ckpt.v1 marker");

  std::vector<SelectorVariant> variants;
  {
    std::istringstream in(o.variants);
    std::string item;
    while (std::getline(in, item, ','))
      if (!item.empty()) variants.push_back(selector_variant_from(item));
  }
  const std::vector<int> ks = parse_int_list(o.ks, "--ks");
  const std::vector<int> seeds = parse_int_list(o.seeds, "--seeds");
  if (variants.empty()) throw ConfigError("--variants: empty list");

  std::ostringstream csv;
  csv << "variant,k,seeds,pr_auc_mean,pr_auc_std,f1_mean,f1_std,covered_mass_mean,"
         "shared_checkpoint\n";
  for (SelectorVariant v : variants) {
    for (int k : ks) {
      std::vector<double> pr, f1, cov;
      for (int seed : seeds) {
        SynthSpec per_seed = cfg.synth;
        per_seed.seed = static_cast<std::uint64_t>(seed);
        const std::vector<Bag> bags =
            o.bags_path.empty() ? gen_synthetic(per_seed) : read_bags_file(o.bags_path);
        // With a fixed bag file the seed re-draws a bootstrap sample instead.
        std::vector<Bag> eval_bags;
        if (o.bags_path.empty()) {
          eval_bags = bags;
        } else {
          RngState rng(static_cast<std::uint64_t>(seed));
          for (std::size_t i = 0; i < bags.size(); ++i)
            eval_bags.push_back(bags[static_cast<std::size_t>(
                rng.uniform_int(static_cast<std::uint64_t>(bags.size())))]);
        }
        const EvalOutcome out = evaluate_config(cfg, ckp, v, k, eval_bags);
        pr.push_back(out.metrics.pr_auc);
        f1.push_back(out.metrics.f1_at_half);
        cov.push_back(out.covered_mass);
      }
      auto mean = [](const std::vector<double>& xs) {
        double m = 0.0;
        for (double x : xs) m += x;
        return m / static_cast<double>(xs.size());
      };
      auto dev = [&](const std::vector<double>& xs) {
        if (xs.size() < 2) return 0.0;
        const double m = mean(xs);
        double v2 = 0.0;
        for (double x : xs) v2 += (x - m) * (x - m);
        return std::sqrt(v2 / static_cast<double>(xs.size() - 1));
      };
      csv << to_string(v) << ',' << k << ',' << seeds.size() << ',' << fmt(mean(pr))
          << ',' << fmt(dev(pr)) << ',' << fmt(mean(f1)) << ',' << fmt(dev(f1)) << ','
          << fmt(mean(cov)) << ",1\n";
    }
  }
  write_text_file(o.out_path, "brmil.ablate.v1", csv.str());
  std::cout << "ablation rows: " << variants.size() * ks.size() << "\n";
}

// ---------------------------------------------------------------------------
// sweep-k / sweep-n

struct SweepOpts {
  CommonOpts common;
  std::string bags_path, out_path;
  std::vector<std::string> checkpoints;
  std::string grid;  // ks or caps
  std::string mode = "truncate";
};

void cmd_sweep(const SweepOpts& o, bool over_k) {
  const GlobalConfig cfg = resolve_config(o.common);
  if (o.checkpoints.empty()) throw ConfigError("need at least one --checkpoint");
  if (over_k && o.mode != "truncate" && o.mode != "retrain")
    throw ConfigError("--mode must be truncate or retrain");
  const std::vector<int> grid = parse_int_list(
      o.grid.empty() ? (over_k ? std::string("8,16,32,64,128,256,512")
                               : std::string("64,128,256,512,1024,2048"))
                     : o.grid,
      over_k ? "--ks" : "--caps");
  const std::vector<Bag> data = load_data(cfg, o.bags_path);

  std::vector<std::vector<SweepRow>> per_seed;
  for (const std::string& ckpt : o.checkpoints) {
    const PairModel model = make_model(cfg, ckpt);
    if (over_k && o.mode == "retrain")
      throw ConfigError(
          "--mode retrain needs one checkpoint per budget; run sweep-k once per "
          "budget-matched checkpoint and aggregate the truncate outputs instead");
    per_seed.push_back(over_k ? sweep_truncate(model, data, grid)
                              : sweep_pool_caps(model, data, grid));
  }
  const SweepResult result = aggregate_sweep(over_k ? "truncate" : "n_cap", per_seed);
  write_text_file(o.out_path, "brmil.sweep.v1", result.csv());
  std::cout << "sweep points: " << result.points.size() << "\n";
}

// ---------------------------------------------------------------------------
// theory

struct TheoryOpts {
  CommonOpts common;
  std::string bags_path, out_path, checkpoint;
  std::string mode = "exhaustive";
  std::string ks = "1,2,4,8";
  int samples = 256;
  int max_bags = 50;
};

void cmd_theory(const TheoryOpts& o) {
  const GlobalConfig cfg = resolve_config(o.common);
  if (o.mode != "exhaustive" && o.mode != "sampled")
    throw ConfigError("--mode must be exhaustive or sampled");
  const InfluenceMode mode =
      o.mode == "exhaustive" ? InfluenceMode::Exhaustive : InfluenceMode::Sampled;
  const std::vector<int> ks = parse_int_list(o.ks, "--ks");
  const std::vector<Bag> data = load_data(cfg, o.bags_path);
  const PairModel model = make_model(cfg, o.checkpoint);

  std::ostringstream csv;
  csv << "pair_id,count,k,big_g,radius,eps_k,delta_k,gap,bound,ok,advisory\n";
  int used = 0, skipped = 0;
  for (const Bag& bag : data) {
    if (used >= o.max_bags) break;
    const BagForward fwd = model.forward_bag(bag);
    if (fwd.empty || fwd.batch.count < 1) continue;
    if (mode == InfluenceMode::Exhaustive && fwd.batch.count > 12) {
      ++skipped;
      continue;
    }
    const InfluenceProfile prof = influence_weights(
        model.aggregator(), fwd.batch, mode, o.samples, cfg.seed);
    for (int k : ks) {
      const int keep = std::min(k, fwd.batch.count);
      if (keep < 1) continue;
      std::vector<int> rows(static_cast<std::size_t>(keep));
      for (int i = 0; i < keep; ++i) rows[static_cast<std::size_t>(i)] = i;
      const BoundReport rep = bound_check(model.aggregator(), fwd.batch, rows, prof);
      const SelectorGap gap = selector_gap(prof, rows);
      csv << bag.pair_id << ',' << fwd.batch.count << ',' << keep << ',' << fmt(prof.G)
          << ',' << fmt(prof.R) << ',' << fmt(rep.eps_k) << ',' << fmt(gap.delta_k)
          << ',' << fmt(rep.gap) << ',' << fmt(rep.bound) << ',' << (rep.ok ? 1 : 0)
          << ',' << (rep.advisory ? 1 : 0) << '\n';
    }
    ++used;
  }
  if (skipped > 0)
    std::cerr << "note: " << skipped
              << " pools above 12 live tokens skipped in exhaustive mode\n";
  write_text_file(o.out_path, "brmil.theory.v1", csv.str());
  std::cout << "verified pools: " << used << "\n";
}

// ---------------------------------------------------------------------------
// bench

struct BenchOpts {
  CommonOpts common;
  std::string bags_path, out_path, checkpoint;
  std::string complexity_out;
  std::string complexity_ns = "1000,10000,100000";
};

void cmd_bench(const BenchOpts& o) {
  const GlobalConfig cfg = resolve_config(o.common);
  if (o.out_path.empty() && o.complexity_out.empty())
    throw ConfigError("bench: need --out and/or --complexity-out");

  if (!o.out_path.empty()) {
    const std::vector<Bag> data = load_data(cfg, o.bags_path);
    const PairModel model = make_model(cfg, o.checkpoint);
    const std::vector<StageTimings> grid = profile_pipeline(model, data, cfg.bench);
    write_text_file(o.out_path, "brmil.bench.v1", emit_report(grid));
    std::cout << "bench rows: " << grid.size() << "\n";
  }
  if (!o.complexity_out.empty()) {
    const std::vector<int> ns = parse_int_list(o.complexity_ns, "--complexity-ns");
    const std::vector<ComplexityPoint> pts =
        selector_complexity_probe(ns, cfg.model.selector, cfg.seed);
    write_text_file(o.complexity_out, "brmil.complexity.v1",
                    emit_complexity_report(pts));
    std::cout << "complexity points: " << pts.size() << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"budgeted relational multi-instance pipeline"};
  app.require_subcommand(1);

  ScanOpts scan_opts;
  CLI::App* scan_cmd =
      app.add_subcommand("scan", "extract candidate windows from paired FASTA files");
  add_common(scan_cmd, scan_opts.common);
  scan_cmd->add_option("--mirna", scan_opts.mirna_path, "guide-sequence FASTA")
      ->required();
  scan_cmd->add_option("--utr", scan_opts.utr_path, "target-sequence FASTA")->required();
  scan_cmd->add_option("--out", scan_opts.out_path, "bag file to write")->required();
  scan_cmd->add_option("--threshold", scan_opts.threshold, "alignment score cutoff");

  SelectOpts select_opts;
  CLI::App* select_cmd =
      app.add_subcommand("select", "run cheap scoring and budgeted selection");
  add_common(select_cmd, select_opts.common);
  select_cmd->add_option("--bags", select_opts.bags_path,
                         "bag file (omit to use synthetic data)");
  select_cmd->add_option("--out", select_opts.out_path, "selection CSV")->required();
  select_cmd->add_option("--checkpoint", select_opts.checkpoint, "trained model");

  TrainOpts train_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "run the three training stages");
  add_common(train_cmd, train_opts.common);
  train_cmd->add_option("--bags", train_opts.bags_path,
                        "bag file (omit to train on synthetic data)");
  train_cmd->add_option("--emit-synth", train_opts.emit_synth_path,
                        "also write the generated synthetic bags here");
  train_cmd->add_option("--out-dir", train_opts.out_dir, "output directory");
  train_cmd->add_option("--stages", train_opts.stages, "subset of 1,2,3");
  train_cmd->add_option("--checkpoint-in", train_opts.checkpoint_in, "warm start");
  train_cmd->add_option("--checkpoint-out", train_opts.checkpoint_out,
                        "final checkpoint path");

  InferOpts infer_opts;
  CLI::App* infer_cmd = app.add_subcommand("infer", "budgeted inference over bags");
  add_common(infer_cmd, infer_opts.common);
  infer_cmd->add_option("--bags", infer_opts.bags_path, "bag file");
  infer_cmd->add_option("--out", infer_opts.out_path, "predictions CSV")->required();
  infer_cmd->add_option("--checkpoint", infer_opts.checkpoint, "trained model")
      ->required();

  AblateOpts ablate_opts;
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "selector-variant grid with seed statistics");
  add_common(ablate_cmd, ablate_opts.common);
  ablate_cmd->add_option("--bags", ablate_opts.bags_path,
                         "bag file (omit for per-seed synthetic data)");
  ablate_cmd->add_option("--out", ablate_opts.out_path, "ablation CSV")->required();
  ablate_cmd->add_option("--checkpoint", ablate_opts.checkpoint, "shared checkpoint")
      ->required();
  ablate_cmd->add_option("--variants", ablate_opts.variants, "comma list of variants");
  ablate_cmd->add_option("--ks", ablate_opts.ks, "comma list of budgets");
  ablate_cmd->add_option("--seeds", ablate_opts.seeds, "comma list of seeds");

  SweepOpts sweep_k_opts;
  CLI::App* sweep_k_cmd =
      app.add_subcommand("sweep-k", "metrics and truncation gap across budgets");
  add_common(sweep_k_cmd, sweep_k_opts.common);
  sweep_k_cmd->add_option("--bags", sweep_k_opts.bags_path, "evaluation bags");
  sweep_k_cmd->add_option("--out", sweep_k_opts.out_path, "sweep CSV")->required();
  sweep_k_cmd->add_option("--checkpoint", sweep_k_opts.checkpoints,
                          "one per training seed")
      ->required();
  sweep_k_cmd->add_option("--ks", sweep_k_opts.grid, "comma list of budgets");
  sweep_k_cmd->add_option("--mode", sweep_k_opts.mode, "truncate or retrain");

  SweepOpts sweep_n_opts;
  CLI::App* sweep_n_cmd =
      app.add_subcommand("sweep-n", "metrics across visible-pool caps at fixed budget");
  add_common(sweep_n_cmd, sweep_n_opts.common);
  sweep_n_cmd->add_option("--bags", sweep_n_opts.bags_path, "evaluation bags");
  sweep_n_cmd->add_option("--out", sweep_n_opts.out_path, "sweep CSV")->required();
  sweep_n_cmd->add_option("--checkpoint", sweep_n_opts.checkpoints,
                          "one per training seed")
      ->required();
  sweep_n_cmd->add_option("--caps", sweep_n_opts.grid, "comma list of pool caps");

  TheoryOpts theory_opts;
  CLI::App* theory_cmd =
      app.add_subcommand("theory", "influence weights and truncation-bound audit");
  add_common(theory_cmd, theory_opts.common);
  theory_cmd->add_option("--bags", theory_opts.bags_path, "bag file");
  theory_cmd->add_option("--out", theory_opts.out_path, "audit CSV")->required();
  theory_cmd->add_option("--checkpoint", theory_opts.checkpoint, "trained model");
  theory_cmd->add_option("--mode", theory_opts.mode, "exhaustive or sampled");
  theory_cmd->add_option("--ks", theory_opts.ks, "kept-prefix sizes");
  theory_cmd->add_option("--samples", theory_opts.samples, "sampled-mode state budget");
  theory_cmd->add_option("--max-bags", theory_opts.max_bags, "pools to audit");

  BenchOpts bench_opts;
  CLI::App* bench_cmd =
      app.add_subcommand("bench", "stage-breakdown profiling and selector complexity");
  add_common(bench_cmd, bench_opts.common);
  bench_cmd->add_option("--bags", bench_opts.bags_path, "workload bags");
  bench_cmd->add_option("--out", bench_opts.out_path, "timings CSV");
  bench_cmd->add_option("--checkpoint", bench_opts.checkpoint, "model to time");
  bench_cmd->add_option("--complexity-out", bench_opts.complexity_out,
                        "selector complexity CSV");
  bench_cmd->add_option("--complexity-ns", bench_opts.complexity_ns,
                        "pool sizes for the complexity probe");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (scan_cmd->parsed()) cmd_scan(scan_opts);
    if (select_cmd->parsed()) cmd_select(select_opts);
    if (train_cmd->parsed()) cmd_train(train_opts);
    if (infer_cmd->parsed()) cmd_infer(infer_opts);
    if (ablate_cmd->parsed()) cmd_ablate(ablate_opts);
    if (sweep_k_cmd->parsed()) cmd_sweep(sweep_k_opts, true);
    if (sweep_n_cmd->parsed()) cmd_sweep(sweep_n_opts, false);
    if (theory_cmd->parsed()) cmd_theory(theory_opts);
    if (bench_cmd->parsed()) cmd_bench(bench_opts);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
