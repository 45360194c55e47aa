#include "brmil/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace brmil {

namespace {

struct LabeledWindow {
  Tensor x;
  SiteAttr u;
  int y = 0;
};

std::vector<LabeledWindow> gather_windows(const std::vector<Bag>& data,
                                          const std::vector<int>& bag_ids) {
  std::vector<LabeledWindow> out;
  for (int b : bag_ids) {
    for (const CtsCandidate& c : data[static_cast<std::size_t>(b)].candidates) {
      if (!c.inst_label) continue;
      out.push_back({c.x, SiteAttr{c.p, c.s_esa}, *c.inst_label});
    }
  }
  return out;
}

void shuffle_ids(std::vector<int>& ids, RngState rng) {
  for (int i = static_cast<int>(ids.size()) - 1; i > 0; --i)
    std::swap(ids[static_cast<std::size_t>(i)],
              ids[static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)))]);
}

double grad_norm(const ParamSet& params) {
  double sq = 0.0;
  for (const auto& [unused, t] : params.items()) {
    const double* g = t.grad_if();
    if (!g) continue;
    for (int i = 0; i < t.numel(); ++i) sq += g[i] * g[i];
  }
  return std::sqrt(sq);
}

void check_finite_loss(double loss, int stage, int epoch) {
  if (!std::isfinite(loss))
    throw NumericalError("stage " + std::to_string(stage) + " epoch " +
                         std::to_string(epoch) + ": loss became " +
                         std::to_string(loss));
}

std::string stage_meta(int stage, int epoch, double val_pr_auc) {
  nlohmann::json meta;
  meta["schema"] = "brmil.ckpt.v1";
  meta["stage"] = stage;
  meta["epoch"] = epoch;
  meta["val_pr_auc"] = val_pr_auc;
  return meta.dump();
}

/// Scores a window list with either encoder head and summarizes it.
template <typename Logit>
EpochRow eval_windows(int stage, int epoch, const std::string& split,
                      const std::vector<LabeledWindow>& windows, const LossConfig& lcfg,
                      Logit&& logit_of) {
  EpochRow row;
  row.stage = stage;
  row.epoch = epoch;
  row.split = split;
  if (windows.empty()) return row;
  std::vector<double> probs;
  std::vector<int> labels;
  double loss = 0.0;
  for (const LabeledWindow& w : windows) {
    Tensor z = logit_of(w);
    loss += focal_mix(z, w.y, lcfg).item();
    probs.push_back(1.0 / (1.0 + std::exp(-z.item())));
    labels.push_back(w.y);
  }
  row.loss = loss / static_cast<double>(windows.size());
  row.metrics = compute_metrics(probs, labels);
  return row;
}

double selection_score(const EpochRow& val_row) {
  // Rank checkpoints by validation ranking quality; fall back to accuracy
  // when the split lacks one class.
  return val_row.metrics.pr_auc_defined ? val_row.metrics.pr_auc
                                        : val_row.metrics.accuracy;
}

}  // namespace

Sgd::Sgd(std::vector<Tensor> params, double lr, double momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
  velocity_.reserve(params_.size());
  for (const Tensor& t : params_)
    velocity_.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i];
    const double* g = t.grad_if();
    if (!g) continue;
    std::vector<double>& v = velocity_[i];
    for (int j = 0; j < t.numel(); ++j) {
      v[static_cast<std::size_t>(j)] =
          momentum_ * v[static_cast<std::size_t>(j)] + g[j];
      t.data()[j] -= lr_ * v[static_cast<std::size_t>(j)];
    }
  }
}

void Sgd::zero_grads() {
  for (Tensor& t : params_) t.zero_grad();
}

void StageConfig::validate() const {
  auto bad = [](const std::string& what) { throw ShapeError("stage config: " + what); };
  if (stage < 1 || stage > 3) bad("stage must be 1, 2 or 3");
  if (epochs < 1) bad("epochs must be >= 1");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (lr <= 0.0) bad("lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) bad("momentum outside [0, 1)");
  if (warmup_epochs < 0 || warmup_epochs > epochs) bad("warmup must sit in [0, epochs]");
  if (val_fraction < 0.0 || val_fraction >= 1.0) bad("val_fraction outside [0, 1)");
}

std::string train_log_csv_header() {
  return "stage,epoch,split,loss,kd," + metrics_csv_header();
}

std::string train_log_csv_row(const EpochRow& row) {
  std::ostringstream out;
  out.precision(10);
  out << row.stage << "," << row.epoch << "," << row.split << "," << row.loss << ","
      << row.kd << "," << metrics_csv_row(row.metrics);
  return out.str();
}

std::string StageResult::csv() const {
  std::ostringstream out;
  out << train_log_csv_header() << "\n";
  for (const EpochRow& row : log) out << train_log_csv_row(row) << "\n";
  return out.str();
}

void split_bags(int n, double val_fraction, std::uint64_t seed,
                std::vector<int>* train, std::vector<int>* val) {
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
  shuffle_ids(ids, RngState(seed).split(0xDA7A));
  const int n_val = static_cast<int>(std::floor(val_fraction * n));
  train->assign(ids.begin(), ids.end() - n_val);
  val->assign(ids.end() - n_val, ids.end());
}

StageResult run_stage1(PairModel& model, const std::vector<Bag>& data,
                       const StageConfig& cfg, const LossConfig& lcfg) {
  cfg.validate();
  lcfg.validate();
  StageResult res;
  std::vector<int> train_ids, val_ids;
  split_bags(static_cast<int>(data.size()), cfg.val_fraction, cfg.seed, &train_ids,
             &val_ids);
  std::vector<LabeledWindow> train = gather_windows(data, train_ids);
  std::vector<LabeledWindow> val = gather_windows(data, val_ids);
  if (train.empty()) throw ShapeError("stage 1: no labeled windows in the training split");

  Sgd opt(model.teacher().params().tensors(), cfg.lr, cfg.momentum);
  const RngState root(cfg.seed);

  auto teacher_logit = [&](const LabeledWindow& w) {
    return model.teacher().forward(w.x, w.u).z;
  };
  auto log_epoch = [&](int epoch) {
    res.log.push_back(eval_windows(1, epoch, "train", train, lcfg, teacher_logit));
    EpochRow vrow = eval_windows(1, epoch, "val", val, lcfg, teacher_logit);
    if (!val.empty()) res.log.push_back(vrow);
    const EpochRow& pick = val.empty() ? res.log.back() : vrow;
    const double score = selection_score(pick);
    if (res.best.tensors.empty() || score > res.best_val_pr_auc) {
      res.best_val_pr_auc = score;
      res.best_epoch = epoch;
      res.best = model.to_checkpoint(stage_meta(1, epoch, score));
    }
  };

  log_epoch(0);
  std::vector<int> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_ids(order, root.split(static_cast<std::uint64_t>(epoch)));
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      Tape tape;
      Tensor loss;
      for (std::size_t i = at; i < stop; ++i) {
        const LabeledWindow& w = train[static_cast<std::size_t>(order[i])];
        Tensor z = model.teacher().forward(w.x, w.u, &tape).z;
        Tensor li = focal_mix(z, w.y, lcfg, &tape);
        loss = i == at ? li : ops::add(loss, li, &tape);
      }
      loss = ops::mul_scalar(loss, 1.0 / static_cast<double>(stop - at), &tape);
      check_finite_loss(loss.item(), 1, epoch);
      opt.zero_grads();
      tape.backward(loss);
      opt.step();
    }
    log_epoch(epoch);
  }
  model.from_checkpoint(res.best);
  if (!cfg.checkpoint_out.empty()) save_checkpoint(cfg.checkpoint_out, res.best);
  return res;
}

StageResult run_stage2(PairModel& model, const std::vector<Bag>& data,
                       const StageConfig& cfg, const LossConfig& lcfg,
                       const DistillConfig& dcfg) {
  cfg.validate();
  lcfg.validate();
  dcfg.validate();
  StageResult res;
  std::vector<int> train_ids, val_ids;
  split_bags(static_cast<int>(data.size()), cfg.val_fraction, cfg.seed, &train_ids,
             &val_ids);
  std::vector<LabeledWindow> train = gather_windows(data, train_ids);
  std::vector<LabeledWindow> val = gather_windows(data, val_ids);
  if (train.empty()) throw ShapeError("stage 2: no labeled windows in the training split");

  // The expensive encoder is frozen: cache its outputs once.
  auto teacher_outs = [&](const std::vector<LabeledWindow>& ws) {
    std::vector<ExpensiveOut> outs;
    outs.reserve(ws.size());
    for (const LabeledWindow& w : ws) outs.push_back(model.teacher().forward(w.x, w.u));
    return outs;
  };
  const std::vector<ExpensiveOut> t_train = teacher_outs(train);
  const std::vector<ExpensiveOut> t_val = teacher_outs(val);

  std::vector<Tensor> opt_params = model.student().params().tensors();
  for (const Tensor& t : model.projection().params().tensors()) opt_params.push_back(t);
  Sgd opt(opt_params, cfg.lr, cfg.momentum);
  const RngState root(cfg.seed);

  auto student_logit = [&](const LabeledWindow& w) {
    return model.student().forward(w.x, w.u).z_tilde;
  };
  auto mean_kd = [&](const std::vector<LabeledWindow>& ws,
                     const std::vector<ExpensiveOut>& touts) {
    if (ws.empty()) return 0.0;
    double kd = 0.0;
    for (std::size_t i = 0; i < ws.size(); ++i) {
      Tensor zs = model.student().forward(ws[i].x, ws[i].u).z_tilde;
      kd += kd_bernoulli(touts[i].z, zs, dcfg.temperature).item();
    }
    return kd / static_cast<double>(ws.size());
  };
  auto log_epoch = [&](int epoch) {
    EpochRow trow = eval_windows(2, epoch, "train", train, lcfg, student_logit);
    trow.kd = mean_kd(train, t_train);
    res.log.push_back(trow);
    EpochRow vrow = eval_windows(2, epoch, "val", val, lcfg, student_logit);
    vrow.kd = mean_kd(val, t_val);
    if (!val.empty()) res.log.push_back(vrow);
    const EpochRow& pick = val.empty() ? trow : vrow;
    const double score = selection_score(pick);
    if (res.best.tensors.empty() || score > res.best_val_pr_auc) {
      res.best_val_pr_auc = score;
      res.best_epoch = epoch;
      res.best = model.to_checkpoint(stage_meta(2, epoch, score));
    }
  };

  log_epoch(0);
  std::vector<int> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  const long total_batches =
      static_cast<long>(cfg.epochs) *
      static_cast<long>((order.size() + cfg.batch_size - 1) / cfg.batch_size);
  long batch_no = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_ids(order, root.split(static_cast<std::uint64_t>(epoch)));
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      const int b = static_cast<int>(stop - at);
      Tape tape;
      DistillBatch batch;
      std::vector<Tensor> zs_parts, hs_rows, zt_vals, ht_rows;
      for (std::size_t i = at; i < stop; ++i) {
        const LabeledWindow& w = train[static_cast<std::size_t>(order[i])];
        const ExpensiveOut& t = t_train[static_cast<std::size_t>(order[i])];
        CheapSignals s = model.student().forward(w.x, w.u, &tape);
        zs_parts.push_back(s.z_tilde);
        hs_rows.push_back(s.h_tilde);
        zt_vals.push_back(t.z);
        ht_rows.push_back(t.h);
        batch.labels.push_back(w.y);
      }
      batch.z_student = ops::concat_vec(zs_parts, &tape);
      batch.h_student = ops::stack_rows_padded(hs_rows, b, &tape);
      batch.z_teacher = ops::concat_vec(zt_vals);
      batch.h_teacher = ops::stack_rows_padded(ht_rows, b);
      const double f =
          total_batches > 1
              ? static_cast<double>(batch_no) / static_cast<double>(total_batches - 1)
              : 1.0;
      DistillParts parts = distill_loss(batch, model.projection(), f, dcfg, lcfg, &tape);
      check_finite_loss(parts.total.item(), 2, epoch);
      opt.zero_grads();
      tape.backward(parts.total);
      opt.step();
      ++batch_no;
    }
    log_epoch(epoch);
  }
  model.from_checkpoint(res.best);
  if (!cfg.checkpoint_out.empty()) save_checkpoint(cfg.checkpoint_out, res.best);
  return res;
}

StageResult run_stage3(PairModel& model, const std::vector<Bag>& data,
                       const StageConfig& cfg, const LossConfig& lcfg) {
  cfg.validate();
  lcfg.validate();
  StageResult res;
  std::vector<int> train_ids, val_ids;
  split_bags(static_cast<int>(data.size()), cfg.val_fraction, cfg.seed, &train_ids,
             &val_ids);
  if (train_ids.empty()) throw ShapeError("stage 3: empty training split");

  // Selection depends only on the frozen cheap encoder: compute it once per
  // bag. Token caches stay valid while the expensive encoder is frozen.
  std::vector<SelectionResult> selections(data.size());
  std::vector<bool> has_candidates(data.size(), false);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].n() == 0) continue;
    has_candidates[i] = true;
    PairModel::CheapPass cheap = model.cheap_scan(data[i]);
    selections[i] = select(model.config().selector, cheap.z_tilde, cheap.h_tilde, cheap.p);
  }
  std::vector<std::vector<Tensor>> token_cache(data.size());
  bool cache_valid = false;
  auto refresh_cache = [&]() {
    for (std::size_t i = 0; i < data.size(); ++i) {
      token_cache[i].clear();
      if (!has_candidates[i]) continue;
      int calls = 0;
      token_cache[i] = model.bag_tokens(data[i], selections[i], nullptr, &calls);
      res.max_expensive_calls = std::max(res.max_expensive_calls, calls);
      if (calls > model.config().selector.kmax) ++res.budget_violations;
    }
    cache_valid = true;
  };

  auto pair_loss = [&](const Tensor& logit, int label, Tape* tape) {
    return cfg.use_focal_pair_loss ? focal_mix(logit, label, lcfg, tape)
                                   : bce_smoothed(logit, label, lcfg, tape);
  };

  auto eval_split = [&](int epoch, const std::string& split,
                        const std::vector<int>& ids) {
    EpochRow row;
    row.stage = 3;
    row.epoch = epoch;
    row.split = split;
    if (ids.empty()) return row;
    std::vector<double> probs;
    std::vector<int> labels;
    double loss = 0.0;
    int losses = 0;
    for (int id : ids) {
      const Bag& bag = data[static_cast<std::size_t>(id)];
      if (!bag.label)
        throw ShapeError("stage 3: bag '" + bag.pair_id + "' has no pair label");
      double y_hat = 0.5;
      if (has_candidates[static_cast<std::size_t>(id)]) {
        BagForward fwd =
            cache_valid
                ? model.forward_cached(token_cache[static_cast<std::size_t>(id)])
                : model.forward_bag(bag);
        y_hat = fwd.y_hat;
        loss += pair_loss(fwd.logit, *bag.label, nullptr).item();
        ++losses;
        res.max_expensive_calls = std::max(res.max_expensive_calls, fwd.expensive_calls);
        if (fwd.expensive_calls > model.config().selector.kmax) ++res.budget_violations;
      }
      probs.push_back(y_hat);
      labels.push_back(*bag.label);
    }
    row.loss = losses > 0 ? loss / losses : 0.0;
    row.metrics = compute_metrics(probs, labels);
    return row;
  };
  auto log_epoch = [&](int epoch) {
    res.log.push_back(eval_split(epoch, "train", train_ids));
    EpochRow vrow = eval_split(epoch, "val", val_ids);
    if (!val_ids.empty()) res.log.push_back(vrow);
    const EpochRow& pick = val_ids.empty() ? res.log.back() : vrow;
    const double score = selection_score(pick);
    if (res.best.tensors.empty() || score > res.best_val_pr_auc) {
      res.best_val_pr_auc = score;
      res.best_epoch = epoch;
      res.best = model.to_checkpoint(stage_meta(3, epoch, score));
    }
  };

  Sgd agg_opt(model.aggregator().params().tensors(), cfg.lr, cfg.momentum);
  std::vector<Tensor> joint_params = model.aggregator().params().tensors();
  for (const Tensor& t : model.teacher().params().tensors()) joint_params.push_back(t);
  Sgd joint_opt(joint_params, cfg.lr, cfg.momentum);

  refresh_cache();
  log_epoch(0);
  const RngState root(cfg.seed);
  std::vector<int> order = train_ids;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const bool frozen = cfg.freeze_encoder || epoch <= cfg.warmup_epochs;
    if (frozen && !cache_valid) refresh_cache();
    Sgd& opt = frozen ? agg_opt : joint_opt;
    shuffle_ids(order, root.split(static_cast<std::uint64_t>(epoch)));
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      Tape tape;
      Tensor loss;
      int contributors = 0;
      for (std::size_t i = at; i < stop; ++i) {
        const std::size_t id = static_cast<std::size_t>(order[i]);
        if (!has_candidates[id]) continue;
        const Bag& bag = data[id];
        BagForward fwd = frozen ? model.forward_cached(token_cache[id], &tape)
                                : model.forward_bag(bag, &tape);
        res.max_expensive_calls = std::max(res.max_expensive_calls, fwd.expensive_calls);
        if (fwd.expensive_calls > model.config().selector.kmax) ++res.budget_violations;
        Tensor li = pair_loss(fwd.logit, *bag.label, &tape);
        loss = contributors == 0 ? li : ops::add(loss, li, &tape);
        ++contributors;
      }
      if (contributors == 0) continue;
      loss = ops::mul_scalar(loss, 1.0 / contributors, &tape);
      check_finite_loss(loss.item(), 3, epoch);
      opt.zero_grads();
      tape.backward(loss);
      if (!frozen)
        res.max_teacher_grad_norm =
            std::max(res.max_teacher_grad_norm, grad_norm(model.teacher().params()));
      opt.step();
    }
    if (!frozen) cache_valid = false;
    log_epoch(epoch);
  }
  model.from_checkpoint(res.best);
  if (!cfg.checkpoint_out.empty()) save_checkpoint(cfg.checkpoint_out, res.best);
  return res;
}

}  // namespace brmil
