#include "brmil/theory.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace brmil {

namespace {

std::vector<int> live_rows(const TokenBatch& batch) {
  std::vector<int> rows;
  for (std::size_t i = 0; i < batch.mask.size(); ++i)
    if (batch.mask[i]) rows.push_back(static_cast<int>(i));
  return rows;
}

double row_norm(const Tensor& tokens, int row) {
  const int cols = tokens.dim(1);
  const double* d = tokens.data() + static_cast<std::size_t>(row) * cols;
  double sq = 0.0;
  for (int c = 0; c < cols; ++c) sq += d[c] * d[c];
  return std::sqrt(sq);
}

/// Evaluates f on the batch restricted to the given live subset and, when
/// grad_norms is non-null, fills per-row gradient 2-norms.
double eval_state(const MaskedScalarFn& f, const TokenBatch& batch,
                  const std::vector<int>& state, std::vector<double>* grad_norms) {
  TokenBatch masked;
  masked.tokens = grad_norms ? batch.tokens.clone() : batch.tokens;
  masked.mask.assign(batch.mask.size(), 0);
  for (int i : state) masked.mask[static_cast<std::size_t>(i)] = 1;
  masked.count = static_cast<int>(state.size());
  if (!grad_norms) return f(masked, nullptr).item();

  masked.tokens.set_requires_grad(true);
  Tape tape;
  Tensor out = f(masked, &tape);
  if (out.numel() != 1)
    throw ShapeError("influence: set function must return a scalar, got " +
                     shape_str(out.shape()));
  tape.backward(out);
  const double* grad = masked.tokens.grad();
  const int cols = masked.tokens.dim(1);
  grad_norms->assign(batch.mask.size(), 0.0);
  for (int i : state) {
    const double* g = grad + static_cast<std::size_t>(i) * cols;
    double sq = 0.0;
    for (int c = 0; c < cols; ++c) sq += g[c] * g[c];
    (*grad_norms)[static_cast<std::size_t>(i)] = std::sqrt(sq);
  }
  return out.item();
}

constexpr int kExhaustiveCap = 12;

}  // namespace

double InfluenceProfile::covered_mass(const std::vector<int>& rows) const {
  std::set<int> seen;
  double mass = 0.0;
  for (int r : rows) {
    if (r < 0 || r >= count())
      throw ShapeError("influence: row " + std::to_string(r) + " outside [0, " +
                       std::to_string(count()) + ")");
    if (seen.insert(r).second) mass += w[static_cast<std::size_t>(r)];
  }
  return mass;
}

double InfluenceProfile::psi(int k) const {
  return best_k_mass(w, std::max(k, 0)).psi;
}

InfluenceProfile influence_weights(const MaskedScalarFn& f, const TokenBatch& batch,
                                   InfluenceMode mode, int sample_states,
                                   std::uint64_t sample_seed) {
  const std::vector<int> live = live_rows(batch);
  const int n = static_cast<int>(live.size());
  if (n == 0) throw ShapeError("influence: batch has no live tokens");
  if (mode == InfluenceMode::Exhaustive && n > kExhaustiveCap)
    throw ShapeError("influence: exhaustive mode caps at " +
                     std::to_string(kExhaustiveCap) + " live tokens, got " +
                     std::to_string(n));
  if (mode == InfluenceMode::Sampled && sample_states < 1)
    throw ShapeError("influence: sampled mode needs a positive state budget");

  InfluenceProfile prof;
  prof.g.assign(batch.mask.size(), 0.0);
  prof.exact = mode == InfluenceMode::Exhaustive;
  for (int i : live)
    prof.R = std::max(prof.R, row_norm(batch.tokens, i));

  auto visit = [&](std::uint64_t bits) {
    std::vector<int> state;
    for (int j = 0; j < n; ++j)
      if (bits >> j & 1) state.push_back(live[static_cast<std::size_t>(j)]);
    if (state.empty()) return;
    std::vector<double> norms;
    eval_state(f, batch, state, &norms);
    for (std::size_t i = 0; i < norms.size(); ++i)
      prof.g[i] = std::max(prof.g[i], norms[i]);
  };

  const std::uint64_t all = (std::uint64_t{1} << n) - 1;
  const bool enumerate =
      mode == InfluenceMode::Exhaustive ||
      static_cast<std::uint64_t>(sample_states) >= all;
  if (enumerate) {
    for (std::uint64_t bits = 1; bits <= all; ++bits) visit(bits);
  } else {
    visit(all);  // the unmasked state anchors every sensitivity
    RngState rng(sample_seed);
    for (int s = 1; s < sample_states; ++s) visit(1 + rng.uniform_int(all));
  }

  prof.G = 0.0;
  for (double gi : prof.g) prof.G += gi;
  prof.w.assign(prof.g.size(), 0.0);
  if (prof.G > 0.0) {
    for (std::size_t i = 0; i < prof.g.size(); ++i) prof.w[i] = prof.g[i] / prof.G;
  } else {
    // Constant function: no row matters more than another, spread uniformly.
    for (int i : live) prof.w[static_cast<std::size_t>(i)] = 1.0 / n;
  }
  return prof;
}

InfluenceProfile influence_weights(const AggModel& agg, const TokenBatch& batch,
                                   InfluenceMode mode, int sample_states,
                                   std::uint64_t sample_seed) {
  MaskedScalarFn f = [&agg](const TokenBatch& b, Tape* tape) {
    return agg.forward(b, tape);
  };
  return influence_weights(f, batch, mode, sample_states, sample_seed);
}

BestKMass best_k_mass(const std::vector<double>& w, int k) {
  if (w.empty()) throw ShapeError("best_k_mass: empty weight vector");
  if (k < 0) throw ShapeError("best_k_mass: negative budget");
  double total = 0.0;
  for (double wi : w) {
    if (wi < -1e-12 || !std::isfinite(wi))
      throw ShapeError("best_k_mass: weights must be nonnegative finite");
    total += wi;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw ShapeError("best_k_mass: weights must sum to 1, got " + std::to_string(total));
  std::vector<double> sorted = w;
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  const int take = std::min<int>(k, static_cast<int>(sorted.size()));
  BestKMass out;
  for (int i = 0; i < take; ++i) out.covered += sorted[static_cast<std::size_t>(i)];
  out.psi = std::max(0.0, 1.0 - out.covered);
  return out;
}

SelectorGap selector_gap(const InfluenceProfile& profile, const std::vector<int>& rows) {
  const double covered = profile.covered_mass(rows);
  SelectorGap out;
  // Uncovered mass lives in [0, 1]; rounding in the weight sum can push the
  // raw difference a few ulps below zero, which would flip the bound's sign.
  out.eps_k = std::clamp(1.0 - covered, 0.0, 1.0);
  out.delta_k = best_k_mass(profile.w, static_cast<int>(rows.size())).covered - covered;
  if (out.delta_k < -1e-12)
    throw NumericalError("selector_gap: selection covers more than the best subset (" +
                         std::to_string(out.delta_k) + ")");
  out.delta_k = std::max(out.delta_k, 0.0);
  return out;
}

BoundReport bound_check(const MaskedScalarFn& f, const TokenBatch& batch,
                        const std::vector<int>& rows, const InfluenceProfile& profile) {
  if (rows.empty()) throw ShapeError("bound_check: empty selection");
  const std::vector<int> live = live_rows(batch);
  std::set<int> keep(rows.begin(), rows.end());
  for (int r : keep)
    if (!std::binary_search(live.begin(), live.end(), r))
      throw ShapeError("bound_check: row " + std::to_string(r) + " is not live");

  BoundReport rep;
  rep.advisory = !profile.exact;
  rep.full = eval_state(f, batch, live, nullptr);
  rep.masked = eval_state(f, batch, std::vector<int>(keep.begin(), keep.end()), nullptr);
  rep.gap = std::abs(rep.full - rep.masked);
  rep.eps_k = selector_gap(profile, rows).eps_k;
  rep.bound = 2.0 * profile.G * profile.R * rep.eps_k;
  rep.ok = rep.gap <= rep.bound * (1.0 + 1e-6) + 1e-15;

  // Mask one row at a time; the summed step gaps dominate the total gap.
  std::vector<int> state = live;
  double prev = rep.full;
  for (int r : live) {
    if (keep.count(r)) continue;
    state.erase(std::find(state.begin(), state.end(), r));
    const double next = eval_state(f, batch, state, nullptr);
    rep.chain_sum += std::abs(prev - next);
    prev = next;
  }
  return rep;
}

BoundReport bound_check(const AggModel& agg, const TokenBatch& batch,
                        const std::vector<int>& rows, const InfluenceProfile& profile) {
  MaskedScalarFn f = [&agg](const TokenBatch& b, Tape* tape) {
    return agg.forward(b, tape);
  };
  return bound_check(f, batch, rows, profile);
}

std::vector<SweepRow> sweep_truncate(const PairModel& model, const std::vector<Bag>& data,
                                     const std::vector<int>& ks) {
  if (ks.empty()) throw ShapeError("sweep_truncate: no budgets given");
  for (int k : ks)
    if (k < 1) throw ShapeError("sweep_truncate: budgets must be >= 1");
  std::vector<SweepRow> rows;
  std::vector<std::vector<double>> probs(ks.size());
  std::vector<std::vector<double>> gaps(ks.size());
  std::vector<int> labels;
  for (const Bag& bag : data) {
    if (!bag.label) throw ShapeError("sweep_truncate: bag '" + bag.pair_id + "' unlabeled");
    labels.push_back(*bag.label);
    const BagForward fwd = model.forward_bag(bag);
    for (std::size_t j = 0; j < ks.size(); ++j) {
      if (fwd.empty) {
        probs[j].push_back(0.5);
        gaps[j].push_back(0.0);
        continue;
      }
      const TokenBatch cut = truncate_mask(fwd.batch, ks[j]);
      const double y = model.aggregator().predict(cut);
      probs[j].push_back(y);
      gaps[j].push_back(std::abs(fwd.y_hat - y));
    }
  }
  for (std::size_t j = 0; j < ks.size(); ++j) {
    SweepRow row;
    row.x = ks[j];
    row.metrics = compute_metrics(probs[j], labels);
    double s = 0.0;
    for (double g : gaps[j]) s += g;
    row.mean_gap = gaps[j].empty() ? 0.0 : s / static_cast<double>(gaps[j].size());
    rows.push_back(row);
  }
  return rows;
}

std::vector<SweepRow> sweep_pool_caps(const PairModel& model, const std::vector<Bag>& data,
                                      const std::vector<int>& caps) {
  if (caps.empty()) throw ShapeError("sweep_pool_caps: no caps given");
  std::vector<SweepRow> rows;
  std::vector<std::vector<double>> probs(caps.size());
  std::vector<std::vector<double>> gaps(caps.size());
  std::vector<int> labels;
  for (const Bag& bag : data) {
    if (!bag.label)
      throw ShapeError("sweep_pool_caps: bag '" + bag.pair_id + "' unlabeled");
    labels.push_back(*bag.label);
    const double y_ref = model.forward_bag(bag).y_hat;
    for (std::size_t j = 0; j < caps.size(); ++j) {
      double y = 0.5;
      if (bag.n() > 0) {
        const PairModel::CheapPass cheap = model.cheap_scan(bag);
        const CappedPool capped =
            visible_pool_cap(cheap.z_tilde, cheap.h_tilde, cheap.p, caps[j]);
        Bag visible;
        visible.pair_id = bag.pair_id;
        visible.label = bag.label;
        for (int idx : capped.original_index)
          visible.candidates.push_back(bag.candidates[static_cast<std::size_t>(idx)]);
        y = model.forward_bag(visible).y_hat;
      }
      probs[j].push_back(y);
      gaps[j].push_back(std::abs(y_ref - y));
    }
  }
  for (std::size_t j = 0; j < caps.size(); ++j) {
    SweepRow row;
    row.x = caps[j];
    row.metrics = compute_metrics(probs[j], labels);
    double s = 0.0;
    for (double g : gaps[j]) s += g;
    row.mean_gap = gaps[j].empty() ? 0.0 : s / static_cast<double>(gaps[j].size());
    rows.push_back(row);
  }
  return rows;
}

std::string SweepResult::csv() const {
  std::ostringstream out;
  out.precision(10);
  out << (mode == "n_cap" ? "n_cap" : "k")
      << ",pr_auc_mean,pr_auc_std,f1_mean,f1_std,gap_mean,gap_std\n";
  for (const SweepPoint& p : points)
    out << p.x << "," << p.pr_auc_mean << "," << p.pr_auc_std << "," << p.f1_mean << ","
        << p.f1_std << "," << p.gap_mean << "," << p.gap_std << "\n";
  return out.str();
}

SweepResult aggregate_sweep(const std::string& mode,
                            const std::vector<std::vector<SweepRow>>& per_seed) {
  if (per_seed.empty()) throw ShapeError("aggregate_sweep: no seeds");
  const std::size_t npts = per_seed.front().size();
  for (const auto& rows : per_seed)
    if (rows.size() != npts)
      throw ShapeError("aggregate_sweep: seeds disagree on the sweep grid");

  auto mean_std = [&](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    const double std_dev =
        xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
    return std::pair<double, double>(mean, std_dev);
  };

  SweepResult res;
  res.mode = mode;
  for (std::size_t j = 0; j < npts; ++j) {
    SweepPoint pt;
    pt.x = per_seed.front()[j].x;
    std::vector<double> pr, f1, gap;
    for (const auto& rows : per_seed) {
      if (rows[j].x != pt.x)
        throw ShapeError("aggregate_sweep: seeds disagree on the sweep grid");
      pr.push_back(rows[j].metrics.pr_auc);
      f1.push_back(rows[j].metrics.f1_at_half);
      gap.push_back(rows[j].mean_gap);
    }
    std::tie(pt.pr_auc_mean, pt.pr_auc_std) = mean_std(pr);
    std::tie(pt.f1_mean, pt.f1_std) = mean_std(f1);
    std::tie(pt.gap_mean, pt.gap_std) = mean_std(gap);
    res.points.push_back(pt);
  }
  return res;
}

}  // namespace brmil
