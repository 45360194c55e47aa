#include "brmil/selector.hpp"

#include <algorithm>
#include <cmath>

#include "brmil/rng.hpp"

namespace brmil {

namespace {

// "a better than b": higher score first, lower index on ties.
bool better(double za, int ia, double zb, int ib) {
  if (za != zb) return za > zb;
  return ia < ib;
}

void sort_by_priority(std::vector<int>& idx, const std::vector<double>& z) {
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    return better(z[static_cast<std::size_t>(a)], a, z[static_cast<std::size_t>(b)], b);
  });
}

// Bounded "keep the best m" min-heap with an explicit comparison counter.
class BestM {
 public:
  BestM(int cap, const std::vector<double>& z, std::int64_t* cmp)
      : cap_(cap), z_(z), cmp_(cmp) {}

  void offer(int idx) {
    if (static_cast<int>(heap_.size()) < cap_) {
      heap_.push_back(idx);
      sift_up(heap_.size() - 1);
      return;
    }
    // Full heap: the newcomer replaces the root (the worst survivor) only if
    // it beats it.
    if (cmp_) ++*cmp_;
    if (better(z_[static_cast<std::size_t>(idx)], idx,
               z_[static_cast<std::size_t>(heap_[0])], heap_[0])) {
      heap_[0] = idx;
      sift_down(0);
    }
  }

  std::vector<int> best_first() const {
    std::vector<int> out = heap_;
    std::sort(out.begin(), out.end(), [&](int a, int b) {
      return better(z_[static_cast<std::size_t>(a)], a, z_[static_cast<std::size_t>(b)], b);
    });
    return out;
  }

 private:
  // Heap order: worst at the root. Reordering comparisons among already
  // admitted members are maintenance, not admission work, and stay outside
  // the counter so it tracks the per-candidate cost model.
  bool less(int a, int b) {
    return better(z_[static_cast<std::size_t>(b)], b, z_[static_cast<std::size_t>(a)], a);
  }

  void sift_up(std::size_t i) {
    while (i > 0) {
      std::size_t parent = (i - 1) / 2;
      if (less(heap_[i], heap_[parent])) {
        std::swap(heap_[i], heap_[parent]);
        i = parent;
      } else {
        break;
      }
    }
  }

  void sift_down(std::size_t i) {
    for (;;) {
      std::size_t l = 2 * i + 1, r = 2 * i + 2, smallest = i;
      if (l < heap_.size() && less(heap_[l], heap_[smallest])) smallest = l;
      if (r < heap_.size() && less(heap_[r], heap_[smallest])) smallest = r;
      if (smallest == i) break;
      std::swap(heap_[i], heap_[smallest]);
      i = smallest;
    }
  }

  int cap_;
  const std::vector<double>& z_;
  std::int64_t* cmp_;
  std::vector<int> heap_;
};

}  // namespace

SelectorVariant selector_variant_from(const std::string& name) {
  if (name == "S0" || name == "s0") return SelectorVariant::S0;
  if (name == "S1" || name == "s1") return SelectorVariant::S1;
  if (name == "S2" || name == "s2") return SelectorVariant::S2;
  throw ShapeError("unknown selector variant: " + name);
}

std::string to_string(SelectorVariant v) {
  switch (v) {
    case SelectorVariant::S0: return "S0";
    case SelectorVariant::S1: return "S1";
    case SelectorVariant::S2: return "S2";
  }
  return "?";
}

void SelectorConfig::validate() const {
  if (kmax < 1) throw ShapeError("selector: kmax must be >= 1");
  if (rho < 0.0 || rho > 1.0) throw ShapeError("selector: rho must lie in [0,1]");
  if (bins < 1 || heap_size < 1 || hash_bits < 1 || per_key_cap < 1 || quota_top < 1)
    throw ShapeError("selector: bins, heap_size, hash_bits, per_key_cap, quota_top must be >= 1");
  if (!(tau_w > 0.0)) throw ShapeError("selector: tau_w must be positive");
}

std::vector<int> step_a_topk(const std::vector<double>& z_tilde, int k) {
  const int n = static_cast<int>(z_tilde.size());
  if (k > n) throw ShapeError("step_a_topk: k exceeds pool size");
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    return better(z_tilde[static_cast<std::size_t>(a)], a,
                  z_tilde[static_cast<std::size_t>(b)], b);
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

std::vector<std::vector<int>> step_b_bins(const std::vector<double>& p,
                                          const std::vector<double>& z_tilde, int bins,
                                          int heap_size, std::int64_t* comparisons) {
  if (p.size() != z_tilde.size()) throw ShapeError("step_b_bins: length mismatch");
  std::vector<BestM> heaps;
  heaps.reserve(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) heaps.emplace_back(heap_size, z_tilde, comparisons);
  const int n = static_cast<int>(p.size());
  for (int i = 0; i < n; ++i) {
    int b = static_cast<int>(p[static_cast<std::size_t>(i)] * bins);
    b = std::min(std::max(b, 0), bins - 1);
    heaps[static_cast<std::size_t>(b)].offer(i);
  }
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(bins));
  for (const BestM& h : heaps) out.push_back(h.best_first());
  return out;
}

std::uint64_t simhash_key(const SelectorConfig& cfg, const Tensor& h_tilde, int row) {
  const int d = h_tilde.dim(1);
  const int b = std::min(cfg.hash_bits, 63);
  const double* h = h_tilde.data() + row * d;
  std::uint64_t key = 0;
  if (!cfg.simhash_random_proj) {
    const int take = std::min(b, d);
    for (int k = 0; k < take; ++k)
      if (h[k] >= 0.0) key |= (1ull << k);
  } else {
    for (int k = 0; k < b; ++k) {
      RngState rk = RngState(cfg.simhash_seed).split(static_cast<std::uint64_t>(k));
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += rk.normal() * h[j];
      if (dot >= 0.0) key |= (1ull << k);
    }
  }
  return key;
}

std::vector<std::vector<int>> step_c_dedup(const SelectorConfig& cfg,
                                           const Tensor& h_tilde,
                                           const std::vector<double>& z_tilde,
                                           const std::vector<std::vector<int>>& bins,
                                           int* removed) {
  int evicted = 0;
  std::vector<std::vector<int>> out;
  out.reserve(bins.size());
  for (const std::vector<int>& bin : bins) {
    // Bins arrive best-first, so a simple per-key counter keeps the top-c.
    std::vector<std::pair<std::uint64_t, int>> seen;  // key -> count
    std::vector<int> kept;
    for (int idx : bin) {
      const std::uint64_t key = simhash_key(cfg, h_tilde, idx);
      int* count = nullptr;
      for (auto& [k, c] : seen)
        if (k == key) count = &c;
      if (!count) {
        seen.emplace_back(key, 0);
        count = &seen.back().second;
      }
      if (*count < cfg.per_key_cap) {
        kept.push_back(idx);
        ++*count;
      } else {
        ++evicted;
      }
    }
    out.push_back(std::move(kept));
  }
  if (removed) *removed = evicted;
  return out;
}

std::vector<int> step_d_quota(const std::vector<std::vector<int>>& bins,
                              const std::vector<double>& z_tilde, int k2, int quota_top,
                              double tau_w) {
  const int nb = static_cast<int>(bins.size());
  std::vector<int> quota(static_cast<std::size_t>(nb), 0);
  if (k2 <= 0) return quota;

  std::vector<double> w(static_cast<std::size_t>(nb), 0.0);
  double total_w = 0.0;
  int nonempty = 0;
  for (int b = 0; b < nb; ++b) {
    const auto& bin = bins[static_cast<std::size_t>(b)];
    if (bin.empty()) continue;
    ++nonempty;
    const int top = std::min<int>(quota_top, static_cast<int>(bin.size()));
    double acc = 0.0;
    for (int t = 0; t < top; ++t)  // bins are best-first already
      acc += std::exp(z_tilde[static_cast<std::size_t>(bin[static_cast<std::size_t>(t)])] / tau_w);
    w[static_cast<std::size_t>(b)] = acc;
    total_w += acc;
  }
  if (nonempty == 0 || total_w <= 0.0) return quota;

  // Largest-remainder apportionment over the nonempty bins.
  std::vector<double> remainder(static_cast<std::size_t>(nb), 0.0);
  int assigned = 0;
  for (int b = 0; b < nb; ++b) {
    if (bins[static_cast<std::size_t>(b)].empty()) continue;
    const double exact = k2 * w[static_cast<std::size_t>(b)] / total_w;
    quota[static_cast<std::size_t>(b)] = static_cast<int>(std::floor(exact));
    remainder[static_cast<std::size_t>(b)] = exact - std::floor(exact);
    assigned += quota[static_cast<std::size_t>(b)];
  }
  std::vector<int> order;
  for (int b = 0; b < nb; ++b)
    if (!bins[static_cast<std::size_t>(b)].empty()) order.push_back(b);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return remainder[static_cast<std::size_t>(a)] > remainder[static_cast<std::size_t>(b)];
  });
  for (int b : order) {
    if (assigned >= k2) break;
    ++quota[static_cast<std::size_t>(b)];
    ++assigned;
  }

  // At least one slot per nonempty bin when the budget allows: move slots
  // from the currently largest quota.
  if (k2 >= nonempty) {
    for (int b = 0; b < nb; ++b) {
      if (bins[static_cast<std::size_t>(b)].empty() || quota[static_cast<std::size_t>(b)] > 0)
        continue;
      int donor = -1;
      for (int d = 0; d < nb; ++d)
        if (quota[static_cast<std::size_t>(d)] >= 2 &&
            (donor < 0 || quota[static_cast<std::size_t>(d)] > quota[static_cast<std::size_t>(donor)]))
          donor = d;
      if (donor < 0) break;
      --quota[static_cast<std::size_t>(donor)];
      ++quota[static_cast<std::size_t>(b)];
    }
  }

  // Occupancy caps, spilling the excess to the highest-weight bins with room.
  for (;;) {
    int excess = 0;
    for (int b = 0; b < nb; ++b) {
      const int occ = static_cast<int>(bins[static_cast<std::size_t>(b)].size());
      if (quota[static_cast<std::size_t>(b)] > occ) {
        excess += quota[static_cast<std::size_t>(b)] - occ;
        quota[static_cast<std::size_t>(b)] = occ;
      }
    }
    if (excess == 0) break;
    bool placed = false;
    while (excess > 0) {
      int best = -1;
      for (int b = 0; b < nb; ++b) {
        const int occ = static_cast<int>(bins[static_cast<std::size_t>(b)].size());
        if (quota[static_cast<std::size_t>(b)] >= occ) continue;
        if (best < 0 || w[static_cast<std::size_t>(b)] > w[static_cast<std::size_t>(best)])
          best = b;
      }
      if (best < 0) break;
      ++quota[static_cast<std::size_t>(best)];
      --excess;
      placed = true;
    }
    if (!placed || excess > 0) break;
  }
  return quota;
}

SelectionResult step_e_merge(const std::vector<int>& step_a,
                             const std::vector<int>& quota_picks,
                             const std::vector<double>& z_tilde, int k, int n) {
  SelectionResult res;
  res.K = k;
  std::vector<char> chosen(static_cast<std::size_t>(n), 0);
  auto take = [&](int idx) {
    if (!chosen[static_cast<std::size_t>(idx)]) {
      chosen[static_cast<std::size_t>(idx)] = 1;
      res.S.push_back(idx);
    }
  };
  for (int idx : step_a) take(idx);
  for (int idx : quota_picks) take(idx);

  if (static_cast<int>(res.S.size()) < k) {
    std::vector<int> rest;
    for (int i = 0; i < n; ++i)
      if (!chosen[static_cast<std::size_t>(i)]) rest.push_back(i);
    sort_by_priority(rest, z_tilde);
    for (int idx : rest) {
      if (static_cast<int>(res.S.size()) >= k) break;
      take(idx);
      ++res.stats.fill_count;
    }
  }

  res.priority = res.S;
  sort_by_priority(res.priority, z_tilde);
  std::sort(res.S.begin(), res.S.end());
  return res;
}

SelectionResult select(const SelectorConfig& cfg, const std::vector<double>& z_tilde,
                       const Tensor& h_tilde, const std::vector<double>& p) {
  cfg.validate();
  const int n = static_cast<int>(z_tilde.size());
  if (static_cast<int>(p.size()) != n ||
      (n > 0 && (h_tilde.ndim() != 2 || h_tilde.dim(0) != n)))
    throw ShapeError("select: z̃, h̃, p must share length n");

  SelectionResult res;
  const int k = std::min(cfg.kmax, n);
  res.K = k;
  res.K1 = static_cast<int>(std::floor(cfg.rho * k));
  res.K2 = k - res.K1;

  if (n <= k) {  // pool fits inside the budget: take everything
    res.S.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) res.S[static_cast<std::size_t>(i)] = i;
    res.priority = res.S;
    sort_by_priority(res.priority, z_tilde);
    return res;
  }

  if (cfg.variant == SelectorVariant::S0) {
    SelectionResult out = step_e_merge(step_a_topk(z_tilde, k), {}, z_tilde, k, n);
    out.K1 = res.K1;
    out.K2 = res.K2;
    return out;
  }

  std::vector<int> s1 = step_a_topk(z_tilde, res.K1);
  auto bins = step_b_bins(p, z_tilde, cfg.bins, cfg.heap_size, &res.stats.heap_comparisons);
  res.stats.bin_occupancy.reserve(bins.size());
  for (const auto& bin : bins)
    res.stats.bin_occupancy.push_back(static_cast<int>(bin.size()));

  if (cfg.variant == SelectorVariant::S2)
    bins = step_c_dedup(cfg, h_tilde, z_tilde, bins, &res.stats.dedup_removed);

  const std::vector<int> quota =
      step_d_quota(bins, z_tilde, res.K2, cfg.quota_top, cfg.tau_w);
  std::vector<int> picks;
  for (std::size_t b = 0; b < bins.size(); ++b)
    for (int t = 0; t < quota[b]; ++t) picks.push_back(bins[b][static_cast<std::size_t>(t)]);

  SelectionResult merged = step_e_merge(s1, picks, z_tilde, k, n);
  merged.K = k;
  merged.K1 = res.K1;
  merged.K2 = res.K2;
  merged.stats.bin_occupancy = std::move(res.stats.bin_occupancy);
  merged.stats.dedup_removed = res.stats.dedup_removed;
  merged.stats.heap_comparisons = res.stats.heap_comparisons;
  return merged;
}

double covered_bin_mass(const std::vector<int>& selected,
                        const std::vector<double>& z_tilde,
                        const std::vector<double>& p, int bins, double tau_w) {
  const int n = static_cast<int>(z_tilde.size());
  auto bin_of = [&](int i) {
    int b = static_cast<int>(p[static_cast<std::size_t>(i)] * bins);
    return std::min(std::max(b, 0), bins - 1);
  };
  std::vector<double> mass(static_cast<std::size_t>(bins), 0.0);
  for (int i = 0; i < n; ++i)
    mass[static_cast<std::size_t>(bin_of(i))] +=
        std::exp(z_tilde[static_cast<std::size_t>(i)] / tau_w);
  std::vector<char> covered(static_cast<std::size_t>(bins), 0);
  for (int i : selected) covered[static_cast<std::size_t>(bin_of(i))] = 1;
  double total = 0.0, got = 0.0;
  for (int b = 0; b < bins; ++b) {
    total += mass[static_cast<std::size_t>(b)];
    if (covered[static_cast<std::size_t>(b)]) got += mass[static_cast<std::size_t>(b)];
  }
  return total > 0.0 ? got / total : 0.0;
}

CappedPool visible_pool_cap(const std::vector<double>& z_tilde, const Tensor& h_tilde,
                            const std::vector<double>& p, int n_cap) {
  if (n_cap < 1) throw ShapeError("visible_pool_cap: n_cap must be >= 1");
  const int n = static_cast<int>(z_tilde.size());
  const int keep = std::min(n_cap, n);
  std::vector<int> top = step_a_topk(z_tilde, keep);
  std::sort(top.begin(), top.end());  // ascending original order
  CappedPool out;
  const int d = h_tilde.ndim() == 2 ? h_tilde.dim(1) : 0;
  out.h_tilde = Tensor::zeros({std::max(keep, 1), std::max(d, 1)});
  out.original_index = top;
  for (int r = 0; r < keep; ++r) {
    const int i = top[static_cast<std::size_t>(r)];
    out.z_tilde.push_back(z_tilde[static_cast<std::size_t>(i)]);
    out.p.push_back(p[static_cast<std::size_t>(i)]);
    for (int j = 0; j < d; ++j)
      out.h_tilde.data()[r * d + j] = h_tilde.data()[i * d + j];
  }
  return out;
}

}  // namespace brmil
