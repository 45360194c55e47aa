#include "brmil/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace brmil {

namespace {

// Row indices inside the window tensor: 0-4 guide strand A/C/G/U/gap,
// 5-9 target strand A/C/G/U/gap.
constexpr int kGuideA = 0;
constexpr int kTargetC = 6;
constexpr int kTargetU = 8;

void set_column(Tensor& x, int col, int guide_row, int target_row) {
  for (int r = 0; r < kEncodeRows; ++r) x.data()[r * kEncodeCols + col] = 0.0;
  x.data()[guide_row * kEncodeCols + col] = 1.0;
  x.data()[target_row * kEncodeCols + col] = 1.0;
}

Tensor make_window(double strength, double noise, RngState& rng) {
  Tensor x = Tensor::zeros({kEncodeRows, kEncodeCols});
  for (int c = 0; c < kEncodeCols; ++c)
    set_column(x, c, static_cast<int>(rng.uniform_int(4)),
               5 + static_cast<int>(rng.uniform_int(4)));
  const int intact = static_cast<int>(std::lround(strength * kSynthMotifLen));
  for (int j = 0; j < kSynthMotifLen; ++j) {
    const int col = kSynthMotifStart + j;
    set_column(x, col, kGuideA, j < intact ? kTargetU : kTargetC);
    if (noise > 0.0 && rng.uniform() < noise)
      set_column(x, col, static_cast<int>(rng.uniform_int(4)),
                 5 + static_cast<int>(rng.uniform_int(4)));
  }
  return x;
}

CtsCandidate make_candidate(int index, double strength, double p, double noise,
                            RngState& rng) {
  CtsCandidate c;
  c.index = index;
  c.window_start = std::min(
      static_cast<int>(p * 1000.0), 999);  // nominal coordinate on a 1kb pool
  c.p = p;
  double s = 6.0 + 4.0 * strength;
  if (noise > 0.0) s += 0.3 * noise * rng.normal();
  c.s_esa = std::clamp(s, 6.0, 10.0);
  c.x = make_window(strength, noise, rng);
  c.inst_label = strength > kSynthInstanceThreshold ? 1 : 0;
  return c;
}

}  // namespace

SynthRule synth_rule_from(const std::string& name) {
  if (name == "single_strongest" || name == "single") return SynthRule::SingleStrongest;
  if (name == "cooperative" || name == "coop") return SynthRule::Cooperative;
  throw ParseError("unknown synthetic rule '" + name +
                   "' (want single_strongest or cooperative)");
}

std::string to_string(SynthRule rule) {
  return rule == SynthRule::SingleStrongest ? "single_strongest" : "cooperative";
}

void SynthSpec::validate() const {
  auto bad = [](const std::string& what) { throw ShapeError("synthetic spec: " + what); };
  if (n_pairs <= 0) bad("n_pairs must be positive");
  if (sigma_n < 0.0) bad("sigma_n must be >= 0");
  if (n_max < 1) bad("n_max must be >= 1");
  if (coop_k < 2) bad("coop_k must be >= 2");
  if (position_bins < coop_k) bad("position_bins must be >= coop_k");
  if (noise < 0.0 || noise > 1.0) bad("noise outside [0, 1]");
}

std::vector<Bag> gen_synthetic(const SynthSpec& spec) {
  spec.validate();
  const RngState root(spec.seed);
  std::vector<Bag> bags;
  bags.reserve(static_cast<std::size_t>(spec.n_pairs));
  const bool coop = spec.rule == SynthRule::Cooperative;
  const int n_floor = coop ? spec.coop_k : 1;

  for (int pair = 0; pair < spec.n_pairs; ++pair) {
    RngState rng = root.split(static_cast<std::uint64_t>(pair) + 1);
    Bag bag;
    std::ostringstream id;
    id << "synth-" << spec.seed << "-" << pair;
    bag.pair_id = id.str();

    const double raw = std::exp(spec.mu_n + spec.sigma_n * rng.normal());
    const int n = std::clamp(static_cast<int>(std::lround(raw)), n_floor, spec.n_max);
    const int label = static_cast<int>(rng.uniform_int(2));
    bag.label = label;

    // Pick which candidates carry a planted signal, and where.
    const int signals = coop ? (label == 1 ? spec.coop_k : spec.coop_k - 1)
                             : (label == 1 ? 1 : 0);
    std::set<int> hot;
    while (static_cast<int>(hot.size()) < signals)
      hot.insert(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n))));
    std::set<int> bins;
    while (static_cast<int>(bins.size()) < signals)
      bins.insert(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.position_bins))));
    std::vector<int> bin_of(hot.begin(), hot.end());
    std::vector<int> bin_ids(bins.begin(), bins.end());

    for (int i = 0; i < n; ++i) {
      const auto slot = std::find(bin_of.begin(), bin_of.end(), i);
      double strength, p;
      if (slot != bin_of.end()) {
        strength = rng.uniform(kSynthSignalFloor, 1.0);
        const int bin = bin_ids[static_cast<std::size_t>(slot - bin_of.begin())];
        p = (bin + rng.uniform()) / spec.position_bins;
      } else {
        strength = rng.uniform(0.0, kSynthBackgroundTop);
        p = rng.uniform();
      }
      if (p <= 0.0) p = 1e-9;
      bag.candidates.push_back(make_candidate(i, strength, p, spec.noise, rng));
    }
    bags.push_back(std::move(bag));
  }
  return bags;
}

double planted_strength(const Tensor& x) {
  if (x.ndim() != 2 || x.dim(0) != kEncodeRows || x.dim(1) != kEncodeCols)
    throw ShapeError("planted_strength: window tensor must be [" +
                     std::to_string(kEncodeRows) + ", " + std::to_string(kEncodeCols) +
                     "], got " + shape_str(x.shape()));
  int intact = 0;
  for (int j = 0; j < kSynthMotifLen; ++j) {
    const int col = kSynthMotifStart + j;
    if (x[kGuideA * kEncodeCols + col] == 1.0 && x[kTargetU * kEncodeCols + col] == 1.0)
      ++intact;
  }
  return static_cast<double>(intact) / kSynthMotifLen;
}

}  // namespace brmil
