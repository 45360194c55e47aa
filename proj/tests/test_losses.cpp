#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "brmil/encoders.hpp"
#include "brmil/gradcheck.hpp"
#include "brmil/losses.hpp"
#include "brmil/metrics.hpp"
#include "brmil/rng.hpp"
#include "brmil/seqscan.hpp"

using namespace brmil;

namespace {

// -------- long-double scalar oracles --------

long double oracle_sigmoid(long double z) { return 1.0L / (1.0L + std::exp(-z)); }

// log sigma(z) without cancellation: -max(-z,0) - log1p(exp(-|z|)).
long double oracle_log_sigmoid(long double z) {
  return -(std::max(-z, 0.0L) + std::log1p(std::exp(-std::abs(z))));
}

long double oracle_bce(long double z, int y, const LossConfig& cfg) {
  const long double t = y == 1 ? cfg.smooth_pos : cfg.smooth_neg;
  return -static_cast<long double>(cfg.class_weight) *
         (t * oracle_log_sigmoid(z) + (1.0L - t) * oracle_log_sigmoid(-z));
}

long double oracle_focal(long double z, int y, const LossConfig& cfg) {
  const long double bce = oracle_bce(z, y, cfg);
  const long double pt = y == 1 ? oracle_sigmoid(z) : 1.0L - oracle_sigmoid(z);
  const long double at = y == 1 ? cfg.focal_alpha : 1.0 - cfg.focal_alpha;
  return cfg.lambda_bce * bce +
         cfg.lambda_focal * at * std::pow(1.0L - pt, static_cast<long double>(cfg.focal_gamma)) * bce;
}

long double oracle_kl(long double zt, long double zs, long double t) {
  const long double p = oracle_sigmoid(zt / t);
  const long double q = oracle_sigmoid(zs / t);
  auto term = [](long double a, long double b) {
    return a > 0.0L ? a * std::log(a / b) : 0.0L;
  };
  return t * t * (term(p, q) + term(1.0L - p, 1.0L - q));
}

// Independent area computation: explicit threshold sweep with prefix sums.
double oracle_pr_auc(std::vector<double> scores, std::vector<int> labels) {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double total_pos = 0;
  for (int y : labels) total_pos += y;
  double tp = 0, fp = 0, area = 0, prev_r = 0;
  std::size_t k = 0;
  while (k < order.size()) {
    const double cut = scores[order[k]];
    while (k < order.size() && scores[order[k]] == cut) {
      (labels[order[k]] == 1 ? tp : fp) += 1;
      ++k;
    }
    const double r = tp / total_pos;
    area += (r - prev_r) * (tp / (tp + fp));
    prev_r = r;
  }
  return area;
}

}  // namespace

TEST_CASE("smoothed binary loss hits its closed-form anchor points") {
  LossConfig cfg;
  Tensor z0 = Tensor::scalar(0.0);
  // Both smoothing targets meet at z=0: loss = log 2 regardless of y.
  CHECK(bce_smoothed(z0, 1, cfg).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_smoothed(z0, 0, cfg).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Way past saturation the smoothing floor dominates: ~0.05 * z.
  const double far = bce_smoothed(Tensor::scalar(50.0), 1, cfg).item();
  CHECK(far == doctest::Approx(static_cast<double>(oracle_bce(50.0L, 1, cfg))).epsilon(1e-12));
  CHECK(std::abs(far - 2.5) < 1e-3);

  // Stays finite far beyond double overflow of exp.
  CHECK(std::isfinite(bce_smoothed(Tensor::scalar(1000.0), 0, cfg).item()));
  CHECK(std::isfinite(bce_smoothed(Tensor::scalar(-1000.0), 1, cfg).item()));

  RngState rng(5);
  for (int i = 0; i < 200; ++i) {
    const double z = rng.uniform(-30, 30);
    const int y = static_cast<int>(rng.uniform_int(2));
    CHECK(bce_smoothed(Tensor::scalar(z), y, cfg).item() ==
          doctest::Approx(static_cast<double>(oracle_bce(z, y, cfg))).epsilon(1e-11));
  }
  CHECK_THROWS_AS(bce_smoothed(z0, 2, cfg), ShapeError);
}

TEST_CASE("smoothed loss is floored at the smoothing entropy") {
  LossConfig cfg;
  const double floor = -(0.95 * std::log(0.95) + 0.05 * std::log(0.05));
  double lowest = 1e300;
  for (double z = -20.0; z <= 20.0; z += 0.01)
    lowest = std::min(lowest, bce_smoothed(Tensor::scalar(z), 1, cfg).item());
  CHECK(lowest >= floor - 1e-12);
  // The minimum sits where the model matches the smoothed target.
  const double at_target = bce_smoothed(Tensor::scalar(std::log(0.95 / 0.05)), 1, cfg).item();
  CHECK(at_target == doctest::Approx(floor).epsilon(1e-9));
}

TEST_CASE("binary loss gradients match finite differences") {
  LossConfig cfg;
  GradCheckOptions opts;
  opts.step = 1e-6;
  opts.tol = 1e-7;
  RngState rng(9);
  for (int i = 0; i < 10; ++i) {
    Tensor z = Tensor::scalar(rng.uniform(-8, 8));
    z.set_requires_grad(true);
    const int y = static_cast<int>(rng.uniform_int(2));
    GradCheckReport rep = check_gradients(
        [&](Tape* tape) { return bce_smoothed(z, y, cfg, tape); }, {z}, opts);
    CHECK(rep.ok());
    opts.tol = 1e-6;  // focal adds a product term; keep a margin
    GradCheckReport rep2 = check_gradients(
        [&](Tape* tape) { return focal_mix(z, y, cfg, tape); }, {z}, opts);
    CHECK(rep2.ok());
    opts.tol = 1e-7;
  }
}

TEST_CASE("focal mixing matches the scalar oracle") {
  LossConfig cfg;
  // z=0, y=1: (0.01 + 0.4 * 0.5) * log 2.
  CHECK(focal_mix(Tensor::scalar(0.0), 1, cfg).item() ==
        doctest::Approx(0.21 * std::log(2.0)).epsilon(1e-12));

  // Exponent zero and alpha 1/2 collapse to a plain rescaled loss.
  LossConfig flat = cfg;
  flat.focal_gamma = 0.0;
  flat.focal_alpha = 0.5;
  RngState rng(13);
  for (int i = 0; i < 50; ++i) {
    const double z = rng.uniform(-6, 6);
    const int y = static_cast<int>(rng.uniform_int(2));
    CHECK(focal_mix(Tensor::scalar(z), y, flat).item() ==
          doctest::Approx((0.01 + 0.5) * bce_smoothed(Tensor::scalar(z), y, flat).item())
              .epsilon(1e-12));
  }

  // A confident correct answer reduces to almost pure base-loss weight.
  const double conf = focal_mix(Tensor::scalar(10.0), 1, cfg).item();
  const double base = bce_smoothed(Tensor::scalar(10.0), 1, cfg).item();
  CHECK(std::abs(conf - cfg.lambda_bce * base) < 1e-4 * base + 1e-6);

  // Fractional exponents against the long-double oracle.
  LossConfig frac = cfg;
  frac.focal_gamma = 2.5;
  for (int i = 0; i < 50; ++i) {
    const double z = rng.uniform(-6, 6);
    const int y = static_cast<int>(rng.uniform_int(2));
    CHECK(focal_mix(Tensor::scalar(z), y, frac).item() ==
          doctest::Approx(static_cast<double>(oracle_focal(z, y, frac))).epsilon(1e-10));
  }
}

TEST_CASE("logit matching is a scaled KL with a fixed point at equality") {
  RngState rng(17);
  for (int i = 0; i < 50; ++i) {
    const double z = rng.uniform(-5, 5);
    CHECK(std::abs(kd_bernoulli(Tensor::scalar(z), Tensor::scalar(z), 2.0).item()) < 1e-12);
  }
  for (int i = 0; i < 200; ++i) {
    const double zt = rng.uniform(-6, 6), zs = rng.uniform(-6, 6);
    const double t = 0.5 + rng.uniform() * 3.5;
    const double got = kd_bernoulli(Tensor::scalar(zt), Tensor::scalar(zs), t).item();
    CHECK(got >= -1e-12);
    CHECK(got == doctest::Approx(static_cast<double>(oracle_kl(zt, zs, t))).epsilon(1e-9));
  }
  // Saturated teacher does not produce NaNs.
  CHECK(std::isfinite(kd_bernoulli(Tensor::scalar(500.0), Tensor::scalar(0.0), 2.0).item()));

  GradCheckOptions opts;
  Tensor zs = Tensor::scalar(0.8);
  zs.set_requires_grad(true);
  GradCheckReport rep = check_gradients(
      [&](Tape* tape) { return kd_bernoulli(Tensor::scalar(-1.2), zs, 2.0, tape); }, {zs},
      opts);
  CHECK(rep.ok());
}

TEST_CASE("blend schedule endpoints and midpoint") {
  DistillConfig cfg;
  CHECK(distill_alpha(cfg, 0.0) == 0.8);
  CHECK(distill_alpha(cfg, 1.0) == 0.5);
  CHECK(distill_alpha(cfg, 0.5) == doctest::Approx(0.65).epsilon(1e-12));
  // Monotone non-increasing.
  double prev = 1.0;
  for (double f = 0.0; f <= 1.0; f += 0.01) {
    const double a = distill_alpha(cfg, f);
    CHECK(a <= prev + 1e-15);
    prev = a;
  }
  CHECK(distill_alpha(cfg, -0.5) == 0.8);
  CHECK(distill_alpha(cfg, 1.5) == 0.5);
}

TEST_CASE("composite transfer loss vanishes at the self-distillation fixed point") {
  EncoderConfig ecfg;
  ecfg.d_teacher = 4;
  ecfg.d_student = 4;
  RngState rng(21);
  DistillProjection proj(ecfg, rng);
  // Exact-match projection: identity weights, zero shift.
  Tensor w = proj.params().get("proj.w");
  std::fill(w.data(), w.data() + w.numel(), 0.0);
  for (int i = 0; i < 4; ++i) w.data()[i * 4 + i] = 1.0;
  Tensor b = proj.params().get("proj.b");
  std::fill(b.data(), b.data() + b.numel(), 0.0);

  DistillBatch batch;
  Tensor h = Tensor::from({2, 4}, {1, 2, 3, 4, 1, 2, 3, 4});  // identical rows
  batch.h_teacher = h;
  batch.h_student = h.clone();
  batch.z_teacher = Tensor::from({2}, {0.3, -1.1});
  batch.z_student = batch.z_teacher.clone();
  batch.labels = {1, 0};

  DistillConfig dcfg;
  LossConfig lcfg;
  DistillParts parts = distill_loss(batch, proj, 0.0, dcfg, lcfg);
  CHECK(std::abs(parts.kd) < 1e-12);
  CHECK(std::abs(parts.feat) < 1e-24);
  CHECK(std::abs(parts.rel) < 1e-24);  // identical embeddings: all-ones similarities
  CHECK(parts.alpha == 0.8);
  CHECK(parts.total.item() ==
        doctest::Approx(0.2 * parts.sup).epsilon(1e-9));

  // A single-instance batch skips the relational term.
  DistillBatch solo;
  solo.h_teacher = Tensor::from({1, 4}, {1, 0, 0, 0});
  solo.h_student = Tensor::from({1, 4}, {0, 1, 0, 0});
  solo.z_teacher = Tensor::scalar(0.5);
  solo.z_student = Tensor::scalar(-0.5);
  solo.labels = {1};
  DistillParts sp = distill_loss(solo, proj, 0.5, dcfg, lcfg);
  CHECK(sp.rel_skipped);
  CHECK(sp.rel == 0.0);
}

TEST_CASE("transfer loss gradients flow into the cheap encoder and projection") {
  EncoderConfig ecfg;
  ecfg.d_teacher = 6;
  ecfg.d_student = 4;
  ecfg.teacher_c1 = 3;
  ecfg.teacher_c2 = 3;
  ecfg.teacher_hidden = 8;
  ecfg.attn_bottleneck = 2;
  ecfg.student_channels = 2;
  RngState rng(27);
  TeacherEncoder teacher(ecfg, rng);
  StudentEncoder student(ecfg, rng);
  DistillProjection proj(ecfg, rng);

  std::vector<Tensor> xs;
  std::vector<SiteAttr> us;
  std::vector<int> ys;
  std::vector<ExpensiveOut> touts;
  for (int i = 0; i < 3; ++i) {
    Tensor x = Tensor::zeros({kEncodeRows, kEncodeCols});
    for (int c = 0; c < kEncodeCols; ++c) {
      x.data()[static_cast<int>(rng.uniform_int(4)) * kEncodeCols + c] = 1.0;
      x.data()[(5 + static_cast<int>(rng.uniform_int(4))) * kEncodeCols + c] = 1.0;
    }
    SiteAttr u{rng.uniform(), 6.0 + 4.0 * rng.uniform()};
    xs.push_back(x);
    us.push_back(u);
    ys.push_back(static_cast<int>(rng.uniform_int(2)));
    touts.push_back(teacher.forward(x, u));
  }

  auto make_loss = [&](Tape* tape) {
    DistillBatch batch;
    std::vector<Tensor> zs, hs, zt, ht;
    for (int i = 0; i < 3; ++i) {
      CheapSignals s = student.forward(xs[static_cast<std::size_t>(i)],
                                       us[static_cast<std::size_t>(i)], tape);
      zs.push_back(s.z_tilde);
      hs.push_back(s.h_tilde);
      zt.push_back(touts[static_cast<std::size_t>(i)].z);
      ht.push_back(touts[static_cast<std::size_t>(i)].h);
    }
    batch.z_student = ops::concat_vec(zs, tape);
    batch.h_student = ops::stack_rows_padded(hs, 3, tape);
    batch.z_teacher = ops::concat_vec(zt);
    batch.h_teacher = ops::stack_rows_padded(ht, 3);
    batch.labels = ys;
    return distill_loss(batch, proj, 0.25, DistillConfig{}, LossConfig{}, tape).total;
  };

  std::vector<Tensor> targets = student.params().tensors();
  for (const Tensor& t : proj.params().tensors()) targets.push_back(t);
  GradCheckOptions opts;
  opts.tol = 1e-4;
  opts.max_coords_per_tensor = 6;
  GradCheckReport rep = check_gradients(make_loss, targets, opts);
  CAPTURE(rep.worst);
  CAPTURE(rep.max_rel_err);
  CHECK(rep.ok());
}

TEST_CASE("metric suite matches hand-built cases") {
  // Hand-integrated four-point curve: area = 0.5*1 + 0.5*(2/3) = 5/6.
  MetricSet m = compute_metrics({0.9, 0.8, 0.3, 0.1}, {1, 0, 1, 0});
  CHECK(m.pr_auc_defined);
  CHECK(m.pr_auc == doctest::Approx(5.0 / 6.0).epsilon(1e-12));

  // Perfect calibrated ranking.
  MetricSet p = compute_metrics({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0});
  CHECK(p.pr_auc == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p.f1_at_half == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p.accuracy == 1.0);
  CHECK(p.precision == 1.0);
  CHECK(p.recall == 1.0);
  CHECK(p.specificity == 1.0);
  CHECK(p.npv == 1.0);
  CHECK(p.f1_best == doctest::Approx(1.0).epsilon(1e-12));

  // Single-class input: ranking area undefined, rates still reported.
  MetricSet s = compute_metrics({0.9, 0.2}, {1, 1});
  CHECK_FALSE(s.pr_auc_defined);
  CHECK(s.recall == doctest::Approx(0.5));

  CHECK_THROWS_AS(compute_metrics({}, {}), ShapeError);
  CHECK_THROWS_AS(compute_metrics({0.5}, {2}), ShapeError);
  CHECK_THROWS_AS(compute_metrics({std::nan("")}, {1}), NumericalError);
}

TEST_CASE("ranking area agrees with an independent sweep on random inputs") {
  RngState rng(31);
  for (int rep = 0; rep < 300; ++rep) {
    const int n = 2 + static_cast<int>(rng.uniform_int(20));
    std::vector<double> scores;
    std::vector<int> labels;
    bool pos = false, neg = false;
    for (int i = 0; i < n; ++i) {
      // Coarse grid forces frequent score ties.
      scores.push_back(std::round(rng.uniform() * 8.0) / 8.0);
      labels.push_back(static_cast<int>(rng.uniform_int(2)));
      (labels.back() == 1 ? pos : neg) = true;
    }
    if (!pos || !neg) continue;
    MetricSet m = compute_metrics(scores, labels);
    CHECK(m.pr_auc == doctest::Approx(oracle_pr_auc(scores, labels)).epsilon(1e-12));
    CHECK(m.f1_best >= m.f1_at_half - 1e-12);
    CHECK(m.pr_auc >= 0.0);
    CHECK(m.pr_auc <= 1.0 + 1e-12);
  }
}

TEST_CASE("random scores on balanced labels give a ranking area near one half") {
  RngState rng(37);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 10000; ++i) {
    scores.push_back(rng.uniform());
    labels.push_back(i % 2);
  }
  MetricSet m = compute_metrics(scores, labels);
  CHECK(m.pr_auc > 0.45);
  CHECK(m.pr_auc < 0.55);
}

TEST_CASE("loss and distill configs reject invalid fields") {
  LossConfig l;
  l.focal_gamma = -1;
  CHECK_THROWS_AS(l.validate(), ShapeError);
  l = LossConfig{};
  l.focal_alpha = 1.0;
  CHECK_THROWS_AS(l.validate(), ShapeError);
  l = LossConfig{};
  l.smooth_pos = 0.4;
  CHECK_THROWS_AS(l.validate(), ShapeError);

  DistillConfig d;
  d.temperature = 0.0;
  CHECK_THROWS_AS(d.validate(), ShapeError);
  d = DistillConfig{};
  d.alpha_start = 1.2;
  CHECK_THROWS_AS(d.validate(), ShapeError);
}
