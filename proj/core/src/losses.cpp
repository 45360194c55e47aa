#include "brmil/losses.hpp"

#include <cmath>
#include <string>

namespace brmil {

namespace {

void check_label(int y) {
  if (y != 0 && y != 1)
    throw ShapeError("binary loss: label must be 0 or 1, got " + std::to_string(y));
}

void check_logit(const Tensor& z, const char* who) {
  if (z.numel() != 1)
    throw ShapeError(std::string(who) + ": logit must hold one value, got " +
                     shape_str(z.shape()));
}

double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

}  // namespace

void LossConfig::validate() const {
  auto bad = [](const std::string& what) { throw ShapeError("loss config: " + what); };
  if (!(smooth_pos > 0.5 && smooth_pos <= 1.0)) bad("smooth_pos outside (0.5, 1]");
  if (!(smooth_neg >= 0.0 && smooth_neg < 0.5)) bad("smooth_neg outside [0, 0.5)");
  if (focal_gamma < 0.0) bad("focal_gamma must be >= 0");
  if (!(focal_alpha > 0.0 && focal_alpha < 1.0)) bad("focal_alpha outside (0, 1)");
  if (lambda_bce < 0.0 || lambda_focal < 0.0) bad("mixing weights must be >= 0");
  if (class_weight <= 0.0) bad("class_weight must be positive");
}

void DistillConfig::validate() const {
  auto bad = [](const std::string& what) { throw ShapeError("distill config: " + what); };
  if (temperature <= 0.0) bad("temperature must be positive");
  auto in01 = [](double a) { return a >= 0.0 && a <= 1.0; };
  if (!in01(alpha_start) || !in01(alpha_end)) bad("alpha endpoints outside [0, 1]");
  if (beta_feat < 0.0 || beta_rel < 0.0) bad("beta weights must be >= 0");
}

double distill_alpha(const DistillConfig& cfg, double f) {
  if (f <= 0.0) return cfg.alpha_start;
  if (f >= 1.0) return cfg.alpha_end;
  return cfg.alpha_end +
         0.5 * (cfg.alpha_start - cfg.alpha_end) * (1.0 + std::cos(M_PI * f));
}

Tensor bce_smoothed(const Tensor& z, int y, const LossConfig& cfg, Tape* tape) {
  namespace o = ops;
  check_label(y);
  check_logit(z, "bce_smoothed");
  const double target = y == 1 ? cfg.smooth_pos : cfg.smooth_neg;
  // -[t log σ(z) + (1-t) log(1-σ(z))] = t softplus(-z) + (1-t) softplus(z)
  Tensor pos = o::mul_scalar(o::softplus(o::mul_scalar(z, -1.0, tape), tape), target, tape);
  Tensor neg = o::mul_scalar(o::softplus(z, tape), 1.0 - target, tape);
  return o::mul_scalar(o::add(pos, neg, tape), cfg.class_weight, tape);
}

Tensor focal_mix(const Tensor& z, int y, const LossConfig& cfg, Tape* tape) {
  namespace o = ops;
  check_label(y);
  check_logit(z, "focal_mix");
  Tensor bce = bce_smoothed(z, y, cfg, tape);
  // 1 - p_t: σ(-z) for the positive class, σ(z) for the negative.
  Tensor miss = o::sigmoid(o::mul_scalar(z, y == 1 ? -1.0 : 1.0, tape), tape);
  Tensor damp;
  if (cfg.focal_gamma == 0.0) {
    damp = Tensor::scalar(1.0);
  } else if (cfg.focal_gamma == 1.0) {
    damp = miss;
  } else {
    // miss^γ = exp(γ log miss); miss = σ(·) > 0 keeps the log finite.
    damp = o::exp(o::mul_scalar(o::log(miss, tape), cfg.focal_gamma, tape), tape);
  }
  const double alpha_t = y == 1 ? cfg.focal_alpha : 1.0 - cfg.focal_alpha;
  Tensor focal = o::mul_scalar(o::mul(damp, bce, tape), cfg.lambda_focal * alpha_t, tape);
  return o::add(o::mul_scalar(bce, cfg.lambda_bce, tape), focal, tape);
}

Tensor kd_bernoulli(const Tensor& z_teacher, const Tensor& z_student, double temperature,
                    Tape* tape) {
  namespace o = ops;
  check_logit(z_teacher, "kd_bernoulli");
  check_logit(z_student, "kd_bernoulli");
  if (temperature <= 0.0)
    throw ShapeError("kd_bernoulli: temperature must be positive, got " +
                     std::to_string(temperature));
  const double t = temperature;
  const double p = 1.0 / (1.0 + std::exp(-z_teacher.item() / t));  // constant
  Tensor zs = o::mul_scalar(z_student, 1.0 / t, tape);
  // KL(p‖q) = p softplus(-zs) + (1-p) softplus(zs) - H(p) with q = σ(zs).
  Tensor cross =
      o::add(o::mul_scalar(o::softplus(o::mul_scalar(zs, -1.0, tape), tape), p, tape),
             o::mul_scalar(o::softplus(zs, tape), 1.0 - p, tape), tape);
  const double entropy = -(xlogx(p) + xlogx(1.0 - p));
  return o::mul_scalar(o::add_scalar(cross, -entropy, tape), t * t, tape);
}

DistillParts distill_loss(const DistillBatch& batch, const DistillProjection& proj,
                          double step_fraction, const DistillConfig& dcfg,
                          const LossConfig& lcfg, Tape* tape) {
  namespace o = ops;
  dcfg.validate();
  lcfg.validate();
  const int b = batch.z_student.numel();
  if (b == 0) throw ShapeError("distill_loss: empty batch");
  if (batch.z_teacher.numel() != b || static_cast<int>(batch.labels.size()) != b ||
      batch.h_teacher.dim(0) != b || batch.h_student.dim(0) != b)
    throw ShapeError("distill_loss: mismatched batch sizes");

  DistillParts parts;
  parts.alpha = distill_alpha(dcfg, step_fraction);

  Tensor sup;
  Tensor kd;
  for (int i = 0; i < b; ++i) {
    Tensor zs = o::slice_vec(batch.z_student, i, 1, tape);
    Tensor zt = o::slice_vec(batch.z_teacher, i, 1);
    Tensor s = focal_mix(zs, batch.labels[static_cast<std::size_t>(i)], lcfg, tape);
    Tensor k = kd_bernoulli(zt, zs, dcfg.temperature, tape);
    sup = i == 0 ? s : o::add(sup, s, tape);
    kd = i == 0 ? k : o::add(kd, k, tape);
  }
  sup = o::mul_scalar(sup, 1.0 / b, tape);
  kd = o::mul_scalar(kd, 1.0 / b, tape);
  parts.sup = sup.item();
  parts.kd = kd.item();

  // Feature matching: project the student embedding into teacher space and
  // penalize the mean squared gap.
  Tensor w = proj.params().get("proj.w");  // [d_teacher, d_student]
  Tensor bproj = proj.params().get("proj.b");
  Tensor mapped = o::add_bias(o::matmul(batch.h_student, o::transpose(w, tape), tape),
                              bproj, tape);
  Tensor gap = o::sub(mapped, batch.h_teacher, tape);
  Tensor feat = o::mean(o::mul(gap, gap, tape), tape);
  parts.feat = feat.item();

  Tensor total = o::add(
      o::add(o::mul_scalar(sup, 1.0 - parts.alpha, tape),
             o::mul_scalar(kd, parts.alpha, tape), tape),
      o::mul_scalar(feat, dcfg.beta_feat, tape), tape);

  if (b >= 2 && dcfg.beta_rel > 0.0) {
    Tensor gt_rows = o::rows_l2_normalize(batch.h_teacher);
    Tensor gs_rows = o::rows_l2_normalize(batch.h_student, tape);
    Tensor gram_t = o::matmul(gt_rows, o::transpose(gt_rows));
    Tensor gram_s = o::matmul(gs_rows, o::transpose(gs_rows, tape), tape);
    Tensor diff = o::sub(gram_s, gram_t, tape);
    Tensor rel = o::mean(o::mul(diff, diff, tape), tape);
    parts.rel = rel.item();
    total = o::add(total, o::mul_scalar(rel, dcfg.beta_rel, tape), tape);
  } else if (b < 2) {
    parts.rel_skipped = true;
  }

  parts.total = total;
  return parts;
}

}  // namespace brmil
