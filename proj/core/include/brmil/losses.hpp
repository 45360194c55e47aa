#pragma once

#include <vector>

#include "brmil/encoders.hpp"
#include "brmil/tensor.hpp"

namespace brmil {

/// Binary-loss shaping: label smoothing targets, focal reweighting, and the
/// mixing weights between the plain and focal terms.
struct LossConfig {
  double smooth_pos = 0.95;
  double smooth_neg = 0.05;
  double focal_gamma = 1.0;
  double focal_alpha = 0.4;
  double lambda_bce = 0.01;
  double lambda_focal = 1.0;
  double class_weight = 1.0;

  void validate() const;
};

/// Teacher-to-student transfer weights: logit matching at a temperature, a
/// cosine blend schedule between supervised and matched terms, and the
/// feature / relational term weights.
struct DistillConfig {
  double temperature = 2.0;
  double alpha_start = 0.8;
  double alpha_end = 0.5;
  double beta_feat = 0.1;
  double beta_rel = 1.0;

  void validate() const;
};

/// Blend weight at training fraction f in [0,1]: cosine ramp from
/// alpha_start at f=0 to alpha_end at f=1.
double distill_alpha(const DistillConfig& cfg, double f);

/// Label-smoothed binary cross entropy on a [1] logit, in the softplus form
/// that stays finite for |z| up to about 700.
Tensor bce_smoothed(const Tensor& z, int y, const LossConfig& cfg,
                    Tape* tape = nullptr);

/// lambda_bce * bce + lambda_focal * alpha_t * (1 - p_t)^gamma * bce, where
/// p_t is the model probability of the true class and bce is the smoothed
/// term above.
Tensor focal_mix(const Tensor& z, int y, const LossConfig& cfg,
                 Tape* tape = nullptr);

/// Temperature-scaled binary logit matching: T^2 * KL(teacher ‖ student)
/// over the two-class distributions at temperature T. The teacher side is
/// treated as a constant.
Tensor kd_bernoulli(const Tensor& z_teacher, const Tensor& z_student, double temperature,
                    Tape* tape = nullptr);

/// One teacher/student output pair per instance in a minibatch. Teacher
/// tensors are constants; student tensors may carry gradients.
struct DistillBatch {
  Tensor z_teacher;  // [B]
  Tensor z_student;  // [B]
  Tensor h_teacher;  // [B, d_teacher]
  Tensor h_student;  // [B, d_student]
  std::vector<int> labels;
};

struct DistillParts {
  Tensor total;      // [1]
  double sup = 0.0;
  double kd = 0.0;
  double feat = 0.0;
  double rel = 0.0;
  double alpha = 0.0;
  bool rel_skipped = false;  // batch too small for the relational term
};

/// Composite transfer objective:
/// (1-alpha)*supervised + alpha*logit-matching + beta_feat*feature MSE
/// + beta_rel*relational term. The relational term compares the batch
/// cosine-similarity matrices of teacher and student embeddings entry-wise
/// (mean squared difference); batches of fewer than two instances skip it.
DistillParts distill_loss(const DistillBatch& batch, const DistillProjection& proj,
                          double step_fraction, const DistillConfig& dcfg,
                          const LossConfig& lcfg, Tape* tape = nullptr);

}  // namespace brmil
