#pragma once

#include <utility>

#include "brmil/params.hpp"
#include "brmil/rng.hpp"
#include "brmil/tensor.hpp"

namespace brmil {

struct EncoderConfig {
  int d_teacher = 384;
  int d_student = 64;
  int teacher_c1 = 16;      // channels out of the kernel-5 stage
  int teacher_c2 = 16;      // channels out of the kernel-3 stage
  int teacher_hidden = 256;
  int attn_bottleneck = 8;
  int student_channels = 4;  // single kernel-5 stage
};

/// Per-candidate structural attributes fed beside the content tensor.
struct SiteAttr {
  double p = 0.0;
  double s_esa = 0.0;
};

struct ExpensiveOut {
  Tensor h;  // [d_teacher]
  Tensor z;  // [1]
};

struct CheapSignals {
  Tensor h_tilde;  // [d_student]
  Tensor z_tilde;  // [1]
};

/// Per-channel gate: each channel's mean goes through a shared two-layer
/// scalar MLP (hidden width = bottleneck) and a sigmoid; output =
/// gate ⊙ features, same shape. Sharing the MLP across channels makes the
/// block permutation-equivariant: equal channels always get equal gates.
/// w1, b1, w2: [bottleneck]; b2: [1].
Tensor channel_attention(const Tensor& features, const Tensor& w1, const Tensor& b1,
                         const Tensor& w2, const Tensor& b2, Tape* tape = nullptr);

/// Expensive encoder: conv(k5) -> ReLU -> channel attention -> conv(k3) ->
/// ReLU -> flatten ⊕ (p, s_esa) -> hidden ReLU -> (h, z) heads.
class TeacherEncoder {
 public:
  TeacherEncoder() = default;
  TeacherEncoder(const EncoderConfig& cfg, RngState& rng);

  ExpensiveOut forward(const Tensor& x, const SiteAttr& u, Tape* tape = nullptr) const;

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const EncoderConfig& config() const { return cfg_; }
  /// Rebinds the layer handles after params_ has been replaced wholesale.
  void rebind();

 private:
  EncoderConfig cfg_;
  ParamSet params_;
  Tensor conv1_w_, conv1_b_, attn_w1_, attn_b1_, attn_w2_, attn_b2_;
  Tensor conv2_w_, conv2_b_, hidden_w_, hidden_b_;
  Tensor head_h_w_, head_h_b_, head_z_w_, head_z_b_;
};

/// Cheap encoder: conv(k5) -> ReLU -> flatten ⊕ (p, s_esa) -> (h̃, z̃) heads.
class StudentEncoder {
 public:
  StudentEncoder() = default;
  StudentEncoder(const EncoderConfig& cfg, RngState& rng);

  CheapSignals forward(const Tensor& x, const SiteAttr& u, Tape* tape = nullptr) const;

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const EncoderConfig& config() const { return cfg_; }
  void rebind();

 private:
  EncoderConfig cfg_;
  ParamSet params_;
  Tensor conv_w_, conv_b_, head_h_w_, head_h_b_, head_z_w_, head_z_b_;
};

/// Linear map from student embedding space into teacher embedding space,
/// used by the feature-matching term of the distillation loss.
class DistillProjection {
 public:
  DistillProjection() = default;
  DistillProjection(const EncoderConfig& cfg, RngState& rng);

  Tensor forward(const Tensor& h_tilde, Tape* tape = nullptr) const;

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  void rebind();

 private:
  Tensor w_, b_;
  ParamSet params_;
};

/// Uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor init_linear(Shape shape, int fan_in, RngState& rng);

}  // namespace brmil
