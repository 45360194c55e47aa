#include "brmil/encoders.hpp"

#include <cmath>

#include "brmil/seqscan.hpp"

namespace brmil {

using namespace ops;

Tensor init_linear(Shape shape, int fan_in, RngState& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), -bound, bound, rng);
}

Tensor channel_attention(const Tensor& features, const Tensor& w1, const Tensor& b1,
                         const Tensor& w2, const Tensor& b2, Tape* tape) {
  const int c = features.dim(0);
  const int bneck = w1.dim(0);
  Tensor pooled = reshape(row_mean(features, tape), {c, 1}, tape);
  // Shared scalar MLP, vectorized over channels: [C,1]*[1,B] -> [C,B].
  Tensor mid = relu(add_bias(matmul(pooled, reshape(w1, {1, bneck}, tape), tape), b1, tape), tape);
  Tensor pre = add_bias(matmul(mid, reshape(w2, {bneck, 1}, tape), tape), b2, tape);  // [C,1]
  Tensor gate = sigmoid(flatten(pre, tape), tape);  // (0,1)^C
  return scale_rows(features, gate, tape);
}

TeacherEncoder::TeacherEncoder(const EncoderConfig& cfg, RngState& rng) : cfg_(cfg) {
  const int c1 = cfg.teacher_c1, c2 = cfg.teacher_c2;
  const int flat = c2 * (kEncodeCols - 5 + 1 - 3 + 1);  // width 50 -> 46 -> 44
  const int in_dim = flat + 2;
  conv1_w_ = params_.add("conv1.w", init_linear({c1, kEncodeRows, 5}, kEncodeRows * 5, rng));
  conv1_b_ = params_.add("conv1.b", init_linear({c1}, kEncodeRows * 5, rng));
  attn_w1_ = params_.add("attn.w1", init_linear({cfg.attn_bottleneck}, 1, rng));
  attn_b1_ = params_.add("attn.b1", init_linear({cfg.attn_bottleneck}, 1, rng));
  attn_w2_ = params_.add("attn.w2", init_linear({cfg.attn_bottleneck}, cfg.attn_bottleneck, rng));
  attn_b2_ = params_.add("attn.b2", init_linear({1}, cfg.attn_bottleneck, rng));
  conv2_w_ = params_.add("conv2.w", init_linear({c2, c1, 3}, c1 * 3, rng));
  conv2_b_ = params_.add("conv2.b", init_linear({c2}, c1 * 3, rng));
  hidden_w_ = params_.add("hidden.w", init_linear({cfg.teacher_hidden, in_dim}, in_dim, rng));
  hidden_b_ = params_.add("hidden.b", init_linear({cfg.teacher_hidden}, in_dim, rng));
  head_h_w_ = params_.add("head_h.w", init_linear({cfg.d_teacher, cfg.teacher_hidden}, cfg.teacher_hidden, rng));
  head_h_b_ = params_.add("head_h.b", init_linear({cfg.d_teacher}, cfg.teacher_hidden, rng));
  head_z_w_ = params_.add("head_z.w", init_linear({1, cfg.teacher_hidden}, cfg.teacher_hidden, rng));
  head_z_b_ = params_.add("head_z.b", init_linear({1}, cfg.teacher_hidden, rng));
}

void TeacherEncoder::rebind() {
  conv1_w_ = params_.get("conv1.w");
  conv1_b_ = params_.get("conv1.b");
  attn_w1_ = params_.get("attn.w1");
  attn_b1_ = params_.get("attn.b1");
  attn_w2_ = params_.get("attn.w2");
  attn_b2_ = params_.get("attn.b2");
  conv2_w_ = params_.get("conv2.w");
  conv2_b_ = params_.get("conv2.b");
  hidden_w_ = params_.get("hidden.w");
  hidden_b_ = params_.get("hidden.b");
  head_h_w_ = params_.get("head_h.w");
  head_h_b_ = params_.get("head_h.b");
  head_z_w_ = params_.get("head_z.w");
  head_z_b_ = params_.get("head_z.b");
}

ExpensiveOut TeacherEncoder::forward(const Tensor& x, const SiteAttr& u, Tape* tape) const {
  if (x.ndim() != 2 || x.dim(0) != kEncodeRows || x.dim(1) != kEncodeCols)
    throw ShapeError("teacher_forward: expected [10,50] input, got " + shape_str(x.shape()));
  Tensor s1 = relu(conv1d(x, conv1_w_, conv1_b_, tape), tape);
  Tensor gated = channel_attention(s1, attn_w1_, attn_b1_, attn_w2_, attn_b2_, tape);
  Tensor s2 = relu(conv1d(gated, conv2_w_, conv2_b_, tape), tape);
  Tensor feat = concat_vec({flatten(s2, tape), Tensor::from({2}, {u.p, u.s_esa})}, tape);
  Tensor hid = relu(add(matvec(hidden_w_, feat, tape), hidden_b_, tape), tape);
  ExpensiveOut out;
  out.h = add(matvec(head_h_w_, hid, tape), head_h_b_, tape);
  out.z = add(matvec(head_z_w_, hid, tape), head_z_b_, tape);
  return out;
}

StudentEncoder::StudentEncoder(const EncoderConfig& cfg, RngState& rng) : cfg_(cfg) {
  const int ch = cfg.student_channels;
  const int flat = ch * (kEncodeCols - 5 + 1);  // width 50 -> 46
  const int in_dim = flat + 2;
  conv_w_ = params_.add("conv.w", init_linear({ch, kEncodeRows, 5}, kEncodeRows * 5, rng));
  conv_b_ = params_.add("conv.b", init_linear({ch}, kEncodeRows * 5, rng));
  head_h_w_ = params_.add("head_h.w", init_linear({cfg.d_student, in_dim}, in_dim, rng));
  head_h_b_ = params_.add("head_h.b", init_linear({cfg.d_student}, in_dim, rng));
  head_z_w_ = params_.add("head_z.w", init_linear({1, in_dim}, in_dim, rng));
  head_z_b_ = params_.add("head_z.b", init_linear({1}, in_dim, rng));
}

void StudentEncoder::rebind() {
  conv_w_ = params_.get("conv.w");
  conv_b_ = params_.get("conv.b");
  head_h_w_ = params_.get("head_h.w");
  head_h_b_ = params_.get("head_h.b");
  head_z_w_ = params_.get("head_z.w");
  head_z_b_ = params_.get("head_z.b");
}

CheapSignals StudentEncoder::forward(const Tensor& x, const SiteAttr& u, Tape* tape) const {
  if (x.ndim() != 2 || x.dim(0) != kEncodeRows || x.dim(1) != kEncodeCols)
    throw ShapeError("student_forward: expected [10,50] input, got " + shape_str(x.shape()));
  Tensor s = relu(conv1d(x, conv_w_, conv_b_, tape), tape);
  Tensor feat = concat_vec({flatten(s, tape), Tensor::from({2}, {u.p, u.s_esa})}, tape);
  CheapSignals out;
  out.h_tilde = add(matvec(head_h_w_, feat, tape), head_h_b_, tape);
  out.z_tilde = add(matvec(head_z_w_, feat, tape), head_z_b_, tape);
  return out;
}

DistillProjection::DistillProjection(const EncoderConfig& cfg, RngState& rng) {
  w_ = params_.add("proj.w", init_linear({cfg.d_teacher, cfg.d_student}, cfg.d_student, rng));
  b_ = params_.add("proj.b", init_linear({cfg.d_teacher}, cfg.d_student, rng));
}

void DistillProjection::rebind() {
  w_ = params_.get("proj.w");
  b_ = params_.get("proj.b");
}

Tensor DistillProjection::forward(const Tensor& h_tilde, Tape* tape) const {
  return add(matvec(w_, h_tilde, tape), b_, tape);
}

}  // namespace brmil
