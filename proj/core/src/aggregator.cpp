#include "brmil/aggregator.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace brmil {

void AggConfig::validate() const {
  auto bad = [](const std::string& what) { throw ShapeError("aggregator config: " + what); };
  if (kmax <= 0) bad("kmax must be positive, got " + std::to_string(kmax));
  if (d_token <= 0) bad("d_token must be positive, got " + std::to_string(d_token));
  if (width <= 0) bad("width must be positive, got " + std::to_string(width));
  if (heads <= 0) bad("heads must be positive, got " + std::to_string(heads));
  if (depth <= 0) bad("depth must be positive, got " + std::to_string(depth));
  if (ff_hidden < 0) bad("ff_hidden must be non-negative, got " + std::to_string(ff_hidden));
  if (width % heads != 0)
    bad("heads (" + std::to_string(heads) + ") must divide width (" +
        std::to_string(width) + ")");
}

Tensor tokenize(const ExpensiveOut& exp, double s_esa, double p, Tape* tape) {
  if (exp.h.ndim() != 1)
    throw ShapeError("tokenize: embedding must be 1-D, got " + shape_str(exp.h.shape()));
  if (exp.z.numel() != 1)
    throw ShapeError("tokenize: site logit must hold one value, got " +
                     shape_str(exp.z.shape()));
  if (!std::isfinite(s_esa) || !std::isfinite(p))
    throw NumericalError("tokenize: non-finite scalar feature");
  Tensor tail = Tensor::from({2}, {s_esa, p});
  return ops::concat_vec({exp.h, exp.z, tail}, tape);
}

TokenBatch pack(const std::vector<Tensor>& tokens, int kmax, Tape* tape) {
  if (static_cast<int>(tokens.size()) > kmax)
    throw ShapeError("pack: " + std::to_string(tokens.size()) +
                     " tokens exceed kmax " + std::to_string(kmax));
  TokenBatch batch;
  batch.count = static_cast<int>(tokens.size());
  batch.mask.assign(static_cast<std::size_t>(kmax), 0);
  for (int i = 0; i < batch.count; ++i) batch.mask[static_cast<std::size_t>(i)] = 1;
  if (tokens.empty()) {
    batch.tokens = Tensor::zeros({kmax, 1});
    return batch;
  }
  batch.tokens = ops::stack_rows_padded(tokens, kmax, tape);
  return batch;
}

TokenBatch truncate_mask(const TokenBatch& batch, int k, Tape* tape) {
  if (k <= 0) throw ShapeError("truncate_mask: k must be positive, got " + std::to_string(k));
  TokenBatch out;
  out.mask.assign(batch.mask.size(), 0);
  int kept = 0;
  for (std::size_t i = 0; i < batch.mask.size(); ++i) {
    if (batch.mask[i] && kept < k) {
      out.mask[i] = 1;
      ++kept;
    }
  }
  out.count = kept;
  out.tokens = ops::zero_rows(batch.tokens, out.mask, tape);
  return out;
}

std::vector<int> canonical_order(const TokenBatch& batch) {
  std::vector<int> order;
  for (std::size_t i = 0; i < batch.mask.size(); ++i)
    if (batch.mask[i]) order.push_back(static_cast<int>(i));
  const int cols = batch.tokens.dim(1);
  const double* d = batch.tokens.data();
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::lexicographical_compare(d + a * cols, d + (a + 1) * cols,
                                        d + b * cols, d + (b + 1) * cols);
  });
  return order;
}

AggModel::AggModel(const AggConfig& cfg, RngState& rng) : cfg_(cfg) {
  cfg_.validate();
  const int w = cfg_.width, ffh = cfg_.ff();
  auto add_block = [&](const std::string& prefix, int q_width) {
    params_.add(prefix + ".attn.wq", init_linear({q_width, w}, q_width, rng));
    params_.add(prefix + ".attn.bq", init_linear({w}, q_width, rng));
    params_.add(prefix + ".attn.wk", init_linear({w, w}, w, rng));
    params_.add(prefix + ".attn.bk", init_linear({w}, w, rng));
    params_.add(prefix + ".attn.wv", init_linear({w, w}, w, rng));
    params_.add(prefix + ".attn.bv", init_linear({w}, w, rng));
    params_.add(prefix + ".attn.wo", init_linear({w, w}, w, rng));
    params_.add(prefix + ".attn.bo", init_linear({w}, w, rng));
    params_.add(prefix + ".ln1.g", Tensor::full({w}, 1.0));
    params_.add(prefix + ".ln1.b", Tensor::zeros({w}));
    params_.add(prefix + ".ff.w1", init_linear({w, ffh}, w, rng));
    params_.add(prefix + ".ff.b1", init_linear({ffh}, w, rng));
    params_.add(prefix + ".ff.w2", init_linear({ffh, w}, ffh, rng));
    params_.add(prefix + ".ff.b2", init_linear({w}, ffh, rng));
    params_.add(prefix + ".ln2.g", Tensor::full({w}, 1.0));
    params_.add(prefix + ".ln2.b", Tensor::zeros({w}));
  };
  params_.add("in.w", init_linear({cfg_.d_token, w}, cfg_.d_token, rng));
  params_.add("in.b", init_linear({w}, cfg_.d_token, rng));
  for (int l = 0; l < cfg_.depth; ++l) add_block("sab" + std::to_string(l), w);
  params_.add("pma.seed", init_linear({1, w}, w, rng));
  add_block("pma", w);
  params_.add("head.w", init_linear({w, 1}, w, rng));
  params_.add("head.b", init_linear({1}, w, rng));
}

Tensor AggModel::multihead(const std::string& prefix, const Tensor& q_in,
                           const Tensor& kv,
                           const std::vector<std::uint8_t>& key_mask,
                           Tape* tape) const {
  namespace o = ops;
  auto P = [&](const char* n) { return params_.get(prefix + n); };
  const int dh = cfg_.head_dim();
  Tensor q = o::add_bias(o::matmul(q_in, P(".attn.wq"), tape), P(".attn.bq"), tape);
  Tensor k = o::add_bias(o::matmul(kv, P(".attn.wk"), tape), P(".attn.bk"), tape);
  Tensor v = o::add_bias(o::matmul(kv, P(".attn.wv"), tape), P(".attn.bv"), tape);
  std::vector<Tensor> heads;
  for (int h = 0; h < cfg_.heads; ++h) {
    Tensor qh = o::slice_cols(q, h * dh, dh, tape);
    Tensor kh = o::slice_cols(k, h * dh, dh, tape);
    Tensor vh = o::slice_cols(v, h * dh, dh, tape);
    Tensor scores = o::mul_scalar(o::matmul(qh, o::transpose(kh, tape), tape),
                                  1.0 / std::sqrt(static_cast<double>(dh)), tape);
    Tensor attn = o::softmax_masked(scores, key_mask, tape);
    heads.push_back(o::matmul(attn, vh, tape));
  }
  Tensor mixed = o::concat_cols(heads, tape);
  return o::add_bias(o::matmul(mixed, P(".attn.wo"), tape), P(".attn.bo"), tape);
}

Tensor AggModel::block(const std::string& prefix, const Tensor& q_in,
                       const Tensor& kv, const std::vector<std::uint8_t>& key_mask,
                       Tape* tape) const {
  namespace o = ops;
  auto P = [&](const char* n) { return params_.get(prefix + n); };
  Tensor attn = multihead(prefix, q_in, kv, key_mask, tape);
  Tensor h1 = o::layer_norm(o::add(q_in, attn, tape), P(".ln1.g"), P(".ln1.b"), tape);
  Tensor ff = o::add_bias(
      o::matmul(o::relu(o::add_bias(o::matmul(h1, P(".ff.w1"), tape), P(".ff.b1"), tape),
                        tape),
                P(".ff.w2"), tape),
      P(".ff.b2"), tape);
  return o::layer_norm(o::add(h1, ff, tape), P(".ln2.g"), P(".ln2.b"), tape);
}

Tensor AggModel::forward(const TokenBatch& batch, Tape* tape) const {
  namespace o = ops;
  if (batch.count <= 0)
    throw NumericalError("aggregator: cannot pool an all-masked batch");
  if (batch.tokens.ndim() != 2 || batch.tokens.dim(1) != cfg_.d_token)
    throw ShapeError("aggregator: tokens must be [*, " + std::to_string(cfg_.d_token) +
                     "], got " + shape_str(batch.tokens.shape()));

  Tensor x = batch.tokens;
  std::vector<std::uint8_t> mask = batch.mask;
  bool padded = batch.count < static_cast<int>(batch.mask.size());
  if (cfg_.deterministic_order) {
    x = o::gather_rows(x, canonical_order(batch), tape);
    mask.assign(static_cast<std::size_t>(batch.count), 1);
    padded = false;
  }

  x = o::add_bias(o::matmul(x, params_.get("in.w"), tape), params_.get("in.b"), tape);
  if (padded) x = o::zero_rows(x, mask, tape);
  for (int l = 0; l < cfg_.depth; ++l) {
    x = block("sab" + std::to_string(l), x, x, mask, tape);
    if (padded) x = o::zero_rows(x, mask, tape);
  }
  Tensor pooled = block("pma", params_.get("pma.seed"), x, mask, tape);
  Tensor logit = o::matmul(pooled, params_.get("head.w"), tape);
  return o::add(o::flatten(logit, tape), params_.get("head.b"), tape);
}

double AggModel::predict(const TokenBatch& batch) const {
  return ops::sigmoid(forward(batch)).item();
}

double lipschitz_probe(const AggModel& model, const TokenBatch& batch, int trials,
                       double eps, RngState& rng) {
  const double base = model.forward(batch).item();
  const int cols = batch.tokens.dim(1);
  std::vector<int> real;
  for (std::size_t i = 0; i < batch.mask.size(); ++i)
    if (batch.mask[i]) real.push_back(static_cast<int>(i));
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const int row = real[static_cast<std::size_t>(rng.uniform_int(real.size()))];
    std::vector<double> dir(static_cast<std::size_t>(cols));
    double norm = 0.0;
    for (double& d : dir) {
      d = rng.normal();
      norm += d * d;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    TokenBatch moved = batch;
    moved.tokens = batch.tokens.clone();
    for (int j = 0; j < cols; ++j)
      moved.tokens.data()[row * cols + j] += eps * dir[static_cast<std::size_t>(j)] / norm;
    worst = std::max(worst, std::abs(model.forward(moved).item() - base) / eps);
  }
  return worst;
}

}  // namespace brmil
