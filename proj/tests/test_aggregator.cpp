#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "brmil/aggregator.hpp"
#include "brmil/gradcheck.hpp"
#include "brmil/rng.hpp"

using namespace brmil;

namespace {

using Mat = std::vector<std::vector<double>>;
using Vec = std::vector<double>;

AggConfig tiny_config() {
  AggConfig cfg;
  cfg.kmax = 8;
  cfg.d_token = 11;
  cfg.width = 8;
  cfg.heads = 2;
  cfg.depth = 2;
  cfg.deterministic_order = false;
  return cfg;
}

Mat mat_of(const ParamSet& p, const std::string& name) {
  Tensor t = p.get(name);
  Mat m(static_cast<std::size_t>(t.dim(0)), Vec(static_cast<std::size_t>(t.dim(1))));
  for (int i = 0; i < t.dim(0); ++i)
    for (int j = 0; j < t.dim(1); ++j)
      m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = t[i * t.dim(1) + j];
  return m;
}

Vec vec_of(const ParamSet& p, const std::string& name) {
  Tensor t = p.get(name);
  Vec v(static_cast<std::size_t>(t.numel()));
  for (int i = 0; i < t.numel(); ++i) v[static_cast<std::size_t>(i)] = t[i];
  return v;
}

Mat ref_linear(const Mat& x, const Mat& w, const Vec& b) {
  Mat y(x.size(), Vec(b.size(), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      double acc = b[j];
      for (std::size_t k = 0; k < w.size(); ++k) acc += x[i][k] * w[k][j];
      y[i][j] = acc;
    }
  return y;
}

void ref_ln_inplace(Mat& x, const Vec& g, const Vec& b) {
  for (auto& row : x) {
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(row.size());
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(row.size());
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t j = 0; j < row.size(); ++j)
      row[j] = g[j] * (row[j] - mu) * inv + b[j];
  }
}

Mat ref_mha(const ParamSet& p, const AggConfig& cfg, const std::string& prefix,
            const Mat& q_in, const Mat& kv) {
  const Mat q = ref_linear(q_in, mat_of(p, prefix + ".attn.wq"), vec_of(p, prefix + ".attn.bq"));
  const Mat k = ref_linear(kv, mat_of(p, prefix + ".attn.wk"), vec_of(p, prefix + ".attn.bk"));
  const Mat v = ref_linear(kv, mat_of(p, prefix + ".attn.wv"), vec_of(p, prefix + ".attn.bv"));
  const int dh = cfg.head_dim();
  Mat mixed(q.size(), Vec(static_cast<std::size_t>(cfg.width), 0.0));
  for (int h = 0; h < cfg.heads; ++h) {
    const int off = h * dh;
    for (std::size_t i = 0; i < q.size(); ++i) {
      Vec score(kv.size(), 0.0);
      double mx = -1e300;
      for (std::size_t j = 0; j < kv.size(); ++j) {
        double s = 0.0;
        for (int d = 0; d < dh; ++d) s += q[i][static_cast<std::size_t>(off + d)] *
                                          k[j][static_cast<std::size_t>(off + d)];
        score[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, score[j]);
      }
      double z = 0.0;
      for (double& s : score) {
        s = std::exp(s - mx);
        z += s;
      }
      for (std::size_t j = 0; j < kv.size(); ++j)
        for (int d = 0; d < dh; ++d)
          mixed[i][static_cast<std::size_t>(off + d)] +=
              (score[j] / z) * v[j][static_cast<std::size_t>(off + d)];
    }
  }
  return ref_linear(mixed, mat_of(p, prefix + ".attn.wo"), vec_of(p, prefix + ".attn.bo"));
}

Mat ref_block(const ParamSet& p, const AggConfig& cfg, const std::string& prefix,
              const Mat& q_in, const Mat& kv) {
  Mat attn = ref_mha(p, cfg, prefix, q_in, kv);
  for (std::size_t i = 0; i < attn.size(); ++i)
    for (std::size_t j = 0; j < attn[i].size(); ++j) attn[i][j] += q_in[i][j];
  ref_ln_inplace(attn, vec_of(p, prefix + ".ln1.g"), vec_of(p, prefix + ".ln1.b"));
  Mat hid = ref_linear(attn, mat_of(p, prefix + ".ff.w1"), vec_of(p, prefix + ".ff.b1"));
  for (auto& row : hid)
    for (double& v : row) v = std::max(0.0, v);
  Mat ff = ref_linear(hid, mat_of(p, prefix + ".ff.w2"), vec_of(p, prefix + ".ff.b2"));
  for (std::size_t i = 0; i < ff.size(); ++i)
    for (std::size_t j = 0; j < ff[i].size(); ++j) ff[i][j] += attn[i][j];
  ref_ln_inplace(ff, vec_of(p, prefix + ".ln2.g"), vec_of(p, prefix + ".ln2.b"));
  return ff;
}

// Whole-model oracle on the unmasked token subset, plain loops only.
double ref_forward(const ParamSet& p, const AggConfig& cfg, const Mat& tokens) {
  Mat x = ref_linear(tokens, mat_of(p, "in.w"), vec_of(p, "in.b"));
  for (int l = 0; l < cfg.depth; ++l) x = ref_block(p, cfg, "sab" + std::to_string(l), x, x);
  Mat seed{vec_of(p, "pma.seed")};
  Mat pooled = ref_block(p, cfg, "pma", seed, x);
  const Mat hw = mat_of(p, "head.w");
  double z = vec_of(p, "head.b")[0];
  for (std::size_t j = 0; j < pooled[0].size(); ++j) z += pooled[0][j] * hw[j][0];
  return z;
}

std::vector<Tensor> random_tokens(int count, int d, RngState& rng) {
  std::vector<Tensor> toks;
  for (int i = 0; i < count; ++i) toks.push_back(Tensor::uniform({d}, -1.0, 1.0, rng));
  return toks;
}

Mat rows_of_tokens(const std::vector<Tensor>& toks) {
  Mat m;
  for (const Tensor& t : toks) {
    Vec row(static_cast<std::size_t>(t.numel()));
    for (int i = 0; i < t.numel(); ++i) row[static_cast<std::size_t>(i)] = t[i];
    m.push_back(row);
  }
  return m;
}

}  // namespace

TEST_CASE("tokens concatenate embedding, logit, score and position in order") {
  ExpensiveOut exp{Tensor::zeros({384}), Tensor::scalar(1.0)};
  Tensor tok = tokenize(exp, 6.0, 0.5);
  REQUIRE(tok.numel() == 387);
  for (int i = 0; i < 384; ++i) CHECK(tok[i] == 0.0);
  CHECK(tok[384] == 1.0);
  CHECK(tok[385] == 6.0);
  CHECK(tok[386] == 0.5);

  RngState rng(42);
  ExpensiveOut small{Tensor::uniform({8}, -1, 1, rng), Tensor::scalar(-0.25)};
  Tensor tok2 = tokenize(small, 7.5, 0.125);
  CHECK(tok2.numel() == 11);
  // The leading slice recovers the embedding exactly.
  Tensor back = ops::slice_vec(tok2, 0, 8);
  for (int i = 0; i < 8; ++i) CHECK(back[i] == small.h[i]);

  CHECK_THROWS_AS(tokenize(small, std::nan(""), 0.5), NumericalError);
}

TEST_CASE("packing pads with zero rows and a matching mask") {
  RngState rng(7);
  auto toks = random_tokens(3, 5, rng);
  TokenBatch b = pack(toks, 64);
  CHECK(b.count == 3);
  CHECK(b.tokens.dim(0) == 64);
  for (int i = 0; i < 3; ++i) CHECK(b.mask[static_cast<std::size_t>(i)] == 1);
  for (int i = 3; i < 64; ++i) {
    CHECK(b.mask[static_cast<std::size_t>(i)] == 0);
    for (int j = 0; j < 5; ++j) CHECK(b.tokens[i * 5 + j] == 0.0);
  }

  TokenBatch full = pack(random_tokens(4, 5, rng), 4);
  CHECK(full.count == 4);
  CHECK(std::all_of(full.mask.begin(), full.mask.end(), [](std::uint8_t m) { return m == 1; }));

  TokenBatch empty = pack({}, 8);
  CHECK(empty.count == 0);
  CHECK(std::none_of(empty.mask.begin(), empty.mask.end(), [](std::uint8_t m) { return m != 0; }));

  CHECK_THROWS_AS(pack(random_tokens(5, 3, rng), 4), ShapeError);
}

TEST_CASE("forward matches an independent plain-loop implementation") {
  AggConfig cfg = tiny_config();
  RngState rng(11);
  AggModel model(cfg, rng);
  for (int count : {1, 3, 8}) {
    auto toks = random_tokens(count, cfg.d_token, rng);
    TokenBatch b = pack(toks, cfg.kmax);
    const double got = model.forward(b).item();
    const double want = ref_forward(model.params(), cfg, rows_of_tokens(toks));
    CHECK(std::abs(got - want) < 1e-9);
    CHECK(model.predict(b) == doctest::Approx(1.0 / (1.0 + std::exp(-want))).epsilon(1e-9));
  }
}

TEST_CASE("deterministic ordering agrees with the padded path") {
  AggConfig plain = tiny_config();
  AggConfig det = tiny_config();
  det.deterministic_order = true;
  RngState rng(19);
  AggModel a(plain, rng);
  RngState rng2(19);
  AggModel b(det, rng2);
  for (int rep = 0; rep < 10; ++rep) {
    auto toks = random_tokens(5, plain.d_token, rng);
    TokenBatch batch = pack(toks, plain.kmax);
    CHECK(std::abs(a.forward(batch).item() - b.forward(batch).item()) < 1e-9);
  }
}

TEST_CASE("identical tokens collapse to the single-copy output") {
  AggConfig cfg = tiny_config();
  RngState rng(23);
  AggModel model(cfg, rng);
  Tensor tok = Tensor::uniform({cfg.d_token}, -1, 1, rng);
  const double solo = model.forward(pack({tok}, cfg.kmax)).item();
  for (int copies : {2, 5, 8}) {
    std::vector<Tensor> reps(static_cast<std::size_t>(copies), tok);
    const double rep = model.forward(pack(reps, cfg.kmax)).item();
    CHECK(std::abs(rep - solo) < 1e-10);
  }
}

TEST_CASE("zeroed head weights pin the logit to the bias") {
  AggConfig cfg = tiny_config();
  RngState rng(29);
  AggModel model(cfg, rng);
  Tensor hw = model.params().get("head.w");
  std::fill(hw.data(), hw.data() + hw.numel(), 0.0);
  model.params().get("head.b").data()[0] = 0.7;
  for (int rep = 0; rep < 5; ++rep) {
    TokenBatch b = pack(random_tokens(1 + rep, cfg.d_token, rng), cfg.kmax);
    CHECK(model.forward(b).item() == 0.7);
    CHECK(model.predict(b) == doctest::Approx(1.0 / (1.0 + std::exp(-0.7))).epsilon(1e-12));
  }
}

TEST_CASE("padding rows never influence the logit") {
  AggConfig cfg = tiny_config();
  RngState rng(31);
  AggModel model(cfg, rng);
  auto toks = random_tokens(3, cfg.d_token, rng);
  const double padded = model.forward(pack(toks, cfg.kmax)).item();   // 5 masked rows
  const double snug = model.forward(pack(toks, 3)).item();            // no padding
  CHECK(padded == snug);  // masked keys carry exactly zero attention weight

  AggConfig det = cfg;
  det.deterministic_order = true;
  RngState rng2(31);
  AggModel dmodel(det, rng2);
  auto toks2 = random_tokens(3, cfg.d_token, rng2);
  CHECK(dmodel.forward(pack(toks2, det.kmax)).item() ==
        dmodel.forward(pack(toks2, 3)).item());
}

TEST_CASE("logit is invariant to token order") {
  AggConfig plain = tiny_config();
  AggConfig det = tiny_config();
  det.deterministic_order = true;
  RngState rng(37);
  AggModel pm(plain, rng);
  RngState rng2(37);
  AggModel dm(det, rng2);

  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const int count = 2 + static_cast<int>(rng.uniform_int(7));
    auto toks = random_tokens(count, plain.d_token, rng);
    auto shuffled = toks;
    for (int i = count - 1; i > 0; --i)
      std::swap(shuffled[static_cast<std::size_t>(i)],
                shuffled[static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)))]);
    const double z1 = pm.forward(pack(toks, plain.kmax)).item();
    const double z2 = pm.forward(pack(shuffled, plain.kmax)).item();
    worst = std::max(worst, std::abs(z1 - z2));
    // Canonical ordering makes the same comparison bit-exact.
    const double d1 = dm.forward(pack(toks, det.kmax)).item();
    const double d2 = dm.forward(pack(shuffled, det.kmax)).item();
    CHECK(d1 == d2);
    CHECK(std::abs(z1 - d1) < 1e-9);
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("budget truncation keeps the leading tokens") {
  AggConfig cfg = tiny_config();
  RngState rng(41);
  auto toks = random_tokens(6, cfg.d_token, rng);
  TokenBatch b = pack(toks, cfg.kmax);

  TokenBatch same = truncate_mask(b, 6);
  CHECK(same.count == 6);
  for (int i = 0; i < same.tokens.numel(); ++i) CHECK(same.tokens[i] == b.tokens[i]);

  TokenBatch one = truncate_mask(b, 1);
  CHECK(one.count == 1);
  for (int j = 0; j < cfg.d_token; ++j) CHECK(one.tokens[j] == b.tokens[j]);
  for (int i = cfg.d_token; i < one.tokens.numel(); ++i) CHECK(one.tokens[i] == 0.0);

  // Nested truncation composes: cutting to 4 then 2 equals cutting to 2.
  TokenBatch nested = truncate_mask(truncate_mask(b, 4), 2);
  TokenBatch direct = truncate_mask(b, 2);
  CHECK(nested.count == direct.count);
  CHECK(nested.mask == direct.mask);
  for (int i = 0; i < nested.tokens.numel(); ++i)
    CHECK(nested.tokens[i] == direct.tokens[i]);

  CHECK_THROWS_AS(truncate_mask(b, 0), ShapeError);
}

TEST_CASE("parameter and token gradients pass finite-difference checks") {
  AggConfig cfg = tiny_config();
  cfg.depth = 1;
  RngState rng(43);
  AggModel model(cfg, rng);
  auto toks = random_tokens(3, cfg.d_token, rng);
  TokenBatch batch = pack(toks, 4);
  batch.tokens.set_requires_grad(true);

  std::vector<Tensor> targets;
  for (const auto& [name, t] : model.params().items()) targets.push_back(t);
  targets.push_back(batch.tokens);

  GradCheckOptions opts;
  opts.max_coords_per_tensor = 4;
  GradCheckReport rep = check_gradients(
      [&](Tape* tape) { return model.forward(batch, tape); }, targets, opts);
  CAPTURE(rep.worst);
  CAPTURE(rep.max_rel_err);
  CHECK(rep.ok());

  // Same check through the canonical-order gather.
  AggConfig det = cfg;
  det.deterministic_order = true;
  RngState rng2(43);
  AggModel dmodel(det, rng2);
  std::vector<Tensor> dtargets;
  for (const auto& [name, t] : dmodel.params().items()) dtargets.push_back(t);
  dtargets.push_back(batch.tokens);
  GradCheckReport drep = check_gradients(
      [&](Tape* tape) { return dmodel.forward(batch, tape); }, dtargets, opts);
  CAPTURE(drep.worst);
  CHECK(drep.ok());
}

TEST_CASE("an all-masked batch is rejected") {
  AggConfig cfg = tiny_config();
  RngState rng(47);
  AggModel model(cfg, rng);
  TokenBatch empty = pack({}, cfg.kmax);
  CHECK_THROWS_AS(model.forward(empty), NumericalError);
}

TEST_CASE("sensitivity probe returns a finite positive bound") {
  AggConfig cfg = tiny_config();
  RngState rng(53);
  AggModel model(cfg, rng);
  TokenBatch b = pack(random_tokens(4, cfg.d_token, rng), cfg.kmax);
  const double lhat = lipschitz_probe(model, b, 32, 1e-3, rng);
  CHECK(std::isfinite(lhat));
  CHECK(lhat > 0.0);
}

TEST_CASE("row gather accumulates gradients for repeated sources") {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  x.set_requires_grad(true);
  Tape tape;
  Tensor g = ops::gather_rows(x, {0, 0, 1}, &tape);
  CHECK(g.dim(0) == 3);
  CHECK(g[0] == 1.0);
  CHECK(g[3] == 1.0);  // second copy of row 0
  CHECK(g[6] == 4.0);  // row 1 lands in slot 2
  Tensor loss = ops::sum(g, &tape);
  tape.backward(loss);
  for (int j = 0; j < 3; ++j) {
    CHECK(x.grad()[j] == 2.0);      // row 0 gathered twice
    CHECK(x.grad()[3 + j] == 1.0);  // row 1 once
  }
  CHECK_THROWS_AS(ops::gather_rows(x, {2}), ShapeError);
}

TEST_CASE("aggregator config validation") {
  AggConfig cfg = tiny_config();
  cfg.heads = 3;  // does not divide width 8
  CHECK_THROWS_AS(cfg.validate(), ShapeError);
  cfg = tiny_config();
  cfg.depth = 0;
  CHECK_THROWS_AS(cfg.validate(), ShapeError);
  cfg = tiny_config();
  CHECK(cfg.ff() == cfg.width);
  cfg.ff_hidden = 16;
  CHECK(cfg.ff() == 16);
}
