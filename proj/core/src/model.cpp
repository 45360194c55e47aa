#include "brmil/model.hpp"

#include <algorithm>
#include <cmath>

namespace brmil {

void PairModelConfig::validate() const {
  selector.validate();
  aggregator.validate();
  if (aggregator.d_token != encoder.d_teacher + 3)
    throw ShapeError("pair model: aggregator d_token " +
                     std::to_string(aggregator.d_token) + " must equal d_teacher+3 = " +
                     std::to_string(encoder.d_teacher + 3));
  if (aggregator.kmax != selector.kmax)
    throw ShapeError("pair model: aggregator kmax " + std::to_string(aggregator.kmax) +
                     " must match selector kmax " + std::to_string(selector.kmax));
}

PairModel::PairModel(const PairModelConfig& cfg, RngState& rng)
    : cfg_(cfg),
      teacher_(cfg.encoder, rng),
      student_(cfg.encoder, rng),
      proj_(cfg.encoder, rng),
      agg_(cfg.aggregator, rng) {
  cfg_.validate();
}

PairModel::CheapPass PairModel::cheap_scan(const Bag& bag) const {
  CheapPass out;
  const int n = bag.n();
  out.h_tilde = Tensor::zeros({std::max(n, 1), cfg_.encoder.d_student});
  for (int i = 0; i < n; ++i) {
    const CtsCandidate& c = bag.candidates[static_cast<std::size_t>(i)];
    CheapSignals sig = student_.forward(c.x, SiteAttr{c.p, c.s_esa});
    out.z_tilde.push_back(sig.z_tilde.item());
    std::copy(sig.h_tilde.data(), sig.h_tilde.data() + cfg_.encoder.d_student,
              out.h_tilde.data() + i * cfg_.encoder.d_student);
    out.p.push_back(c.p);
  }
  return out;
}

std::vector<Tensor> PairModel::bag_tokens(const Bag& bag, const SelectionResult& sel,
                                          Tape* tape, int* expensive_calls) const {
  std::vector<Tensor> tokens;
  tokens.reserve(sel.priority.size());
  int calls = 0;
  for (int idx : sel.priority) {
    const CtsCandidate& c = bag.candidates[static_cast<std::size_t>(idx)];
    ExpensiveOut out = teacher_.forward(c.x, SiteAttr{c.p, c.s_esa}, tape);
    ++calls;
    tokens.push_back(tokenize(out, c.s_esa, c.p, tape));
  }
  if (expensive_calls) *expensive_calls = calls;
  return tokens;
}

BagForward PairModel::forward_bag(const Bag& bag, Tape* tape) const {
  BagForward fwd;
  fwd.n = bag.n();
  if (fwd.n == 0) {
    fwd.empty = true;
    return fwd;
  }
  CheapPass cheap = cheap_scan(bag);
  fwd.selection = select(cfg_.selector, cheap.z_tilde, cheap.h_tilde, cheap.p);
  fwd.selected = static_cast<int>(fwd.selection.S.size());
  std::vector<Tensor> tokens = bag_tokens(bag, fwd.selection, tape, &fwd.expensive_calls);
  fwd.batch = pack(tokens, cfg_.aggregator.kmax, tape);
  fwd.logit = agg_.forward(fwd.batch, tape);
  fwd.y_hat = 1.0 / (1.0 + std::exp(-fwd.logit.item()));
  return fwd;
}

BagForward PairModel::forward_cached(const std::vector<Tensor>& tokens, Tape* tape) const {
  BagForward fwd;
  fwd.n = static_cast<int>(tokens.size());
  if (tokens.empty()) {
    fwd.empty = true;
    return fwd;
  }
  fwd.selected = static_cast<int>(tokens.size());
  fwd.batch = pack(tokens, cfg_.aggregator.kmax, tape);
  fwd.logit = agg_.forward(fwd.batch, tape);
  fwd.y_hat = 1.0 / (1.0 + std::exp(-fwd.logit.item()));
  return fwd;
}

Checkpoint PairModel::to_checkpoint(const std::string& meta) const {
  Checkpoint ckp;
  ckp.meta = meta;
  collect_params(ckp, teacher_.params(), kTeacherPrefix);
  collect_params(ckp, student_.params(), kStudentPrefix);
  collect_params(ckp, proj_.params(), kProjPrefix);
  collect_params(ckp, agg_.params(), kAggPrefix);
  return ckp;
}

void PairModel::from_checkpoint(const Checkpoint& ckp) {
  restore_params(teacher_.params(), ckp, kTeacherPrefix);
  restore_params(student_.params(), ckp, kStudentPrefix);
  restore_params(proj_.params(), ckp, kProjPrefix);
  restore_params(agg_.params(), ckp, kAggPrefix);
  teacher_.rebind();
  student_.rebind();
  proj_.rebind();
}

}  // namespace brmil
