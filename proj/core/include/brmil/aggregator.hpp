#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brmil/encoders.hpp"
#include "brmil/params.hpp"
#include "brmil/rng.hpp"
#include "brmil/tensor.hpp"

namespace brmil {

struct AggConfig {
  int kmax = 64;
  int d_token = 387;  // site embedding width + 3 scalar features
  int width = 128;    // model width inside the attention stack
  int heads = 4;
  int depth = 2;      // self-attention blocks before pooling
  int ff_hidden = 0;  // feed-forward hidden width; 0 = match width
  /// When set, unmasked tokens are compacted into a canonical content order
  /// before the forward pass, making permutation invariance bit-exact.
  bool deterministic_order = true;

  int ff() const { return ff_hidden > 0 ? ff_hidden : width; }
  int head_dim() const { return width / heads; }
  void validate() const;
};

/// A bag rendered as a fixed-length padded token matrix plus validity mask.
/// Padding rows are exactly zero.
struct TokenBatch {
  Tensor tokens;                    // [kmax, d_token]
  std::vector<std::uint8_t> mask;   // 1 = real token
  int count = 0;
};

/// Site token: embedding, site logit, alignment score, relative position,
/// concatenated in that order.
Tensor tokenize(const ExpensiveOut& exp, double s_esa, double p,
                Tape* tape = nullptr);

/// Pads a token list to kmax rows (zeros past the list) with matching mask.
TokenBatch pack(const std::vector<Tensor>& tokens, int kmax,
                Tape* tape = nullptr);

/// Keeps the first k unmasked tokens in row order; masks and zeroes the rest.
TokenBatch truncate_mask(const TokenBatch& batch, int k, Tape* tape = nullptr);

/// Masked multihead set attention stack with a learned-seed pooling readout
/// and a scalar pair-logit head. Output depends only on the unmasked token
/// multiset, never on row order or padding.
class AggModel {
 public:
  AggModel(const AggConfig& cfg, RngState& rng);

  const AggConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  /// Pair logit as a [1] tensor; throws NumericalError on an all-masked batch.
  Tensor forward(const TokenBatch& batch, Tape* tape = nullptr) const;
  /// sigmoid(logit) as a plain double, no tape.
  double predict(const TokenBatch& batch) const;

 private:
  Tensor multihead(const std::string& prefix, const Tensor& q_in,
                   const Tensor& kv, const std::vector<std::uint8_t>& key_mask,
                   Tape* tape) const;
  Tensor block(const std::string& prefix, const Tensor& q_in, const Tensor& kv,
               const std::vector<std::uint8_t>& key_mask, Tape* tape) const;

  AggConfig cfg_;
  ParamSet params_;
};

/// Indices of the unmasked rows sorted by lexicographic row content
/// (ties keep the lower row). The canonical order used by
/// AggConfig::deterministic_order.
std::vector<int> canonical_order(const TokenBatch& batch);

/// Empirical output-sensitivity probe: max over random single-token
/// perturbations of |Δlogit| / ‖Δtoken‖. Finite for finite parameters.
double lipschitz_probe(const AggModel& model, const TokenBatch& batch,
                       int trials, double eps, RngState& rng);

}  // namespace brmil
