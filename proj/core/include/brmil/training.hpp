#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brmil/checkpoint.hpp"
#include "brmil/losses.hpp"
#include "brmil/metrics.hpp"
#include "brmil/model.hpp"

namespace brmil {

/// Gradient descent with classical momentum over a fixed parameter list.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double lr, double momentum = 0.9);

  void step();
  void zero_grads();
  double lr() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
};

struct StageConfig {
  int stage = 1;
  int epochs = 10;
  int batch_size = 16;
  double lr = 0.05;
  double momentum = 0.9;
  /// Stage 3: epochs that update only the aggregator before the expensive
  /// encoder joins the optimization.
  int warmup_epochs = 2;
  /// Stage 3: keep the expensive encoder frozen for the whole stage.
  bool freeze_encoder = false;
  /// Stage 3 pair loss: focal mix (default) or the plain smoothed loss.
  bool use_focal_pair_loss = true;
  double val_fraction = 0.1;
  std::uint64_t seed = 2020;
  std::string checkpoint_in;
  std::string checkpoint_out;

  void validate() const;
};

/// One evaluated split at one epoch. Epoch 0 is the untrained baseline.
struct EpochRow {
  int stage = 0;
  int epoch = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  double kd = 0.0;  // logit-matching component; stage 2 only
  MetricSet metrics;
};

std::string train_log_csv_header();
std::string train_log_csv_row(const EpochRow& row);

struct StageResult {
  std::vector<EpochRow> log;
  Checkpoint best;  // full model snapshot at the best validation ranking
  double best_val_pr_auc = 0.0;
  int best_epoch = 0;
  /// Stage 3 audit: largest expensive-encoder call count observed for a
  /// single bag forward, and whether any forward exceeded |S| calls.
  int max_expensive_calls = 0;
  int budget_violations = 0;
  /// Stage 3: largest expensive-encoder gradient norm seen after warmup.
  double max_teacher_grad_norm = 0.0;

  std::string csv() const;
};

/// Deterministic 1-val_fraction / val_fraction split of bag indices.
void split_bags(int n, double val_fraction, std::uint64_t seed,
                std::vector<int>* train, std::vector<int>* val);

/// Trains the expensive encoder on window-level labels.
StageResult run_stage1(PairModel& model, const std::vector<Bag>& data,
                       const StageConfig& cfg, const LossConfig& lcfg);

/// Trains the cheap encoder and the feature projection against the frozen
/// expensive encoder with the composite transfer objective.
StageResult run_stage2(PairModel& model, const std::vector<Bag>& data,
                       const StageConfig& cfg, const LossConfig& lcfg,
                       const DistillConfig& dcfg);

/// Trains the aggregator on pair labels through the budgeted forward;
/// after warmup the expensive encoder is fine-tuned jointly unless frozen.
StageResult run_stage3(PairModel& model, const std::vector<Bag>& data,
                       const StageConfig& cfg, const LossConfig& lcfg);

}  // namespace brmil
