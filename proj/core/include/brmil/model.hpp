#pragma once

#include <optional>
#include <string>
#include <vector>

#include "brmil/aggregator.hpp"
#include "brmil/checkpoint.hpp"
#include "brmil/encoders.hpp"
#include "brmil/seqscan.hpp"
#include "brmil/selector.hpp"

namespace brmil {

/// Everything needed to score one miRNA-mRNA pair under a site budget:
/// cheap encoder over the whole pool, budgeted selection, expensive encoder
/// on the survivors, and the set aggregator.
struct PairModelConfig {
  EncoderConfig encoder;
  SelectorConfig selector;
  AggConfig aggregator;

  void validate() const;
};

/// One budgeted forward over a bag, with the bookkeeping needed by budget
/// audits and the stage timers.
struct BagForward {
  bool empty = false;       // no candidates: prediction pinned to 0.5
  double y_hat = 0.5;
  Tensor logit;             // [1]; unset when empty
  int n = 0;                // pool size
  int selected = 0;         // |S|
  int expensive_calls = 0;  // expensive-encoder invocations this forward
  SelectionResult selection;
  TokenBatch batch;         // packed in selection priority order
};

class PairModel {
 public:
  PairModel(const PairModelConfig& cfg, RngState& rng);

  const PairModelConfig& config() const { return cfg_; }
  TeacherEncoder& teacher() { return teacher_; }
  const TeacherEncoder& teacher() const { return teacher_; }
  StudentEncoder& student() { return student_; }
  const StudentEncoder& student() const { return student_; }
  DistillProjection& projection() { return proj_; }
  AggModel& aggregator() { return agg_; }
  const AggModel& aggregator() const { return agg_; }

  /// Cheap pass over every candidate (no gradients): scores, embeddings and
  /// positions in pool order.
  struct CheapPass {
    std::vector<double> z_tilde;
    Tensor h_tilde;  // [n, d_student]
    std::vector<double> p;
  };
  CheapPass cheap_scan(const Bag& bag) const;

  /// Full budgeted forward: cheap scan, selection, expensive encoding of the
  /// selected sites only, tokenization in priority order, aggregation.
  /// When tape is given, gradients flow through the expensive encoder and
  /// the aggregator (the cheap pass only steers selection).
  BagForward forward_bag(const Bag& bag, Tape* tape = nullptr) const;

  /// forward_bag with externally cached tokens (already in priority order),
  /// for epochs where the expensive encoder is frozen.
  BagForward forward_cached(const std::vector<Tensor>& tokens, Tape* tape = nullptr) const;

  /// Tokens of the selected sites in priority order, without aggregation.
  std::vector<Tensor> bag_tokens(const Bag& bag, const SelectionResult& sel,
                                 Tape* tape = nullptr, int* expensive_calls = nullptr) const;

  Checkpoint to_checkpoint(const std::string& meta) const;
  void from_checkpoint(const Checkpoint& ckp);

 private:
  PairModelConfig cfg_;
  TeacherEncoder teacher_;
  StudentEncoder student_;
  DistillProjection proj_;
  AggModel agg_;
};

/// Namespaced parameter prefixes shared by every checkpoint writer/reader.
inline constexpr const char* kTeacherPrefix = "teacher.";
inline constexpr const char* kStudentPrefix = "student.";
inline constexpr const char* kProjPrefix = "proj.";
inline constexpr const char* kAggPrefix = "agg.";

}  // namespace brmil
