#pragma once

#include <string>
#include <vector>

namespace brmil {

/// Classification summary at the fixed 0.5 threshold plus ranking metrics.
/// Ratios with an empty denominator are reported as 0.
struct MetricSet {
  double pr_auc = 0.0;
  bool pr_auc_defined = false;  // needs both classes present
  double f1_at_half = 0.0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double specificity = 0.0;
  double npv = 0.0;
  double f1_best = 0.0;
  double best_threshold = 0.5;
};

/// scores are probabilities in [0,1], labels are {0,1}.
/// The precision-recall area uses the step-wise integral over distinct score
/// cutoffs; f1_best scans the same cutoffs for the best F1.
MetricSet compute_metrics(const std::vector<double>& scores,
                          const std::vector<int>& labels);

/// CSV cell order: pr_auc,f1_at_half,accuracy,precision,recall,specificity,
/// npv,f1_best (pr_auc empty when undefined).
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricSet& m);

}  // namespace brmil
