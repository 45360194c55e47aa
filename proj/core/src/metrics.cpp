#include "brmil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "brmil/tensor.hpp"

namespace brmil {

namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

struct Counts {
  double tp = 0, fp = 0, tn = 0, fn = 0;
};

Counts count_at(const std::vector<double>& scores, const std::vector<int>& labels,
                double threshold) {
  Counts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool hit = scores[i] >= threshold;
    if (labels[i] == 1) {
      (hit ? c.tp : c.fn) += 1;
    } else {
      (hit ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

double f1_of(const Counts& c) {
  const double denom = 2 * c.tp + c.fp + c.fn;
  return denom > 0.0 ? 2 * c.tp / denom : 0.0;
}

}  // namespace

MetricSet compute_metrics(const std::vector<double>& scores,
                          const std::vector<int>& labels) {
  if (scores.empty() || scores.size() != labels.size())
    throw ShapeError("metrics: need matching non-empty score/label lists, got " +
                     std::to_string(scores.size()) + "/" + std::to_string(labels.size()));
  for (int y : labels)
    if (y != 0 && y != 1) throw ShapeError("metrics: labels must be 0/1");
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericalError("metrics: non-finite score");

  MetricSet m;
  const Counts at_half = count_at(scores, labels, 0.5);
  m.f1_at_half = f1_of(at_half);
  m.accuracy = ratio(at_half.tp + at_half.tn, static_cast<double>(scores.size()));
  m.precision = ratio(at_half.tp, at_half.tp + at_half.fp);
  m.recall = ratio(at_half.tp, at_half.tp + at_half.fn);
  m.specificity = ratio(at_half.tn, at_half.tn + at_half.fp);
  m.npv = ratio(at_half.tn, at_half.tn + at_half.fn);

  const double total_pos = at_half.tp + at_half.fn;
  const double total_neg = at_half.fp + at_half.tn;
  m.pr_auc_defined = total_pos > 0 && total_neg > 0;

  // Walk cutoffs from the highest score down; tied scores move together.
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double tp = 0, fp = 0, area = 0, prev_recall = 0;
  m.f1_best = 0.0;
  m.best_threshold = 0.5;
  for (std::size_t k = 0; k < order.size();) {
    const double cut = scores[order[k]];
    while (k < order.size() && scores[order[k]] == cut) {
      (labels[order[k]] == 1 ? tp : fp) += 1;
      ++k;
    }
    if (total_pos > 0) {
      const double recall = tp / total_pos;
      const double precision = tp / (tp + fp);
      area += (recall - prev_recall) * precision;
      prev_recall = recall;
    }
    Counts c{tp, fp, total_neg - fp, total_pos - tp};
    const double f1 = f1_of(c);
    if (f1 > m.f1_best) {
      m.f1_best = f1;
      m.best_threshold = cut;
    }
  }
  if (m.pr_auc_defined) m.pr_auc = area;
  return m;
}

std::string metrics_csv_header() {
  return "pr_auc,f1_at_half,accuracy,precision,recall,specificity,npv,f1_best";
}

std::string metrics_csv_row(const MetricSet& m) {
  std::ostringstream out;
  out.precision(10);
  if (m.pr_auc_defined)
    out << m.pr_auc;
  out << "," << m.f1_at_half << "," << m.accuracy << "," << m.precision << ","
      << m.recall << "," << m.specificity << "," << m.npv << "," << m.f1_best;
  return out.str();
}

}  // namespace brmil
