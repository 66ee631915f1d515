#pragma once

#include <span>
#include <string>
#include <vector>

namespace mmf {

// Parallel lists of scored acquisitions.
struct ScoredSet {
  std::vector<std::string> ids;
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t size() const noexcept { return scores.size(); }
  std::size_t positives() const;
  std::size_t negatives() const;
  // Equal lengths, labels in {0,1}, finite scores; with `need_both_classes`
  // a single-class set throws UndefinedMetric.
  void validate(bool need_both_classes = true) const;
};

ScoredSet make_scored(std::span<const double> scores, std::span<const int> labels);

// Mann-Whitney AUC: over all (positive, negative) pairs, 1 when the positive
// scores higher, 0.5 on ties. The pair credit is counted exactly in halves and
// divided once, so the result is bit-identical to brute-force enumeration.
double auc(const ScoredSet& s);

struct RocPoint {
  double fpr;
  double tpr;
  double threshold;
};

// One point per threshold: +inf first, then the distinct scores descending.
// Runs from (0,0) to (1,1).
std::vector<RocPoint> roc_curve(const ScoredSet& s);
double trapezoid_area(std::span<const RocPoint> curve);

// Threshold maximising Youden's J = TPR - FPR over the ROC thresholds; ties
// go to the higher threshold. All-equal scores give +inf.
double operating_point(const ScoredSet& validation);

struct SensSpec {
  double sensitivity;
  double specificity;
};

// Predicted positive iff score >= threshold.
SensSpec sens_spec(const ScoredSet& test, double threshold);

}  // namespace mmf
