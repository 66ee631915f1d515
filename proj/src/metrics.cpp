#include "mmf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mmf/error.hpp"

namespace mmf {

namespace {

struct Step {
  double threshold;
  std::size_t tp;  // cumulative counts with score >= threshold
  std::size_t fp;
};

// Cumulative confusion counts at +inf and at each distinct score, descending.
std::vector<Step> threshold_steps(const ScoredSet& s) {
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
  std::vector<Step> steps{{std::numeric_limits<double>::infinity(), 0, 0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double score = s.scores[order[i]];
    for (; i < order.size() && s.scores[order[i]] == score; ++i) (s.labels[order[i]] ? tp : fp) += 1;
    steps.push_back({score, tp, fp});
  }
  return steps;
}

}  // namespace

std::size_t ScoredSet::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

std::size_t ScoredSet::negatives() const { return labels.size() - positives(); }

void ScoredSet::validate(bool need_both_classes) const {
  if (labels.size() != scores.size() || (!ids.empty() && ids.size() != scores.size())) {
    throw ShapeMismatch("scored set has unequal list lengths");
  }
  for (std::size_t i = 0; i < size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error("label must be 0 or 1");
    if (!std::isfinite(scores[i])) throw NumericError("non-finite score");
  }
  if (need_both_classes && (positives() == 0 || negatives() == 0)) {
    throw UndefinedMetric("metric undefined: scored set needs at least one positive and one negative");
  }
}

ScoredSet make_scored(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeMismatch(std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) + " labels");
  }
  ScoredSet s;
  s.scores.assign(scores.begin(), scores.end());
  s.labels.assign(labels.begin(), labels.end());
  return s;
}

double auc(const ScoredSet& s) {
  s.validate();
  // Twice the U statistic, accumulated over tied score groups.
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
  std::uint64_t twice_u = 0, neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::uint64_t pos = 0, neg = 0;
    const double score = s.scores[order[i]];
    for (; i < order.size() && s.scores[order[i]] == score; ++i) (s.labels[order[i]] ? pos : neg) += 1;
    twice_u += pos * (2 * neg_below + neg);
    neg_below += neg;
  }
  const double pairs = static_cast<double>(s.positives()) * static_cast<double>(s.negatives());
  return (static_cast<double>(twice_u) / 2.0) / pairs;
}

std::vector<RocPoint> roc_curve(const ScoredSet& s) {
  s.validate();
  const auto p = static_cast<double>(s.positives()), n = static_cast<double>(s.negatives());
  std::vector<RocPoint> out;
  for (const Step& st : threshold_steps(s)) {
    out.push_back({static_cast<double>(st.fp) / n, static_cast<double>(st.tp) / p, st.threshold});
  }
  return out;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) * 0.5;
  }
  return area;
}

double operating_point(const ScoredSet& validation) {
  validation.validate();
  const auto p = static_cast<std::int64_t>(validation.positives());
  const auto n = static_cast<std::int64_t>(validation.negatives());
  // J * P * N = tp * N - fp * P, compared exactly.
  double best_threshold = std::numeric_limits<double>::infinity();
  std::int64_t best = 0;
  for (const Step& st : threshold_steps(validation)) {
    const std::int64_t j = static_cast<std::int64_t>(st.tp) * n - static_cast<std::int64_t>(st.fp) * p;
    if (j > best) {
      best = j;
      best_threshold = st.threshold;
    }
  }
  return best_threshold;
}

SensSpec sens_spec(const ScoredSet& test, double threshold) {
  test.validate();
  std::size_t tp = 0, tn = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const bool predicted = test.scores[i] >= threshold;
    if (test.labels[i] == 1 && predicted) ++tp;
    if (test.labels[i] == 0 && !predicted) ++tn;
  }
  return {static_cast<double>(tp) / static_cast<double>(test.positives()),
          static_cast<double>(tn) / static_cast<double>(test.negatives())};
}

}  // namespace mmf
