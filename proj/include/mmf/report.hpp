#pragma once

#include <string>
#include <vector>

#include "mmf/metrics.hpp"

namespace mmf {

struct ReportRow {
  std::string method;  // run name shown in the method column
  std::string backbone;
  double auc = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double improvement = 0.0;  // auc - baseline auc; filled by build_report
  bool baseline = false;
};

struct MetricsReport {
  std::vector<ReportRow> rows;
  std::string baseline;

  // Header exactly "method,backbone,auc,sensitivity,specificity,improvement".
  // Numbers use three decimals; improvement is signed ("+0.052") and the
  // baseline row reads "Baseline".
  std::string csv() const;
  std::string text() const;
};

// Throws ConfigError when no row is named `baseline_name`.
MetricsReport build_report(std::vector<ReportRow> rows, const std::string& baseline_name);

std::string format_improvement(const ReportRow& row);

struct RocSeries {
  std::string name;
  std::vector<RocPoint> curve;
};

// Standalone SVG: one polyline per series plus the chance diagonal.
std::string roc_svg(const std::vector<RocSeries>& series);

}  // namespace mmf
