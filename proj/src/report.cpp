#include "mmf/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mmf/error.hpp"

namespace mmf {

namespace {

std::string fixed3(double v) {
  char buf[32];
  // Avoid printing "-0.000".
  std::snprintf(buf, sizeof(buf), "%.3f", std::abs(v) < 5e-4 ? 0.0 : v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

}  // namespace

std::string format_improvement(const ReportRow& row) {
  if (row.baseline) return "Baseline";
  const double v = std::abs(row.improvement) < 5e-4 ? 0.0 : row.improvement;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%+.3f", v);
  return buf;
}

MetricsReport build_report(std::vector<ReportRow> rows, const std::string& baseline_name) {
  auto it = std::find_if(rows.begin(), rows.end(), [&](const ReportRow& r) { return r.method == baseline_name; });
  if (it == rows.end()) throw ConfigError("baseline '" + baseline_name + "' is not among the report rows");
  const double base = it->auc;
  for (auto& r : rows) {
    r.baseline = r.method == baseline_name;
    r.improvement = r.baseline ? 0.0 : r.auc - base;
  }
  return {std::move(rows), baseline_name};
}

std::string MetricsReport::csv() const {
  std::string out = "method,backbone,auc,sensitivity,specificity,improvement\n";
  for (const auto& r : rows) {
    out += csv_field(r.method) + "," + csv_field(r.backbone) + "," + fixed3(r.auc) + "," + fixed3(r.sensitivity) +
           "," + fixed3(r.specificity) + "," + format_improvement(r) + "\n";
  }
  return out;
}

std::string MetricsReport::text() const {
  const std::vector<std::string> header{"Method", "Backbone", "AUC", "Sensitivity", "Specificity", "Improvement"};
  std::vector<std::vector<std::string>> cells{header};
  for (const auto& r : rows) {
    cells.push_back({r.method, r.backbone, fixed3(r.auc), fixed3(r.sensitivity), fixed3(r.specificity),
                     format_improvement(r)});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream os;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      const std::string& v = cells[i][c];
      const std::string pad(width[c] - v.size(), ' ');
      // Text columns left-aligned, numbers right-aligned.
      os << (c < 2 ? v + pad : pad + v) << (c + 1 < cells[i].size() ? "  " : "\n");
    }
    if (i == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      os << std::string(total + 2 * (width.size() - 1), '-') << "\n";
    }
  }
  return os.str();
}

std::string roc_svg(const std::vector<RocSeries>& series) {
  constexpr double size = 400.0, margin = 50.0;
  const auto px = [&](double fpr) { return margin + fpr * size; };
  const auto py = [&](double tpr) { return margin + (1.0 - tpr) * size; };
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  const double total_w = size + 2 * margin + 180.0, total_h = size + 2 * margin;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << total_w << "\" height=\"" << total_h
     << "\" viewBox=\"0 0 " << total_w << " " << total_h << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << total_w << "\" height=\"" << total_h << "\" fill=\"white\"/>\n";
  os << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << size << "\" height=\"" << size
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<line class=\"diagonal\" x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
     << "\" stroke=\"#999999\" stroke-dasharray=\"4 4\"/>\n";
  os << "<text x=\"" << margin + size / 2 << "\" y=\"" << total_h - 12
     << "\" text-anchor=\"middle\" font-size=\"12\">False positive rate</text>\n";
  os << "<text x=\"14\" y=\"" << margin + size / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
     << margin + size / 2 << ")\">True positive rate</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    os << "<polyline class=\"roc\" data-method=\"" << xml_escape(series[i].name) << "\" fill=\"none\" stroke=\""
       << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < series[i].curve.size(); ++k) {
      os << (k ? " " : "") << px(series[i].curve[k].fpr) << "," << py(series[i].curve[k].tpr);
    }
    os << "\"/>\n";
    const double ly = margin + 16.0 + 18.0 * static_cast<double>(i);
    os << "<line x1=\"" << margin + size + 15 << "\" y1=\"" << ly - 4 << "\" x2=\"" << margin + size + 35 << "\" y2=\""
       << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << margin + size + 40 << "\" y=\"" << ly << "\" font-size=\"12\">" << xml_escape(series[i].name)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace mmf
