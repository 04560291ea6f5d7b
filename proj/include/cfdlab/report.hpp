#ifndef CFDLAB_REPORT_HPP_
#define CFDLAB_REPORT_HPP_

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfdlab/eval.hpp"

namespace cfdlab {

// Shortest-roundtrip decimal formatting so repeated runs emit byte-identical
// CSV files.
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  for (int prec = 1; prec <= std::numeric_limits<double>::max_digits10; ++prec) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    if (std::stod(os.str()) == v) return os.str();
  }
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

struct MetricsReport {
  std::vector<std::string> reward_names;
  std::vector<double> policy_mean;
  std::vector<double> policy_std;
  std::vector<double> demo_mean;
  std::vector<double> demo_std;
  std::vector<double> alignment_per_reward;
  double delta_demo_value = 0.0;
  std::vector<double> evaluator_policy;  // order: evaluator_names()
  std::vector<double> evaluator_demo;
  LikelihoodLengthCurve curve;
};

inline void write_report_csv(const MetricsReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << "metric,reward,value\n";
  for (std::size_t i = 0; i < r.reward_names.size(); ++i) {
    const std::string& name = r.reward_names[i];
    out << "policy_mean," << name << "," << fmt_double(r.policy_mean[i]) << "\n";
    out << "policy_std," << name << "," << fmt_double(r.policy_std[i]) << "\n";
    out << "demo_mean," << name << "," << fmt_double(r.demo_mean[i]) << "\n";
    out << "demo_std," << name << "," << fmt_double(r.demo_std[i]) << "\n";
    out << "alignment," << name << ","
        << fmt_double(r.alignment_per_reward[i]) << "\n";
  }
  out << "delta_demo,," << fmt_double(r.delta_demo_value) << "\n";
  for (std::size_t i = 0; i < evaluator_names().size(); ++i) {
    out << "evaluator_policy," << evaluator_names()[i] << ","
        << fmt_double(r.evaluator_policy[i]) << "\n";
    out << "evaluator_demo," << evaluator_names()[i] << ","
        << fmt_double(r.evaluator_demo[i]) << "\n";
  }
  for (std::size_t i = 0; i < r.curve.lengths.size(); ++i)
    out << "curve,L" << r.curve.lengths[i] << ","
        << fmt_double(r.curve.values[i]) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_curve_csv(const LikelihoodLengthCurve& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write curve: " + path);
  out << "length,mean_loglik_per_token\n";
  for (std::size_t i = 0; i < c.lengths.size(); ++i)
    out << c.lengths[i] << "," << fmt_double(c.values[i]) << "\n";
}

// ---------------------------------------------------------------------------
// Plain-geometry SVG emission (polyline plots and scatter), no plotting
// dependency.
// ---------------------------------------------------------------------------

struct SvgSeries {
  std::string label;
  std::string color = "#1f77b4";
  bool scatter = false;
  std::vector<double> x;
  std::vector<double> y;
};

inline void write_svg_plot(const std::vector<SvgSeries>& series,
                           const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const std::string& path) {
  const double w = 640, h = 420, ml = 70, mr = 20, mt = 40, mb = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) { xmin = std::min(xmin, v); xmax = std::max(xmax, v); }
    for (double v : s.y) { ymin = std::min(ymin, v); ymax = std::max(ymax, v); }
  }
  if (!(xmax > xmin)) { xmin -= 1; xmax += 1; }
  if (!(ymax > ymin)) { ymin -= 1; ymax += 1; }
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad; ymax += ypad;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
  auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write svg: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
      << "\" height=\"" << h << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" "
         "font-size=\"14\">" << title << "</text>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr
      << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
      << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + i * (xmax - xmin) / 4;
    const double yv = ymin + i * (ymax - ymin) / 4;
    out << "<text x=\"" << px(xv) << "\" y=\"" << h - mb + 18
        << "\" text-anchor=\"middle\" font-size=\"10\">"
        << fmt_double(std::round(xv * 100) / 100) << "</text>\n";
    out << "<text x=\"" << ml - 8 << "\" y=\"" << py(yv) + 3
        << "\" text-anchor=\"end\" font-size=\"10\">"
        << fmt_double(std::round(yv * 100) / 100) << "</text>\n";
  }
  out << "<text x=\"" << w / 2 << "\" y=\"" << h - 10
      << "\" text-anchor=\"middle\" font-size=\"12\">" << xlabel << "</text>\n"
      << "<text x=\"16\" y=\"" << h / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
      << h / 2 << ")\">" << ylabel << "</text>\n";
  double legend_y = mt + 6;
  for (const auto& s : series) {
    if (s.scatter) {
      for (std::size_t i = 0; i < s.x.size(); ++i)
        out << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i])
            << "\" r=\"4\" fill=\"" << s.color << "\"/>\n";
    } else if (!s.x.empty()) {
      out << "<polyline fill=\"none\" stroke=\"" << s.color
          << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i)
        out << px(s.x[i]) << "," << py(s.y[i]) << " ";
      out << "\"/>\n";
    }
    out << "<rect x=\"" << w - mr - 150 << "\" y=\"" << legend_y - 8
        << "\" width=\"10\" height=\"10\" fill=\"" << s.color << "\"/>\n"
        << "<text x=\"" << w - mr - 135 << "\" y=\"" << legend_y + 1
        << "\" font-size=\"11\">" << s.label << "</text>\n";
    legend_y += 16;
  }
  out << "</svg>\n";
}

}  // namespace cfdlab

#endif  // CFDLAB_REPORT_HPP_
