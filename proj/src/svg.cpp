#include "tcal/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tcal/errors.hpp"

namespace tcal {

namespace {

// Plot frame shared by both chart kinds.
constexpr double kWidth = 480.0;
constexpr double kHeight = 360.0;
constexpr double kLeft = 60.0;
constexpr double kRight = 460.0;
constexpr double kTop = 44.0;
constexpr double kBottom = 316.0;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

double px(double unit) { return kLeft + unit * (kRight - kLeft); }
double py(double unit) { return kBottom - unit * (kBottom - kTop); }

void open_chart(std::ostringstream& s, const std::string& title) {
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
    << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << ' '
    << kHeight << "\">\n";
  s << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" fill=\"white\"/>\n";
  s << "<text x=\"" << num(kWidth / 2) << "\" y=\"24\" text-anchor=\"middle\" "
       "font-family=\"sans-serif\" font-size=\"14\">"
    << escape(title) << "</text>\n";
}

void frame_and_y_axis(std::ostringstream& s, const std::string& y_label) {
  s << "<line class=\"axis\" x1=\"" << num(kLeft) << "\" y1=\"" << num(kBottom)
    << "\" x2=\"" << num(kRight) << "\" y2=\"" << num(kBottom)
    << "\" stroke=\"black\"/>\n";
  s << "<line class=\"axis\" x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop)
    << "\" x2=\"" << num(kLeft) << "\" y2=\"" << num(kBottom)
    << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = t / 5.0;
    s << "<line x1=\"" << num(kLeft - 4) << "\" y1=\"" << num(py(v))
      << "\" x2=\"" << num(kLeft) << "\" y2=\"" << num(py(v))
      << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(py(v) + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << num(v) << "</text>\n";
  }
  s << "<text x=\"16\" y=\"" << num((kTop + kBottom) / 2)
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
       "transform=\"rotate(-90 16 "
    << num((kTop + kBottom) / 2) << ")\">" << escape(y_label) << "</text>\n";
}

void write_text_file(const std::string& content, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace

std::string reliability_svg(const ReliabilityReport& report,
                            const std::string& title) {
  std::ostringstream s;
  open_chart(s, title);
  frame_and_y_axis(s, "accuracy");

  const int m = static_cast<int>(report.bins.size());
  for (const BinStats& bin : report.bins) {
    const double x0 = px(bin.lower) + 1.0;
    const double w = px(bin.upper) - px(bin.lower) - 2.0;
    const double h = (kBottom - kTop) * (bin.count > 0 ? bin.accuracy : 0.0);
    s << "<rect class=\"bar\" x=\"" << num(x0) << "\" y=\"" << num(kBottom - h)
      << "\" width=\"" << num(w) << "\" height=\"" << num(h)
      << "\" fill=\"#4878a8\" stroke=\"#2c4a68\"/>\n";
  }
  for (const BinStats& bin : report.bins) {
    if (bin.count == 0) continue;
    const double lo = std::min(bin.accuracy, bin.confidence);
    const double hi = std::max(bin.accuracy, bin.confidence);
    s << "<rect class=\"gap\" x=\"" << num(px(bin.lower) + 1.0) << "\" y=\""
      << num(py(hi)) << "\" width=\"" << num(px(bin.upper) - px(bin.lower) - 2.0)
      << "\" height=\"" << num(py(lo) - py(hi))
      << "\" fill=\"#c85a5a\" fill-opacity=\"0.45\"/>\n";
  }
  s << "<line class=\"diagonal\" x1=\"" << num(px(0)) << "\" y1=\""
    << num(py(0)) << "\" x2=\"" << num(px(1)) << "\" y2=\"" << num(py(1))
    << "\" stroke=\"#444444\" stroke-dasharray=\"6 4\"/>\n";

  for (int t = 0; t <= 5; ++t) {
    const double v = t / 5.0;
    s << "<text x=\"" << num(px(v)) << "\" y=\"" << num(kBottom + 16)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
      << num(v) << "</text>\n";
  }
  s << "<text x=\"" << num((kLeft + kRight) / 2) << "\" y=\""
    << num(kBottom + 34)
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
       "confidence</text>\n";

  char note[96];
  std::snprintf(note, sizeof(note), "n=%d  ECE=%.4f  MCE=%.4f  ACE=%.4f",
                report.n, report.ece, report.mce, report.ace);
  s << "<text x=\"" << num(kLeft + 6) << "\" y=\"" << num(kTop - 6)
    << "\" font-family=\"sans-serif\" font-size=\"11\">" << note
    << " (bins=" << m << ")</text>\n";
  s << "</svg>\n";
  return s.str();
}

void write_reliability_svg(const ReliabilityReport& report,
                           const std::string& title, const std::string& path) {
  write_text_file(reliability_svg(report, title), path);
}

std::string sweep_svg(const std::vector<SweepRow>& rows,
                      const std::string& title) {
  if (rows.empty()) throw ConfigError("sweep chart needs at least one row");
  std::ostringstream s;
  open_chart(s, title);
  frame_and_y_axis(s, "fraction");

  const int n = static_cast<int>(rows.size());
  auto xi = [&](int i) {
    return n == 1 ? (kLeft + kRight) / 2
                  : kLeft + (kRight - kLeft) * i / static_cast<double>(n - 1);
  };
  for (int i = 0; i < n; ++i) {
    s << "<line x1=\"" << num(xi(i)) << "\" y1=\"" << num(kBottom)
      << "\" x2=\"" << num(xi(i)) << "\" y2=\"" << num(kBottom + 4)
      << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << num(xi(i)) << "\" y=\"" << num(kBottom + 16)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
      << format_double(rows[i].sigma) << "</text>\n";
  }
  s << "<text x=\"" << num((kLeft + kRight) / 2) << "\" y=\""
    << num(kBottom + 34)
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
    << escape(rows.front().perturbation + " sigma") << "</text>\n";

  auto polyline = [&](const char* cls, const char* color, auto&& value) {
    s << "<polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"2\" points=\"";
    for (int i = 0; i < n; ++i) {
      if (i) s << ' ';
      s << num(xi(i)) << ',' << num(py(value(rows[i])));
    }
    s << "\"/>\n";
  };
  polyline("accuracy", "#4878a8", [](const SweepRow& r) { return r.accuracy; });
  polyline("confidence", "#c87d2a",
           [](const SweepRow& r) { return r.avg_confidence; });

  // Legend.
  s << "<line x1=\"" << num(kRight - 150) << "\" y1=\"" << num(kTop + 10)
    << "\" x2=\"" << num(kRight - 120) << "\" y2=\"" << num(kTop + 10)
    << "\" stroke=\"#4878a8\" stroke-width=\"2\"/>\n";
  s << "<text x=\"" << num(kRight - 114) << "\" y=\"" << num(kTop + 14)
    << "\" font-family=\"sans-serif\" font-size=\"11\">accuracy</text>\n";
  s << "<line x1=\"" << num(kRight - 150) << "\" y1=\"" << num(kTop + 28)
    << "\" x2=\"" << num(kRight - 120) << "\" y2=\"" << num(kTop + 28)
    << "\" stroke=\"#c87d2a\" stroke-width=\"2\"/>\n";
  s << "<text x=\"" << num(kRight - 114) << "\" y=\"" << num(kTop + 32)
    << "\" font-family=\"sans-serif\" font-size=\"11\">avg confidence</text>\n";
  s << "</svg>\n";
  return s.str();
}

void write_sweep_svg(const std::vector<SweepRow>& rows,
                     const std::string& title, const std::string& path) {
  write_text_file(sweep_svg(rows, title), path);
}

}  // namespace tcal
