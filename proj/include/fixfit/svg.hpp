#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fixfit/errors.hpp"

namespace fixfit::svg {

// Minimal self-contained SVG charts: no scripts, fonts or external assets.

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

class Canvas {
 public:
  Canvas(double width, double height, const std::string& title) : w_(width), h_(height) {
    body_ << "<rect x=\"0\" y=\"0\" width=\"" << num(w_) << "\" height=\"" << num(h_) << "\" fill=\"white\"/>\n";
    text(w_ / 2, 20, title, 14, "middle");
  }

  void line(double x1, double y1, double x2, double y2, const std::string& stroke = "black", double width = 1.0) {
    body_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
          << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill) {
    body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
          << "\" fill=\"" << fill << "\"/>\n";
  }
  void circle(double x, double y, double r, const std::string& fill) {
    body_ << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"" << num(r) << "\" fill=\"" << fill << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
    body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.2\" points=\"";
    for (const auto& [x, y] : pts) body_ << num(x) << ',' << num(y) << ' ';
    body_ << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, int size = 11, const std::string& anchor = "start") {
    body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << size
          << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << escape(s) << "</text>\n";
  }

  std::string str() const {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w_) << "\" height=\"" << num(h_)
        << "\" viewBox=\"0 0 " << num(w_) << ' ' << num(h_) << "\">\n"
        << body_.str() << "</svg>\n";
    return out.str();
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << str();
  }

 private:
  double w_, h_;
  std::ostringstream body_;
};

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> p{"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                          "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"};
  return p;
}

/// Linear axis mapping with a little padding; `log` switches to log10.
struct Axis {
  double lo = 0.0, hi = 1.0, pix_lo = 0.0, pix_hi = 1.0;
  bool log = false;

  static Axis fit(std::vector<double> values, double pix_lo, double pix_hi, bool log) {
    Axis a{0.0, 1.0, pix_lo, pix_hi, log};
    std::vector<double> v;
    for (double x : values)
      if (std::isfinite(x) && (!log || x > 0.0)) v.push_back(log ? std::log10(x) : x);
    if (v.empty()) return a;
    a.lo = *std::min_element(v.begin(), v.end());
    a.hi = *std::max_element(v.begin(), v.end());
    if (a.hi - a.lo < 1e-12) a.lo -= 0.5, a.hi += 0.5;
    const double pad = 0.05 * (a.hi - a.lo);
    a.lo -= pad;
    a.hi += pad;
    return a;
  }

  double operator()(double v) const {
    const double t = log ? std::log10(std::max(v, 1e-300)) : v;
    return pix_lo + (t - lo) / (hi - lo) * (pix_hi - pix_lo);
  }
  double tick_value(double frac) const {
    const double t = lo + frac * (hi - lo);
    return log ? std::pow(10.0, t) : t;
  }
};

inline void frame(Canvas& c, const Axis& x, const Axis& y, const std::string& xlabel, const std::string& ylabel) {
  c.line(x.pix_lo, y.pix_lo, x.pix_hi, y.pix_lo);
  c.line(x.pix_lo, y.pix_lo, x.pix_lo, y.pix_hi);
  for (int i = 0; i <= 4; ++i) {
    const double fy = y.pix_lo + (y.pix_hi - y.pix_lo) * i / 4.0;
    c.line(x.pix_lo - 4, fy, x.pix_lo, fy);
    c.text(x.pix_lo - 6, fy + 4, label(y.tick_value(i / 4.0)), 10, "end");
  }
  c.text((x.pix_lo + x.pix_hi) / 2, y.pix_lo + 36, xlabel, 12, "middle");
  c.text(14, (y.pix_lo + y.pix_hi) / 2, ylabel, 12, "start");
}

/// Mean +/- standard error against k, log-scaled y.
inline Canvas errorbar_plot(const std::vector<double>& k, const std::vector<double>& mean, const std::vector<double>& se,
                            const std::string& title) {
  Canvas c(480, 340, title);
  std::vector<double> ys;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double s = std::isfinite(se[i]) ? se[i] : 0.0;
    ys.push_back(mean[i] + s);
    ys.push_back(std::max(mean[i] - s, mean[i] * 0.5));
  }
  auto xa = Axis::fit(k, 80, 450, false);
  auto ya = Axis::fit(ys, 290, 40, true);
  frame(c, xa, ya, "bottleneck width k", "val MSE");
  for (std::size_t i = 0; i < k.size(); ++i) {
    c.text(xa(k[i]), ya.pix_lo + 16, label(k[i]), 10, "middle");
    if (!std::isfinite(mean[i])) continue;
    const double s = std::isfinite(se[i]) ? se[i] : 0.0;
    const double lo = std::max(mean[i] - s, mean[i] * 0.5);
    c.line(xa(k[i]), ya(lo), xa(k[i]), ya(mean[i] + s), palette()[0], 1.5);
    c.circle(xa(k[i]), ya(mean[i]), 4, palette()[0]);
  }
  return c;
}

/// Matrix heatmap on a white-to-blue scale over [0, vmax].
inline Canvas heatmap(const std::vector<std::vector<double>>& m, const std::vector<std::string>& rows,
                      const std::vector<std::string>& cols, const std::string& title, double vmax = 1.0) {
  const double cell = 36, left = 90, top = 50;
  Canvas c(left + cell * static_cast<double>(cols.size()) + 80, top + cell * static_cast<double>(rows.size()) + 30, title);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    c.text(left - 6, top + cell * (static_cast<double>(i) + 0.6), rows[i], 11, "end");
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const double t = std::clamp(m[i][j] / vmax, 0.0, 1.0);
      char fill[16];
      std::snprintf(fill, sizeof fill, "#%02x%02x%02x", static_cast<int>(255 - 224 * t), static_cast<int>(255 - 180 * t),
                    static_cast<int>(255 - 75 * t));
      c.rect(left + cell * static_cast<double>(j), top + cell * static_cast<double>(i), cell - 1, cell - 1, fill);
      c.text(left + cell * (static_cast<double>(j) + 0.5), top + cell * (static_cast<double>(i) + 0.6), label(m[i][j]), 9,
             "middle");
    }
  }
  for (std::size_t j = 0; j < cols.size(); ++j)
    c.text(left + cell * (static_cast<double>(j) + 0.5), top - 6, cols[j], 11, "middle");
  return c;
}

/// One line per series; optional log-scaled y.
inline Canvas line_plot(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                        const std::string& ylabel, bool log_y) {
  Canvas c(560, 360, title);
  std::vector<double> xs, ys;
  for (const auto& s : series) xs.insert(xs.end(), s.x.begin(), s.x.end()), ys.insert(ys.end(), s.y.begin(), s.y.end());
  auto xa = Axis::fit(xs, 80, 440, false);
  auto ya = Axis::fit(ys, 310, 40, log_y);
  frame(c, xa, ya, xlabel, ylabel);
  for (int i = 0; i <= 4; ++i) c.text(xa.pix_lo + (xa.pix_hi - xa.pix_lo) * i / 4.0, ya.pix_lo + 16, label(xa.tick_value(i / 4.0)), 10, "middle");
  for (std::size_t k = 0; k < series.size(); ++k) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < series[k].x.size(); ++i)
      if (std::isfinite(series[k].y[i]) && (!log_y || series[k].y[i] > 0)) pts.emplace_back(xa(series[k].x[i]), ya(series[k].y[i]));
    const auto& col = palette()[k % palette().size()];
    c.polyline(pts, col);
    c.rect(450, 50 + 16 * static_cast<double>(k), 10, 10, col);
    c.text(465, 59 + 16 * static_cast<double>(k), series[k].name, 10);
  }
  return c;
}

/// Side-by-side histograms, one panel per column of values.
inline Canvas histograms(const std::vector<std::vector<double>>& columns, const std::vector<std::string>& names,
                         const std::string& title, int bins = 30) {
  const double pw = 240, ph = 180;
  Canvas c(pw * static_cast<double>(std::max<std::size_t>(columns.size(), 1)) + 20, ph + 80, title);
  for (std::size_t k = 0; k < columns.size(); ++k) {
    const auto& v = columns[k];
    if (v.empty()) continue;
    const double lo = *std::min_element(v.begin(), v.end());
    double hi = *std::max_element(v.begin(), v.end());
    if (hi <= lo) hi = lo + 1.0;
    std::vector<int> counts(static_cast<std::size_t>(bins), 0);
    for (double x : v) counts[static_cast<std::size_t>(std::min<double>(bins - 1, std::floor((x - lo) / (hi - lo) * bins)))]++;
    const int peak = *std::max_element(counts.begin(), counts.end());
    const double x0 = 20 + pw * static_cast<double>(k), base = 40 + ph, bw = (pw - 30) / bins;
    for (int b = 0; b < bins; ++b) {
      const double h = ph * counts[static_cast<std::size_t>(b)] / std::max(peak, 1);
      c.rect(x0 + bw * b, base - h, bw - 0.5, h, palette()[k % palette().size()]);
    }
    c.line(x0, base, x0 + pw - 30, base);
    c.text(x0, base + 14, label(lo), 9);
    c.text(x0 + pw - 30, base + 14, label(hi), 9, "end");
    c.text(x0 + (pw - 30) / 2, base + 30, k < names.size() ? names[k] : "", 11, "middle");
  }
  return c;
}

/// Scatter of (x, y) points, optional log-scaled y.
inline Canvas scatter(const std::vector<double>& x, const std::vector<double>& y, const std::vector<bool>& highlight,
                      const std::string& title, const std::string& xlabel, const std::string& ylabel, bool log_y) {
  Canvas c(520, 360, title);
  auto xa = Axis::fit(x, 80, 490, false);
  auto ya = Axis::fit(y, 310, 40, log_y);
  frame(c, xa, ya, xlabel, ylabel);
  for (int i = 0; i <= 4; ++i) c.text(xa.pix_lo + (xa.pix_hi - xa.pix_lo) * i / 4.0, ya.pix_lo + 16, label(xa.tick_value(i / 4.0)), 10, "middle");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(y[i]) || (log_y && !(y[i] > 0))) continue;
    const bool h = i < highlight.size() && highlight[i];
    c.circle(xa(x[i]), ya(y[i]), h ? 3.5 : 2.5, h ? palette()[1] : palette()[0]);
  }
  return c;
}

}  // namespace fixfit::svg
