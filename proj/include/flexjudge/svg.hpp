#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "flexjudge/util.hpp"

namespace flexjudge::svg {

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  return replace_all(replace_all(replace_all(s, "&", "&amp;"), "<", "&lt;"), ">", "&gt;");
}

constexpr double kWidth = 480, kHeight = 360, kLeft = 56, kRight = 16, kTop = 36, kBottom = 48;

inline std::string frame(const std::string& title, const std::string& xlabel, const std::string& ylabel) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" +
                  num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kWidth / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) +
       "</text>\n";
  s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kHeight - kBottom) + "\" x2=\"" + num(kWidth - kRight) +
       "\" y2=\"" + num(kHeight - kBottom) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(kLeft) + "\" y2=\"" +
       num(kHeight - kBottom) + "\" stroke=\"black\"/>\n";
  s += "<text x=\"" + num(kWidth / 2) + "\" y=\"" + num(kHeight - 10) + "\" text-anchor=\"middle\">" +
       escape(xlabel) + "</text>\n";
  s += "<text x=\"14\" y=\"" + num(kHeight / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
       num(kHeight / 2) + ")\">" + escape(ylabel) + "</text>\n";
  return s;
}

inline std::pair<double, double> range(const std::vector<double>& v) {
  if (v.empty()) return {0, 1};
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  if (*lo == *hi) return {*lo - 1, *hi + 1};
  return {*lo, *hi};
}

}  // namespace detail

/// Predicted-vs-gold scatter.
inline std::string scatter(const std::string& title, const std::vector<double>& x, const std::vector<double>& y,
                           const std::string& xlabel, const std::string& ylabel) {
  using namespace detail;
  std::string s = frame(title, xlabel, ylabel);
  auto [x0, x1] = range(x);
  auto [y0, y1] = range(y);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  s += "<text x=\"" + num(kLeft) + "\" y=\"" + num(kHeight - kBottom + 14) + "\">" + num(x0) + "</text>\n";
  s += "<text x=\"" + num(kWidth - kRight) + "\" y=\"" + num(kHeight - kBottom + 14) + "\" text-anchor=\"end\">" +
       num(x1) + "</text>\n";
  s += "<text x=\"" + num(kLeft - 4) + "\" y=\"" + num(kHeight - kBottom) + "\" text-anchor=\"end\">" + num(y0) +
       "</text>\n";
  s += "<text x=\"" + num(kLeft - 4) + "\" y=\"" + num(kTop + 4) + "\" text-anchor=\"end\">" + num(y1) + "</text>\n";
  for (std::size_t i = 0; i < std::min(x.size(), y.size()); ++i) {
    double cx = kLeft + (x[i] - x0) / (x1 - x0) * pw;
    double cy = kHeight - kBottom - (y[i] - y0) / (y1 - y0) * ph;
    s += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"3\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n";
  }
  return s + "</svg>\n";
}

/// Vertical bars, one per label.
inline std::string bars(const std::string& title, const std::vector<std::string>& labels,
                        const std::vector<double>& values, const std::string& ylabel) {
  using namespace detail;
  std::string s = frame(title, "", ylabel);
  double hi = 0;
  for (double v : values) hi = std::max(hi, v);
  if (hi <= 0) hi = 1;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  const double slot = labels.empty() ? pw : pw / static_cast<double>(labels.size());
  s += "<text x=\"" + num(kLeft - 4) + "\" y=\"" + num(kTop + 4) + "\" text-anchor=\"end\">" + num(hi) + "</text>\n";
  for (std::size_t i = 0; i < labels.size() && i < values.size(); ++i) {
    double h = values[i] / hi * ph;
    double x = kLeft + slot * static_cast<double>(i) + slot * 0.15;
    s += "<rect x=\"" + num(x) + "\" y=\"" + num(kHeight - kBottom - h) + "\" width=\"" + num(slot * 0.7) +
         "\" height=\"" + num(h) + "\" fill=\"steelblue\"/>\n";
    s += "<text x=\"" + num(x + slot * 0.35) + "\" y=\"" + num(kHeight - kBottom + 14) +
         "\" text-anchor=\"middle\">" + escape(labels[i]) + "</text>\n";
  }
  return s + "</svg>\n";
}

}  // namespace flexjudge::svg
