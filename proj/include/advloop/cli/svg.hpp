#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

namespace advloop::svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return colors[i % 8];
}

class Document {
 public:
  Document(double w, double h) : w_(w), h_(h) {}

  void text(double x, double y, const std::string& s, int size = 12, const char* anchor = "start",
            const char* fill = "#000") {
    body_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" + std::to_string(size) +
             "\" font-family=\"sans-serif\" text-anchor=\"" + anchor + "\" fill=\"" + fill + "\">" + escape(s) +
             "</text>\n";
  }
  void line(double x0, double y0, double x1, double y1, const char* stroke = "#000", double width = 1.0) {
    body_ += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(y1) +
             "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill, const char* stroke = "none") {
    body_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
             "\" fill=\"" + fill + "\" stroke=\"" + stroke + "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const char* stroke, double width = 1.5,
                const char* dash = nullptr) {
    std::string p;
    for (const auto& [x, y] : pts) p += num(x) + "," + num(y) + " ";
    body_ += "<polyline fill=\"none\" stroke=\"" + std::string(stroke) + "\" stroke-width=\"" + num(width) + "\"" +
             (dash ? std::string(" stroke-dasharray=\"") + dash + "\"" : std::string()) + " points=\"" + p +
             "\"/>\n";
  }
  void circle(double x, double y, double r, const char* fill) {
    body_ += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"" + num(r) + "\" fill=\"" + fill + "\"/>\n";
  }

  std::string str() const {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w_) + "\" height=\"" + num(h_) +
           "\" viewBox=\"0 0 " + num(w_) + " " + num(h_) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n" +
           body_ + "</svg>\n";
  }

 private:
  double w_, h_;
  std::string body_;
};

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
  const char* dash = nullptr;
};

/// Axis box with ticks mapping data ranges onto a pixel rectangle.
struct Axes {
  double x0, y0, w, h;      // pixel box
  double xmin, xmax, ymin, ymax;

  double px(double x) const { return x0 + (xmax > xmin ? (x - xmin) / (xmax - xmin) : 0.5) * w; }
  double py(double y) const { return y0 + h - (ymax > ymin ? (y - ymin) / (ymax - ymin) : 0.5) * h; }

  void draw(Document& d, const std::string& xlabel, const std::string& ylabel, int ticks = 5) const {
    d.line(x0, y0 + h, x0 + w, y0 + h);
    d.line(x0, y0, x0, y0 + h);
    for (int i = 0; i <= ticks; ++i) {
      const double xv = xmin + (xmax - xmin) * i / ticks, yv = ymin + (ymax - ymin) * i / ticks;
      d.line(px(xv), y0 + h, px(xv), y0 + h + 4);
      d.text(px(xv), y0 + h + 16, trim_num(xv), 10, "middle");
      d.line(x0 - 4, py(yv), x0, py(yv));
      d.text(x0 - 6, py(yv) + 3, trim_num(yv), 10, "end");
    }
    d.text(x0 + w / 2, y0 + h + 32, xlabel, 12, "middle");
    d.text(x0 - 42, y0 + h / 2, ylabel, 12, "middle");
  }

  static std::string trim_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
  }
};

/// Line chart of several series sharing one set of axes.
inline std::string line_chart(const std::string& title, const std::vector<Series>& series, const std::string& xlabel,
                              const std::string& ylabel, double ymin, double ymax) {
  double xmin = 1e300, xmax = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
    }
  if (xmin > xmax) xmin = 0, xmax = 1;
  Document d(640, 400);
  d.text(320, 24, title, 15, "middle");
  const Axes ax{70, 45, 400, 290, xmin, xmax, ymin, ymax};
  ax.draw(d, xlabel, ylabel);
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& [x, y] : series[i].points) pts.push_back({ax.px(x), ax.py(y)});
    d.polyline(pts, palette(i), 2.0, series[i].dash);
    for (const auto& [x, y] : pts) d.circle(x, y, 3, palette(i));
    d.line(490, 60 + 20 * i, 515, 60 + 20 * i, palette(i), 2.0);
    d.text(522, 64 + 20 * i, series[i].name, 11);
  }
  return d.str();
}

}  // namespace advloop::svg
