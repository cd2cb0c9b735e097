#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace instructtime::cli {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string color(std::size_t i, std::size_t n) {
  if (i == 0) return "#222222";
  const double t = n > 2 ? static_cast<double>(i - 1) / static_cast<double>(n - 2) : 1.0;
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(200 - 170 * t), static_cast<int>(120 - 60 * t),
                static_cast<int>(240 - 60 * t));
  return buf;
}

}  // namespace

std::string render_svg(const std::vector<Curve>& curves, const std::string& title, int width, int height) {
  const double left = 50, right = 150, top = 30, bottom = 30;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t len = 0;
  for (const auto& c : curves) {
    len = std::max(len, c.values.size());
    for (double v : c.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](std::size_t t) { return left + (len > 1 ? pw * static_cast<double>(t) / static_cast<double>(len - 1) : 0.0); };
  auto py = [&](double v) { return top + ph * (hi - v) / (hi - lo); };

  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << escape(title)
     << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#999\"/>\n";
  os << "<text x=\"" << left - 6 << "\" y=\"" << top + 10 << "\" font-family=\"sans-serif\" font-size=\"10\" "
     << "text-anchor=\"end\">" << hi << "</text>\n";
  os << "<text x=\"" << left - 6 << "\" y=\"" << top + ph << "\" font-family=\"sans-serif\" font-size=\"10\" "
     << "text-anchor=\"end\">" << lo << "</text>\n";
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& c = curves[i];
    os << "<polyline fill=\"none\" stroke=\"" << color(i, curves.size()) << "\" stroke-width=\""
       << (i == 0 ? 2 : 1.3) << "\" points=\"";
    for (std::size_t t = 0; t < c.values.size(); ++t) os << (t ? " " : "") << px(t) << ',' << py(c.values[t]);
    os << "\"/>\n";
    const double ly = top + 14.0 * static_cast<double>(i) + 8;
    os << "<line x1=\"" << width - right + 10 << "\" y1=\"" << ly << "\" x2=\"" << width - right + 28 << "\" y2=\""
       << ly << "\" stroke=\"" << color(i, curves.size()) << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << width - right + 32 << "\" y=\"" << ly + 4
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(c.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace instructtime::cli
