#pragma once

#include <string>
#include <vector>

namespace instructtime::cli {

struct Curve {
  std::string label;
  std::vector<double> values;
};

// Static line plot: the first curve is drawn dark, later curves on a
// light-to-dark ramp, with a legend.
std::string render_svg(const std::vector<Curve>& curves, const std::string& title, int width = 720,
                       int height = 360);

}  // namespace instructtime::cli
