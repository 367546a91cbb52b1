#pragma once

#include <string>
#include <vector>

namespace sd {

struct SvgSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Self-contained SVG line chart: linear axes with tick labels, one polyline
/// per series, fixed palette, no external assets. Deterministic bytes.
std::string render_line_chart(const std::string& title,
                              const std::vector<SvgSeries>& series,
                              const std::string& x_label = "t",
                              const std::string& y_label = "");

}  // namespace sd
