#pragma once

// Minimal static SVG charts for reports. Output is a pure function of the
// inputs, so identical data gives byte-identical files.

#include <optional>
#include <string>
#include <vector>

namespace isotropy {

struct Bar {
    std::string label;
    double value = 0.0;
    double sd = 0.0;  // whisker half-length
};

// Vertical bars with +-sd whiskers.
std::string bar_chart_svg(const std::string& title, const std::string& y_label, const std::vector<Bar>& bars);

struct SeriesPoint {
    double x = 0.0;
    std::optional<double> y;  // nullopt: missing cell, drawn as a gap
    double sd = 0.0;
};

struct Series {
    std::string name;
    std::vector<SeriesPoint> points;
};

// Lines with shaded +-sd bands; missing points break the line.
std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series);

std::string xml_escape(const std::string& s);

}  // namespace isotropy
