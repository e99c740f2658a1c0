#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dkf::svg {

struct Series {
    std::string label;
    std::vector<double> x, y;
    bool markers = false;  // dots instead of a polyline
};

struct Axes {
    std::string title, xlabel, ylabel;
    bool log_y = false;
};

// Minimal static line plot. Non-finite points (and non-positive ones on a log axis) are skipped.
void line_plot(std::ostream& os, const Axes& axes, const std::vector<Series>& series, int width = 640,
               int height = 420);

}  // namespace dkf::svg
