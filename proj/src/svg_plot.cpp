#include "dkf/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace dkf::svg {

namespace {

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string esc(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '&': o += "&amp;"; break;
            default: o += c;
        }
    }
    return o;
}

std::string num(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.4g", v);
    return b;
}

}  // namespace

void line_plot(std::ostream& os, const Axes& axes, const std::vector<Series>& series, int width, int height) {
    const double inf = std::numeric_limits<double>::infinity();
    double x0 = inf, x1 = -inf, y0 = inf, y1 = -inf;
    auto ok = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!axes.log_y || y > 0); };
    auto ty = [&](double y) { return axes.log_y ? std::log10(y) : y; };
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
            if (ok(s.x[i], s.y[i])) {
                x0 = std::min(x0, s.x[i]);
                x1 = std::max(x1, s.x[i]);
                y0 = std::min(y0, ty(s.y[i]));
                y1 = std::max(y1, ty(s.y[i]));
            }
    if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;

    const int L = 70, R = 150, T = 36, B = 48;
    const double pw = width - L - R, ph = height - T - B;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return T + (1.0 - (ty(y) - y0) / (y1 - y0)) * ph; };

    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<text x=\"" << L + pw / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << esc(axes.title)
       << "</text>\n";
    os << "<text x=\"" << L + pw / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">" << esc(axes.xlabel)
       << "</text>\n";
    os << "<text x=\"16\" y=\"" << T + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << T + ph / 2
       << ")\">" << esc(axes.ylabel) << "</text>\n";

    for (int i = 0; i <= 4; ++i) {
        const double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
        const double sx = px(fx), sy = T + (1.0 - i / 4.0) * ph;
        os << "<text x=\"" << sx << "\" y=\"" << T + ph + 16 << "\" text-anchor=\"middle\">" << num(fx) << "</text>\n";
        os << "<text x=\"" << L - 6 << "\" y=\"" << sy + 4 << "\" text-anchor=\"end\">"
           << num(axes.log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
        os << "<line x1=\"" << L << "\" y1=\"" << sy << "\" x2=\"" << L + pw << "\" y2=\"" << sy
           << "\" stroke=\"#ddd\"/>\n";
    }

    for (std::size_t s = 0; s < series.size(); ++s) {
        const auto& S = series[s];
        const char* col = kColors[s % (sizeof kColors / sizeof *kColors)];
        if (S.markers) {
            for (std::size_t i = 0; i < S.x.size() && i < S.y.size(); ++i)
                if (ok(S.x[i], S.y[i]))
                    os << "<circle cx=\"" << px(S.x[i]) << "\" cy=\"" << py(S.y[i]) << "\" r=\"3\" fill=\"" << col
                       << "\"/>\n";
        } else {
            os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
            for (std::size_t i = 0; i < S.x.size() && i < S.y.size(); ++i)
                if (ok(S.x[i], S.y[i])) os << px(S.x[i]) << "," << py(S.y[i]) << " ";
            os << "\"/>\n";
        }
        const double ly = T + 14 + 16.0 * static_cast<double>(s);
        os << "<rect x=\"" << L + pw + 10 << "\" y=\"" << ly - 8 << "\" width=\"12\" height=\"4\" fill=\"" << col
           << "\"/>\n";
        os << "<text x=\"" << L + pw + 28 << "\" y=\"" << ly - 3 << "\">" << esc(S.label) << "</text>\n";
    }
    os << "</svg>\n";
}

}  // namespace dkf::svg
