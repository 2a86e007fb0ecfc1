#include "isotropy/svg.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace isotropy {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;
constexpr double kPlotW = kWidth - kLeft - kRight, kPlotH = kHeight - kTop - kBottom;

const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
    return buf;
}

struct Range {
    double lo = 0, hi = 1;
    double map(double v, double px_lo, double px_hi) const {
        return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo);
    }
};

Range padded(double lo, double hi, bool include_zero) {
    if (include_zero) {
        lo = std::min(lo, 0.0);
        hi = std::max(hi, 0.0);
    }
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    return {include_zero && lo == 0.0 ? 0.0 : lo - pad, hi + pad};
}

std::string header(const std::string& title) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
                    "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + num(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + xml_escape(title) +
         "</text>\n";
    return s;
}

std::string y_axis(const Range& y, const std::string& label) {
    std::string s;
    s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(kLeft) + "\" y2=\"" + num(kTop + kPlotH) +
         "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double v = y.lo + (y.hi - y.lo) * i / 5.0;
        const double py = y.map(v, kTop + kPlotH, kTop);
        s += "<line x1=\"" + num(kLeft - 4) + "\" y1=\"" + num(py) + "\" x2=\"" + num(kLeft + kPlotW) + "\" y2=\"" +
             num(py) + "\" stroke=\"#dddddd\"/>\n";
        s += "<text x=\"" + num(kLeft - 8) + "\" y=\"" + num(py + 4) + "\" text-anchor=\"end\">" + tick_label(v) +
             "</text>\n";
    }
    s += "<text x=\"16\" y=\"" + num(kTop + kPlotH / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num(kTop + kPlotH / 2) + ")\">" + xml_escape(label) + "</text>\n";
    return s;
}

}  // namespace

std::string xml_escape(const std::string& s) {
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

std::string bar_chart_svg(const std::string& title, const std::string& y_label, const std::vector<Bar>& bars) {
    double lo = 0, hi = 0;
    for (const auto& b : bars) {
        lo = std::min(lo, b.value - b.sd);
        hi = std::max(hi, b.value + b.sd);
    }
    const Range y = padded(lo, hi, true);
    std::string s = header(title) + y_axis(y, y_label);
    const double zero = y.map(0.0, kTop + kPlotH, kTop);
    s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(zero) + "\" x2=\"" + num(kLeft + kPlotW) + "\" y2=\"" + num(zero) +
         "\" stroke=\"black\"/>\n";

    const double slot = bars.empty() ? kPlotW : kPlotW / static_cast<double>(bars.size());
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const auto& b = bars[i];
        const double cx = kLeft + slot * (static_cast<double>(i) + 0.5);
        const double w = slot * 0.6;
        const double top = y.map(b.value, kTop + kPlotH, kTop);
        s += "<rect class=\"bar\" x=\"" + num(cx - w / 2) + "\" y=\"" + num(std::min(top, zero)) + "\" width=\"" + num(w) +
             "\" height=\"" + num(std::abs(zero - top)) + "\" fill=\"" + kPalette[i % 8] + "\"><title>" +
             xml_escape(b.label) + ": " + tick_label(b.value) + " &#177; " + tick_label(b.sd) + "</title></rect>\n";
        const double wy0 = y.map(b.value - b.sd, kTop + kPlotH, kTop);
        const double wy1 = y.map(b.value + b.sd, kTop + kPlotH, kTop);
        s += "<g class=\"whisker\" stroke=\"black\"><line x1=\"" + num(cx) + "\" y1=\"" + num(wy0) + "\" x2=\"" + num(cx) +
             "\" y2=\"" + num(wy1) + "\"/><line x1=\"" + num(cx - 6) + "\" y1=\"" + num(wy0) + "\" x2=\"" + num(cx + 6) +
             "\" y2=\"" + num(wy0) + "\"/><line x1=\"" + num(cx - 6) + "\" y1=\"" + num(wy1) + "\" x2=\"" + num(cx + 6) +
             "\" y2=\"" + num(wy1) + "\"/></g>\n";
        s += "<text x=\"" + num(cx) + "\" y=\"" + num(kTop + kPlotH + 18) + "\" text-anchor=\"middle\">" +
             xml_escape(b.label) + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series) {
    double xlo = 0, xhi = 0, ylo = 0, yhi = 0;
    bool any = false;
    for (const auto& sr : series)
        for (const auto& p : sr.points) {
            if (!any) {
                xlo = xhi = p.x;
                any = true;
            }
            xlo = std::min(xlo, p.x);
            xhi = std::max(xhi, p.x);
            if (p.y) {
                ylo = std::min(ylo, *p.y - p.sd);
                yhi = std::max(yhi, *p.y + p.sd);
            }
        }
    const Range y = padded(ylo, yhi, true);
    const Range x = padded(xlo, xhi, false);
    auto px = [&](double v) { return x.map(v, kLeft, kLeft + kPlotW); };
    auto py = [&](double v) { return y.map(v, kTop + kPlotH, kTop); };

    std::string s = header(title) + y_axis(y, y_label);
    s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop + kPlotH) + "\" x2=\"" + num(kLeft + kPlotW) + "\" y2=\"" +
         num(kTop + kPlotH) + "\" stroke=\"black\"/>\n";
    std::vector<double> xs;
    for (const auto& sr : series)
        for (const auto& p : sr.points) xs.push_back(p.x);
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    for (double v : xs)
        s += "<text x=\"" + num(px(v)) + "\" y=\"" + num(kTop + kPlotH + 18) + "\" text-anchor=\"middle\">" +
             tick_label(v) + "</text>\n";
    s += "<text x=\"" + num(kLeft + kPlotW / 2) + "\" y=\"" + num(kHeight - 14) + "\" text-anchor=\"middle\">" +
         xml_escape(x_label) + "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& sr = series[k];
        const char* color = kPalette[k % 8];
        // Contiguous runs of present points become one band + one polyline.
        std::size_t i = 0;
        while (i < sr.points.size()) {
            if (!sr.points[i].y) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < sr.points.size() && sr.points[j].y) ++j;
            std::string upper, lower, line;
            for (std::size_t t = i; t < j; ++t) {
                const auto& p = sr.points[t];
                upper += num(px(p.x)) + "," + num(py(*p.y + p.sd)) + " ";
                line += num(px(p.x)) + "," + num(py(*p.y)) + " ";
            }
            for (std::size_t t = j; t-- > i;) {
                const auto& p = sr.points[t];
                lower += num(px(p.x)) + "," + num(py(*p.y - p.sd)) + " ";
            }
            s += "<polygon class=\"band\" points=\"" + upper + lower + "\" fill=\"" + color +
                 "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
            s += "<polyline class=\"line\" points=\"" + line + "\" fill=\"none\" stroke=\"" + color +
                 "\" stroke-width=\"2\"/>\n";
            for (std::size_t t = i; t < j; ++t)
                s += "<circle cx=\"" + num(px(sr.points[t].x)) + "\" cy=\"" + num(py(*sr.points[t].y)) + "\" r=\"3\" fill=\"" +
                     color + "\"/>\n";
            i = j;
        }
        for (const auto& p : sr.points)
            if (!p.y)
                s += "<text class=\"missing\" x=\"" + num(px(p.x)) + "\" y=\"" + num(kTop + kPlotH - 6) +
                     "\" text-anchor=\"middle\" fill=\"" + color + "\">&#215;</text>\n";
        s += "<text x=\"" + num(kLeft + kPlotW - 4) + "\" y=\"" + num(kTop + 14 + 16 * static_cast<double>(k)) +
             "\" text-anchor=\"end\" fill=\"" + color + "\">" + xml_escape(sr.name) + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

}  // namespace isotropy
