#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "glotok/error.hpp"
#include "glotok/histrel.hpp"

namespace glotok {

struct LabeledHistogram {
    std::string label;
    RelationHistogram hist;
};

namespace detail {
inline std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (const char c : s) {
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
} // namespace detail

// Overlaid translucent bar charts of normalized relation histograms that
// share one bin grid.
inline std::string histogram_overlay_svg(const std::vector<LabeledHistogram>& hs) {
    if (hs.empty()) throw ValueError("histogram_overlay_svg: nothing to plot");
    const std::size_t n = hs.front().hist.bins();
    for (const auto& h : hs)
        if (h.hist.bins() != n) throw ValueError("histogram_overlay_svg: histograms have different bin counts");

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    const double width = 640, height = 360, left = 50, right = 20, top = 20, bottom = 40;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    double peak = 0;
    for (const auto& h : hs)
        for (const double m : h.hist.mass) peak = std::max(peak, m);
    if (peak <= 0) peak = 1;
    const double bar_w = plot_w / static_cast<double>(n);

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt(width, 0) + "\" height=\"" +
                      detail::fmt(height, 0) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t i = 0; i < hs.size(); ++i) {
        const char* color = palette[i % std::size(palette)];
        svg += "<g fill=\"" + std::string(color) + "\" fill-opacity=\"0.45\">\n";
        for (std::size_t b = 0; b < n; ++b) {
            const double h = hs[i].hist.mass[b] / peak * plot_h;
            svg += "<rect x=\"" + detail::fmt(left + b * bar_w) + "\" y=\"" + detail::fmt(top + plot_h - h) + "\" width=\"" +
                   detail::fmt(bar_w) + "\" height=\"" + detail::fmt(h) + "\"/>\n";
        }
        svg += "</g>\n";
        svg += "<text x=\"" + detail::fmt(left + 10) + "\" y=\"" + detail::fmt(top + 14 + 14.0 * i) + "\" fill=\"" + color +
               "\">" + detail::xml_escape(hs[i].label) + "</text>\n";
    }
    const std::string axis_y = detail::fmt(top + plot_h);
    svg += "<line x1=\"" + detail::fmt(left) + "\" y1=\"" + axis_y + "\" x2=\"" + detail::fmt(left + plot_w) + "\" y2=\"" + axis_y +
           "\" stroke=\"black\"/>\n";
    for (const double tick : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
        const double x = left + (tick + 1.0) / 2.0 * plot_w;
        svg += "<text x=\"" + detail::fmt(x) + "\" y=\"" + detail::fmt(top + plot_h + 16) + "\" text-anchor=\"middle\">" +
               detail::fmt(tick, 1) + "</text>\n";
    }
    svg += "<text x=\"" + detail::fmt(left + plot_w / 2) + "\" y=\"" + detail::fmt(height - 6) +
           "\" text-anchor=\"middle\">pairwise cosine similarity</text>\n";
    svg += "</svg>\n";
    return svg;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

} // namespace glotok
