#include "sewgen/svg.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "sewgen/errors.hpp"

namespace sewgen {

namespace {

const std::array<const char*, 10> kStitchPalette = {
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4",
    "#46f0f0", "#f032e6", "#9a6324", "#008080", "#808000"};

constexpr const char* kFreeEdgeColor = "#333333";

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

struct Box {
    double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
    double width() const { return max_x - min_x; }
    double height() const { return max_y - min_y; }
};

// Quadratic Bezier curves stay inside the hull of their control polygon, so
// start and control points bound the drawing.
Box panel_box(const Panel& panel) {
    Box b{1e300, 1e300, -1e300, -1e300};
    auto grow = [&](const Vec2& p) {
        b.min_x = std::min(b.min_x, p.x);
        b.min_y = std::min(b.min_y, p.y);
        b.max_x = std::max(b.max_x, p.x);
        b.max_y = std::max(b.max_y, p.y);
    };
    for (const Edge& e : panel.edges) {
        grow(e.start);
        grow(e.control);
    }
    return b;
}

} // namespace

std::string render_svg_string(const Pattern& pattern) {
    const int n = pattern.panel_count();
    if (n == 0) throw Error("render_svg: pattern has no panels");

    std::map<std::pair<int, int>, std::string> edge_color;
    for (size_t s = 0; s < pattern.stitches.size(); ++s) {
        const char* color = kStitchPalette[s % kStitchPalette.size()];
        const Stitch& st = pattern.stitches[s];
        edge_color[{st.a.panel, st.a.edge}] = color;
        edge_color[{st.b.panel, st.b.edge}] = color;
    }

    std::vector<Box> boxes;
    double cell_w = 0, cell_h = 0;
    for (const Panel& panel : pattern.panels) {
        boxes.push_back(panel_box(panel));
        cell_w = std::max(cell_w, boxes.back().width());
        cell_h = std::max(cell_h, boxes.back().height());
    }
    const double pad = 12.0;
    const double label_h = 14.0;
    cell_w += 2 * pad;
    cell_h += 2 * pad + label_h;

    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    const int rows = (n + cols - 1) / cols;

    std::string out;
    out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(cols * cell_w) +
           "\" height=\"" + fmt(rows * cell_h) + "\" viewBox=\"0 0 " + fmt(cols * cell_w) + " " +
           fmt(rows * cell_h) + "\">\n";

    for (int p = 0; p < n; ++p) {
        const Panel& panel = pattern.panels[p];
        const Box& box = boxes[p];
        const double ox = (p % cols) * cell_w + pad;
        const double oy = (p / cols) * cell_h + pad + label_h;
        // Panel space is y-up; SVG is y-down.
        auto tx = [&](const Vec2& v) { return v.x - box.min_x; };
        auto ty = [&](const Vec2& v) { return box.max_y - v.y; };

        out += "  <g class=\"panel\" id=\"panel" + std::to_string(p) + "\" transform=\"translate(" +
               fmt(ox) + "," + fmt(oy) + ")\">\n";
        out += "    <text x=\"0\" y=\"-4\" font-size=\"10\" font-family=\"monospace\">panel " +
               std::to_string(p) + "</text>\n";
        const int ne = panel.edge_count();
        for (int e = 0; e < ne; ++e) {
            const Edge& edge = panel.edges[e];
            const Vec2& end = panel.edges[(e + 1) % ne].start;
            auto it = edge_color.find({p, e});
            const std::string color = it != edge_color.end() ? it->second : kFreeEdgeColor;
            out += "    <path d=\"M " + fmt(tx(edge.start)) + " " + fmt(ty(edge.start)) + " Q " +
                   fmt(tx(edge.control)) + " " + fmt(ty(edge.control)) + " " + fmt(tx(end)) + " " +
                   fmt(ty(end)) + "\" fill=\"none\" stroke=\"" + color +
                   "\" stroke-width=\"1.2\"/>\n";
        }
        out += "  </g>\n";
    }
    out += "</svg>\n";
    return out;
}

void render_svg(const Pattern& pattern, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("render_svg: cannot open " + path + " for writing");
    out << render_svg_string(pattern);
    if (!out.good()) throw IoError("render_svg: write to " + path + " failed");
}

} // namespace sewgen
