#include <regex>
#include <string>
#include <vector>

#include "doctest.h"

#include "sewgen/svg.hpp"
#include "sewgen/synth.hpp"

using namespace sewgen;

namespace {

int count_occurrences(const std::string& text, const std::string& needle) {
    int n = 0;
    for (size_t pos = text.find(needle); pos != std::string::npos;
         pos = text.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

// Stroke colors of the <path> elements in document order.
std::vector<std::string> path_strokes(const std::string& svg) {
    std::vector<std::string> out;
    const std::regex re("<path[^>]*stroke=\"([^\"]+)\"");
    for (auto it = std::sregex_iterator(svg.begin(), svg.end(), re); it != std::sregex_iterator();
         ++it) {
        out.push_back((*it)[1].str());
    }
    return out;
}

} // namespace

TEST_SUITE("svg") {

TEST_CASE("identical patterns render byte-identically") {
    const Pattern p = synth_pattern(standard_template(TemplateKind::kTee), 8);
    CHECK(render_svg_string(p) == render_svg_string(p));
}

TEST_CASE("two-panel skirt renders 2 labeled groups and 8 paths") {
    const Pattern p = synth_pattern(standard_template(TemplateKind::kSkirt2Panel), 12);
    const std::string svg = render_svg_string(p);
    CHECK(count_occurrences(svg, "<g class=\"panel\"") == 2);
    CHECK(count_occurrences(svg, "<path ") == 8);
    CHECK(count_occurrences(svg, "<text ") == 2);
    CHECK(svg.find("panel 0") != std::string::npos);
    CHECK(svg.find("panel 1") != std::string::npos);
}

TEST_CASE("stitched edge pairs share a stroke color") {
    const Pattern p = synth_pattern(standard_template(TemplateKind::kSkirt2Panel), 12);
    const std::string svg = render_svg_string(p);
    const std::vector<std::string> strokes = path_strokes(svg);
    REQUIRE(strokes.size() == 8);

    // path index = panel * 4 + edge
    auto stroke_of = [&](int panel, int edge) { return strokes[panel * 4 + edge]; };
    for (const Stitch& s : p.stitches) {
        CHECK(stroke_of(s.a.panel, s.a.edge) == stroke_of(s.b.panel, s.b.edge));
    }
    // the two stitches use different colors; free edges use the default
    REQUIRE(p.stitches.size() == 2);
    CHECK(stroke_of(p.stitches[0].a.panel, p.stitches[0].a.edge) !=
          stroke_of(p.stitches[1].a.panel, p.stitches[1].a.edge));
    CHECK(stroke_of(0, 0) == "#333333"); // hem is unstitched
}

TEST_CASE("every template renders with one path per edge") {
    for (const TemplateSpec& spec : all_templates()) {
        const Pattern p = synth_pattern(spec, 3);
        int edges = 0;
        for (const Panel& panel : p.panels) edges += panel.edge_count();
        const std::string svg = render_svg_string(p);
        CHECK(count_occurrences(svg, "<path ") == edges);
        CHECK(count_occurrences(svg, "<g class=\"panel\"") == p.panel_count());
    }
}

} // TEST_SUITE
