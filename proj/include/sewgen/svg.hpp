#pragma once

#include <string>

#include "sewgen/pattern.hpp"

namespace sewgen {

// Panels laid out on a grid, one labelled <g> per panel, one quadratic Bezier
// <path> per edge. Both edges of a stitch share a stroke color. Output bytes
// are a pure function of the pattern.
std::string render_svg_string(const Pattern& pattern);
void render_svg(const Pattern& pattern, const std::string& path);

} // namespace sewgen
