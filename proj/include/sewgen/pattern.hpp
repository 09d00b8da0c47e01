#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sewgen/geometry.hpp"

namespace sewgen {

// One boundary segment of a panel. Only the start point and the quadratic
// Bezier control point are stored; the end point is the next edge's start.
// Control points are absolute panel-local coordinates (centimeters); a
// straight edge places its control at the segment midpoint.
struct Edge {
    Vec2 start;
    Vec2 control;

    bool operator==(const Edge&) const = default;
};

// 3D placement of a panel: rotation then translation (centimeters, world frame).
struct Placement {
    Quat rotation = Quat::identity();
    Vec3 translation;

    bool operator==(const Placement&) const = default;
};

// A closed 2D polygon piece, counterclockwise. stitch_tags are per-edge 3D
// feature vectors in normalized [0,1] units (zero vector for free edges);
// stitch_flags mark which edges participate in a stitch.
struct Panel {
    std::vector<Edge> edges;
    Placement placement;
    std::vector<Vec3> stitch_tags;
    std::vector<int> stitch_flags;

    int edge_count() const { return static_cast<int>(edges.size()); }
};

// Reference to one edge of one panel.
struct EdgeRef {
    int panel = 0;
    int edge = 0;

    bool operator==(const EdgeRef&) const = default;
    auto operator<=>(const EdgeRef&) const = default;
};

// An unordered pair of stitched edges. Stored canonically with a <= b so two
// stitches compare equal regardless of construction order.
struct Stitch {
    EdgeRef a;
    EdgeRef b;

    Stitch() = default;
    Stitch(EdgeRef first, EdgeRef second) {
        if (second < first) std::swap(first, second);
        a = first;
        b = second;
    }

    bool operator==(const Stitch&) const = default;
    auto operator<=>(const Stitch&) const = default;
};

struct Pattern {
    std::vector<Panel> panels;
    std::vector<Stitch> stitches;
    std::optional<std::string> caption;

    int panel_count() const { return static_cast<int>(panels.size()); }
};

// One vertex per edge; vertex j is edges[j].start. The polygon closes by
// construction (edge j runs from vertex j to vertex (j+1) mod N).
std::vector<Vec2> reconstruct_vertices(const Panel& panel);

// Shoelace area over the stored vertices (curvature ignored). Positive = CCW.
double polygon_signed_area(const std::vector<Vec2>& vertices);

// Bezier midpoint of edge `edge_index`, lifted to (x,y,0) and placed in world
// space via the panel's rotation and translation.
Vec3 edge_midpoint_3d(const Panel& panel, int edge_index);

enum class Severity { kError, kWarning };

struct ValidationIssue {
    Severity severity = Severity::kError;
    std::string location; // e.g. "panel 2, edge 0"
    std::string rule;     // stable rule id, e.g. "MIN_EDGES"
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;

    bool valid() const {
        for (const auto& i : issues)
            if (i.severity == Severity::kError) return false;
        return true;
    }
    bool has_rule(const std::string& rule) const {
        for (const auto& i : issues)
            if (i.rule == rule) return true;
        return false;
    }
};

// Structural limits validate_pattern checks against. Defaults match the
// codec defaults (K = 14 edges, 12 panels under the 1500-token cap).
struct PatternLimits {
    int max_edges = 14;
    int max_panels = 12;
};

// Checks every type invariant plus flag/stitch-list consistency. Violations
// are data, not errors: the report lists them with stable rule ids. Clockwise
// winding and out-of-range tags are reported as warnings only.
ValidationReport validate_pattern(const Pattern& pattern, const PatternLimits& limits = {});

} // namespace sewgen
