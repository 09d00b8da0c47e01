#include "sewgen/pattern.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

namespace sewgen {

namespace {

std::string panel_loc(int p) { return "panel " + std::to_string(p); }
std::string edge_loc(int p, int e) { return "panel " + std::to_string(p) + ", edge " + std::to_string(e); }

bool finite2(const Vec2& v) { return std::isfinite(v.x) && std::isfinite(v.y); }
bool finite3(const Vec3& v) { return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z); }

} // namespace

std::vector<Vec2> reconstruct_vertices(const Panel& panel) {
    if (panel.edges.empty()) {
        throw std::invalid_argument("reconstruct_vertices: panel has no edges");
    }
    std::vector<Vec2> out;
    out.reserve(panel.edges.size());
    for (const auto& e : panel.edges) out.push_back(e.start);
    return out;
}

double polygon_signed_area(const std::vector<Vec2>& vertices) {
    const size_t n = vertices.size();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const Vec2& a = vertices[i];
        const Vec2& b = vertices[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    return 0.5 * acc;
}

Vec3 edge_midpoint_3d(const Panel& panel, int edge_index) {
    const int n = panel.edge_count();
    if (edge_index < 0 || edge_index >= n) {
        throw std::out_of_range("edge_midpoint_3d: edge index out of range");
    }
    const Edge& e = panel.edges[edge_index];
    const Vec2 p1 = panel.edges[(edge_index + 1) % n].start;
    const Vec2 m = bezier_point(e.start, e.control, p1, 0.5);
    const Vec3 local{m.x, m.y, 0.0};
    return rotate_by_quaternion(panel.placement.rotation, local) + panel.placement.translation;
}

ValidationReport validate_pattern(const Pattern& pattern, const PatternLimits& limits) {
    ValidationReport report;
    auto add = [&](Severity s, std::string loc, std::string rule, std::string msg) {
        report.issues.push_back({s, std::move(loc), std::move(rule), std::move(msg)});
    };

    if (pattern.panels.empty()) {
        add(Severity::kError, "pattern", "MIN_PANELS", "pattern has no panels");
    }
    if (pattern.panel_count() > limits.max_panels) {
        add(Severity::kError, "pattern", "MAX_PANELS",
            "pattern has " + std::to_string(pattern.panel_count()) + " panels, limit is " +
                std::to_string(limits.max_panels));
    }

    for (int p = 0; p < pattern.panel_count(); ++p) {
        const Panel& panel = pattern.panels[p];
        const int n = panel.edge_count();

        if (n < 3) {
            add(Severity::kError, panel_loc(p), "MIN_EDGES",
                "panel has " + std::to_string(n) + " edges, minimum is 3");
        }
        if (n > limits.max_edges) {
            add(Severity::kError, panel_loc(p), "MAX_EDGES",
                "panel has " + std::to_string(n) + " edges, limit is " +
                    std::to_string(limits.max_edges));
        }

        for (int e = 0; e < n; ++e) {
            const Edge& edge = panel.edges[e];
            if (!finite2(edge.start) || !finite2(edge.control)) {
                add(Severity::kError, edge_loc(p, e), "NONFINITE_COORD",
                    "edge has non-finite coordinates");
                continue;
            }
            const Vec2& next_start = panel.edges[(e + 1) % n].start;
            if (edge.start == next_start && edge.control == edge.start) {
                add(Severity::kError, edge_loc(p, e), "DEGENERATE_EDGE",
                    "zero-length edge is only legal as codec padding");
            }
        }

        if (!finite3(panel.placement.translation) ||
            !(std::isfinite(panel.placement.rotation.w) && std::isfinite(panel.placement.rotation.x) &&
              std::isfinite(panel.placement.rotation.y) && std::isfinite(panel.placement.rotation.z))) {
            add(Severity::kError, panel_loc(p), "NONFINITE_PLACEMENT",
                "placement has non-finite components");
        } else if (std::fabs(panel.placement.rotation.norm() - 1.0) > 1e-6) {
            add(Severity::kError, panel_loc(p), "UNIT_QUATERNION",
                "rotation quaternion norm is " + std::to_string(panel.placement.rotation.norm()));
        }

        if (static_cast<int>(panel.stitch_tags.size()) != n) {
            add(Severity::kError, panel_loc(p), "TAG_COUNT",
                "stitch_tags has " + std::to_string(panel.stitch_tags.size()) + " entries for " +
                    std::to_string(n) + " edges");
        }
        if (static_cast<int>(panel.stitch_flags.size()) != n) {
            add(Severity::kError, panel_loc(p), "FLAG_COUNT",
                "stitch_flags has " + std::to_string(panel.stitch_flags.size()) + " entries for " +
                    std::to_string(n) + " edges");
        }

        const int m = static_cast<int>(std::min(panel.stitch_tags.size(), panel.stitch_flags.size()));
        for (int e = 0; e < m; ++e) {
            const int flag = panel.stitch_flags[e];
            const Vec3& tag = panel.stitch_tags[e];
            if (flag != 0 && flag != 1) {
                add(Severity::kError, edge_loc(p, e), "FLAG_VALUE",
                    "stitch flag must be 0 or 1, got " + std::to_string(flag));
            }
            if (!finite3(tag)) {
                add(Severity::kError, edge_loc(p, e), "NONFINITE_TAG", "stitch tag is non-finite");
            } else {
                if (flag == 0 && !(tag == Vec3{})) {
                    add(Severity::kError, edge_loc(p, e), "FLAG_TAG_MISMATCH",
                        "free edge must carry the zero tag");
                }
                if (tag.x < -1e-9 || tag.x > 1.0 + 1e-9 || tag.y < -1e-9 || tag.y > 1.0 + 1e-9 ||
                    tag.z < -1e-9 || tag.z > 1.0 + 1e-9) {
                    add(Severity::kWarning, edge_loc(p, e), "TAG_RANGE",
                        "stitch tag lies outside normalized [0,1] range");
                }
            }
        }

        if (n >= 3) {
            bool all_finite = true;
            for (const auto& e : panel.edges) all_finite = all_finite && finite2(e.start);
            if (all_finite && polygon_signed_area(reconstruct_vertices(panel)) < 0.0) {
                add(Severity::kWarning, panel_loc(p), "CW_WINDING",
                    "panel winds clockwise; counterclockwise expected");
            }
        }
    }

    // Stitch list checks: ranges, self-stitches, one stitch per edge.
    std::map<EdgeRef, int> uses;
    for (size_t s = 0; s < pattern.stitches.size(); ++s) {
        const Stitch& st = pattern.stitches[s];
        const std::string loc = "stitch " + std::to_string(s);
        bool in_range = true;
        for (const EdgeRef& r : {st.a, st.b}) {
            if (r.panel < 0 || r.panel >= pattern.panel_count() || r.edge < 0 ||
                r.edge >= pattern.panels[r.panel].edge_count()) {
                add(Severity::kError, loc, "STITCH_RANGE", "stitch references a missing edge");
                in_range = false;
            }
        }
        if (!in_range) continue;
        if (st.a == st.b) {
            add(Severity::kError, loc, "STITCH_SELF", "stitch joins an edge to itself");
            continue;
        }
        for (const EdgeRef& r : {st.a, st.b}) {
            if (++uses[r] == 2) {
                add(Severity::kError, loc, "STITCH_DUP",
                    "edge (" + std::to_string(r.panel) + "," + std::to_string(r.edge) +
                        ") appears in more than one stitch");
            }
        }
    }

    // Flags must agree with the stitch list: flag 1 iff the edge is stitched.
    for (int p = 0; p < pattern.panel_count(); ++p) {
        const Panel& panel = pattern.panels[p];
        const int m = static_cast<int>(panel.stitch_flags.size());
        for (int e = 0; e < m && e < panel.edge_count(); ++e) {
            const bool stitched = uses.count({p, e}) > 0;
            const bool flagged = panel.stitch_flags[e] == 1;
            if (stitched != flagged) {
                add(Severity::kError, edge_loc(p, e), "FLAG_STITCH_CONSISTENCY",
                    stitched ? "stitched edge has flag 0" : "flagged edge appears in no stitch");
            }
        }
    }

    return report;
}

} // namespace sewgen
