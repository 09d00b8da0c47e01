#include "sewgen/stitch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "sewgen/errors.hpp"

namespace sewgen {

namespace {

double guarded_range(double lo, double hi) {
    const double r = hi - lo;
    return r == 0.0 ? 1.0 : r;
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

} // namespace

TagStats compute_tag_stats(const Pattern& pattern) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    TagStats s{{inf, inf, inf}, {-inf, -inf, -inf}};
    bool any = false;
    for (const Panel& panel : pattern.panels) {
        for (int e = 0; e < panel.edge_count(); ++e) {
            const Vec3 m = edge_midpoint_3d(panel, e);
            s.min = {std::min(s.min.x, m.x), std::min(s.min.y, m.y), std::min(s.min.z, m.z)};
            s.max = {std::max(s.max.x, m.x), std::max(s.max.y, m.y), std::max(s.max.z, m.z)};
            any = true;
        }
    }
    if (!any) {
        return {{0, 0, 0}, {1, 1, 1}};
    }
    return s;
}

Vec3 normalize_tag(const Vec3& raw, const TagStats& stats) {
    return {clamp01((raw.x - stats.min.x) / guarded_range(stats.min.x, stats.max.x)),
            clamp01((raw.y - stats.min.y) / guarded_range(stats.min.y, stats.max.y)),
            clamp01((raw.z - stats.min.z) / guarded_range(stats.min.z, stats.max.z))};
}

Pattern assign_stitch_tags(const Pattern& pattern, const std::optional<TagStats>& stats) {
    Pattern out = pattern;
    const TagStats st = stats ? *stats : compute_tag_stats(pattern);

    for (Panel& panel : out.panels) {
        panel.stitch_tags.assign(panel.edges.size(), Vec3{});
        panel.stitch_flags.assign(panel.edges.size(), 0);
    }

    std::map<EdgeRef, int> uses;
    for (const Stitch& stitch : out.stitches) {
        for (const EdgeRef& r : {stitch.a, stitch.b}) {
            if (r.panel < 0 || r.panel >= out.panel_count() || r.edge < 0 ||
                r.edge >= out.panels[r.panel].edge_count()) {
                throw InvalidStitchGraphError("assign_stitch_tags: stitch references a missing edge");
            }
            if (++uses[r] > 1) {
                throw InvalidStitchGraphError("assign_stitch_tags: edge appears in more than one stitch");
            }
        }
        const Vec3 ma = edge_midpoint_3d(out.panels[stitch.a.panel], stitch.a.edge);
        const Vec3 mb = edge_midpoint_3d(out.panels[stitch.b.panel], stitch.b.edge);
        const Vec3 tag = normalize_tag((ma + mb) * 0.5, st);
        for (const EdgeRef& r : {stitch.a, stitch.b}) {
            out.panels[r.panel].stitch_tags[r.edge] = tag;
            out.panels[r.panel].stitch_flags[r.edge] = 1;
        }
    }
    return out;
}

StitchRecovery recover_stitches(const Pattern& pattern, const StitchMatchConfig& cfg) {
    struct Flagged {
        EdgeRef ref;
        Vec3 tag;
    };
    std::vector<Flagged> flagged;
    for (int p = 0; p < pattern.panel_count(); ++p) {
        const Panel& panel = pattern.panels[p];
        if (panel.stitch_flags.size() != panel.edges.size() ||
            panel.stitch_tags.size() != panel.edges.size()) {
            throw Error("recover_stitches: stitch tags/flags are not populated");
        }
        for (int e = 0; e < panel.edge_count(); ++e) {
            if (panel.stitch_flags[e] == 1) {
                flagged.push_back({{p, e}, panel.stitch_tags[e]});
            }
        }
    }

    struct Candidate {
        double dist;
        int i;
        int j; // indices into `flagged`, i < j and flagged sorted by ref
    };
    std::vector<Candidate> candidates;
    // `flagged` is built panel-major so it is already (panel, edge) sorted.
    for (size_t i = 0; i < flagged.size(); ++i) {
        for (size_t j = i + 1; j < flagged.size(); ++j) {
            const double d = distance(flagged[i].tag, flagged[j].tag);
            if (d <= cfg.tau) {
                candidates.push_back({d, static_cast<int>(i), static_cast<int>(j)});
            }
        }
    }
    std::sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (flagged[a.i].ref != flagged[b.i].ref) return flagged[a.i].ref < flagged[b.i].ref;
        return flagged[a.j].ref < flagged[b.j].ref;
    });

    std::vector<bool> used(flagged.size(), false);
    StitchRecovery out;
    for (const Candidate& c : candidates) {
        if (used[c.i] || used[c.j]) continue;
        used[c.i] = used[c.j] = true;
        out.stitches.emplace_back(flagged[c.i].ref, flagged[c.j].ref);
    }
    std::sort(out.stitches.begin(), out.stitches.end());
    for (size_t i = 0; i < flagged.size(); ++i) {
        if (!used[i]) out.unmatched.push_back(flagged[i].ref);
    }
    return out;
}

} // namespace sewgen
