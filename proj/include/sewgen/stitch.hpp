#pragma once

#include <optional>
#include <vector>

#include "sewgen/pattern.hpp"

namespace sewgen {

struct StitchMatchConfig {
    // Maximum tag distance for a match, in normalized tag units.
    double tau = 0.05;
};

// Componentwise extrema used to map raw 3D edge midpoints into [0,1]^3 tags.
// A channel with max == min normalizes with range 1 (degenerate-channel rule).
struct TagStats {
    Vec3 min;
    Vec3 max;
};

// Extrema over all 3D edge midpoints of the pattern.
TagStats compute_tag_stats(const Pattern& pattern);

Vec3 normalize_tag(const Vec3& raw, const TagStats& stats);

// Populates stitch_tags/stitch_flags from the stitch list. Both edges of a
// stitch share one tag: the mean of their 3D midpoints, min-max normalized
// into [0,1]^3 with `stats` (the pattern's own midpoint extrema when absent).
// Free edges get the zero tag and flag 0. Throws InvalidStitchGraphError if
// any edge appears in more than one stitch.
Pattern assign_stitch_tags(const Pattern& pattern, const std::optional<TagStats>& stats = std::nullopt);

struct StitchRecovery {
    std::vector<Stitch> stitches;
    // Flagged edges left without a partner within tau; warnings, not errors.
    std::vector<EdgeRef> unmatched;
};

// Rebuilds the stitch list from tags and flags: repeatedly match the globally
// closest unmatched pair of flagged edges while the tag distance is <= tau.
// Ties break on lowest (panel, edge) lexicographic order, so the result does
// not depend on panel enumeration order.
StitchRecovery recover_stitches(const Pattern& pattern, const StitchMatchConfig& cfg = {});

} // namespace sewgen
