#pragma once

#include <string>

#include "sewgen/pattern.hpp"

namespace sewgen {

// Pattern JSON schema (UTF-8, exact field names):
// {"panels":[{"edges":[{"start":[x,y],"control":[cx,cy]},...],
//             "rotation":[w,x,y,z],"translation":[tx,ty,tz],
//             "stitch_tags":[[a,b,c],...],"stitch_flags":[0|1,...]},...],
//  "stitches":[{"a":[p,e],"b":[p,e]},...],"caption":"..."}
// stitch_tags/stitch_flags are optional on input (recomputed from the stitch
// list when any panel lacks them) and always present on output.

std::string pattern_to_json_string(const Pattern& pattern);
Pattern pattern_from_json_string(const std::string& text);

void save_pattern(const Pattern& pattern, const std::string& path);
Pattern load_pattern(const std::string& path);

} // namespace sewgen
