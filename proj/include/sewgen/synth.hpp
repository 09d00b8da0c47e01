#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sewgen/pattern.hpp"

namespace sewgen {

enum class TemplateKind { kSkirt2Panel, kSleevelessDress, kTee, kPants };

const char* template_kind_name(TemplateKind k);
TemplateKind template_kind_from_name(const std::string& name);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

// Parametric garment template: named parameter ranges in centimeters plus the
// probability of drawing the curved-hem variant. Captions come from a fixed
// per-kind grammar over quantized parameter bins.
struct TemplateSpec {
    TemplateKind kind = TemplateKind::kSkirt2Panel;
    std::map<std::string, Interval> ranges;
    double curved_prob = 0.35;
};

TemplateSpec standard_template(TemplateKind kind);
std::vector<TemplateSpec> all_templates();

// Deterministic in (spec, seed). The returned pattern carries its caption,
// has stitch tags/flags populated and passes validate_pattern.
Pattern synth_pattern(const TemplateSpec& spec, uint64_t seed);

struct ManifestItem {
    std::string file;
    std::string caption;
    std::string template_name;
    uint64_t seed = 0;
    std::string split; // "train" | "val"
};

struct Manifest {
    std::vector<ManifestItem> items;
};

std::string manifest_to_json_string(const Manifest& m);
Manifest manifest_from_json_string(const std::string& text);
Manifest load_manifest(const std::string& dir);

// Writes n_per_spec pattern JSON files per template plus manifest.json into
// out_dir. Roughly 10% of each template's items (exactly n/10) go to the val
// split, chosen by ranking a hash of each item seed so the split is stable
// under regeneration.
Manifest build_dataset(const std::vector<TemplateSpec>& specs, int n_per_spec, uint64_t seed,
                       const std::string& out_dir);

} // namespace sewgen
