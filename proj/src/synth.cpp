#include "sewgen/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "sewgen/errors.hpp"
#include "sewgen/pattern_io.hpp"
#include "sewgen/rng.hpp"
#include "sewgen/stitch.hpp"

namespace sewgen {

namespace {

constexpr double kHalfSqrt2 = 0.7071067811865476;

// 180 degrees about y: used for back panels so they face away from the body.
const Quat kFlipY{0.0, 0.0, 1.0, 0.0};

Edge straight_edge(const Vec2& from, const Vec2& to) {
    return {from, {(from.x + to.x) * 0.5, (from.y + to.y) * 0.5}};
}

Edge curved_edge(const Vec2& from, const Vec2& to, double sag) {
    return {from, {(from.x + to.x) * 0.5, (from.y + to.y) * 0.5 - sag}};
}

// Closed polygon from CCW vertices; edge j runs from vertex j to vertex j+1.
std::vector<Edge> polygon_edges(const std::vector<Vec2>& verts) {
    std::vector<Edge> edges;
    edges.reserve(verts.size());
    for (size_t i = 0; i < verts.size(); ++i) {
        edges.push_back(straight_edge(verts[i], verts[(i + 1) % verts.size()]));
    }
    return edges;
}

double draw(const TemplateSpec& spec, Rng& rng, const std::string& name) {
    auto it = spec.ranges.find(name);
    if (it == spec.ranges.end()) {
        throw ConfigError("synth_pattern: template is missing range \"" + name + "\"");
    }
    if (!(it->second.hi >= it->second.lo)) {
        throw ConfigError("synth_pattern: empty range \"" + name + "\"");
    }
    return rng.uniform(it->second.lo, it->second.hi);
}

Pattern make_skirt(const TemplateSpec& spec, Rng& rng) {
    const double waist = draw(spec, rng, "waist");
    const double hem = draw(spec, rng, "hem");
    const double length = draw(spec, rng, "length");
    const bool curved = rng.uniform() < spec.curved_prob;

    Panel front;
    const std::vector<Vec2> verts{
        {-hem / 2, 0}, {hem / 2, 0}, {waist / 2, length}, {-waist / 2, length}};
    front.edges = polygon_edges(verts);
    if (curved) front.edges[0] = curved_edge(verts[0], verts[1], 0.08 * hem);
    front.placement = {Quat::identity(), {0, 40, 8}};

    Panel back = front;
    back.placement = {kFlipY, {0, 40, -8}};

    Pattern p;
    p.panels = {front, back};
    p.stitches = {Stitch{{0, 1}, {1, 3}}, Stitch{{0, 3}, {1, 1}}};

    const char* len_bin = length < 55 ? "short" : length < 68 ? "knee-length" : "long";
    const char* fit_bin = hem / waist < 1.5 ? "slim" : "flared";
    p.caption = std::string("a ") + len_bin + " " + fit_bin + " skirt" +
                (curved ? " with a curved hem" : "");
    return p;
}

Pattern make_dress(const TemplateSpec& spec, Rng& rng) {
    const double hem = draw(spec, rng, "hem");
    const double waist = draw(spec, rng, "waist");
    const double shoulder = draw(spec, rng, "shoulder");
    const double skirt_len = draw(spec, rng, "skirt_len");
    const double bodice_len = draw(spec, rng, "bodice_len");
    const bool curved = rng.uniform() < spec.curved_prob;

    const double top = skirt_len + bodice_len;
    Panel front;
    const std::vector<Vec2> verts{{-hem / 2, 0},          {hem / 2, 0},
                                  {waist / 2, skirt_len}, {shoulder / 2, top},
                                  {-shoulder / 2, top},   {-waist / 2, skirt_len}};
    front.edges = polygon_edges(verts);
    if (curved) front.edges[3] = curved_edge(verts[3], verts[4], 0.15 * shoulder);
    front.placement = {Quat::identity(), {0, 30, 9}};

    Panel back = front;
    back.placement = {kFlipY, {0, 30, -9}};

    Pattern p;
    p.panels = {front, back};
    p.stitches = {Stitch{{0, 1}, {1, 5}}, Stitch{{0, 2}, {1, 4}}, Stitch{{0, 4}, {1, 2}},
                  Stitch{{0, 5}, {1, 1}}};

    const char* len_bin = top < 72 ? "short" : top < 86 ? "knee-length" : "long";
    const char* fit_bin = hem / waist < 1.7 ? "fitted" : "flared";
    p.caption = std::string("a ") + len_bin + " " + fit_bin + " sleeveless dress" +
                (curved ? " with a scoop neckline" : "");
    return p;
}

Pattern make_tee(const TemplateSpec& spec, Rng& rng) {
    const double width = draw(spec, rng, "width");
    const double shoulder_ratio = draw(spec, rng, "shoulder_ratio");
    const double body_len = draw(spec, rng, "body_len");
    const double sleeve_len = draw(spec, rng, "sleeve_len");
    const double sleeve_w = draw(spec, rng, "sleeve_width");
    const bool curved = rng.uniform() < spec.curved_prob;

    const double shoulder = width * shoulder_ratio;
    Panel front;
    const std::vector<Vec2> body_verts{{-width / 2, 0},
                                       {width / 2, 0},
                                       {width / 2, 0.65 * body_len},
                                       {shoulder / 2, body_len},
                                       {-shoulder / 2, body_len},
                                       {-width / 2, 0.65 * body_len}};
    front.edges = polygon_edges(body_verts);
    if (curved) front.edges[0] = curved_edge(body_verts[0], body_verts[1], 0.06 * width);
    front.placement = {Quat::identity(), {0, 70, 9}};

    Panel back = front;
    back.placement = {kFlipY, {0, 70, -9}};

    const double cap = 0.8 * sleeve_w;
    const std::vector<Vec2> sleeve_verts{
        {-sleeve_w / 2, 0}, {sleeve_w / 2, 0}, {cap / 2, sleeve_len}, {-cap / 2, sleeve_len}};
    Panel sleeve_r;
    sleeve_r.edges = polygon_edges(sleeve_verts);
    // -90 degrees about z: the sleeve axis points along +x.
    sleeve_r.placement = {{kHalfSqrt2, 0, 0, -kHalfSqrt2},
                          {width / 2 + sleeve_len / 2 + 6, 70 + 0.8 * body_len, 0}};
    Panel sleeve_l;
    sleeve_l.edges = polygon_edges(sleeve_verts);
    sleeve_l.placement = {{kHalfSqrt2, 0, 0, kHalfSqrt2},
                          {-(width / 2 + sleeve_len / 2 + 6), 70 + 0.8 * body_len, 0}};

    Pattern p;
    p.panels = {front, back, sleeve_l, sleeve_r};
    p.stitches = {Stitch{{0, 1}, {1, 5}}, Stitch{{0, 5}, {1, 1}}, Stitch{{0, 3}, {1, 3}},
                  Stitch{{2, 2}, {0, 4}}, Stitch{{3, 2}, {0, 2}}};

    const char* sleeve_bin = sleeve_len < 25 ? "short" : "elbow-length";
    const char* fit_bin = width < 50 ? "fitted" : "wide";
    p.caption = std::string("a ") + fit_bin + " tee with " + sleeve_bin + " sleeves" +
                (curved ? " and a curved hem" : "");
    return p;
}

Pattern make_pants(const TemplateSpec& spec, Rng& rng) {
    const double top_w = draw(spec, rng, "top_width");
    const double hem_w = draw(spec, rng, "hem_width");
    const double length = draw(spec, rng, "length");
    const bool curved = rng.uniform() < spec.curved_prob;

    const std::vector<Vec2> verts{
        {-hem_w / 2, 0}, {hem_w / 2, 0}, {top_w / 2, length}, {-top_w / 2, length}};
    std::vector<Edge> leg_edges = polygon_edges(verts);
    if (curved) leg_edges[0] = curved_edge(verts[0], verts[1], 0.1 * hem_w);

    const double off = top_w / 2 + 12;
    Panel front_l, front_r, back_l, back_r;
    front_l.edges = front_r.edges = back_l.edges = back_r.edges = leg_edges;
    front_l.placement = {Quat::identity(), {-off, 5, 8}};
    front_r.placement = {Quat::identity(), {off, 5, 8}};
    back_l.placement = {kFlipY, {-off, 5, -8}};
    back_r.placement = {kFlipY, {off, 5, -8}};

    Pattern p;
    p.panels = {front_l, front_r, back_l, back_r};
    p.stitches = {Stitch{{0, 1}, {2, 3}}, Stitch{{0, 3}, {2, 1}}, Stitch{{1, 1}, {3, 3}},
                  Stitch{{1, 3}, {3, 1}}};

    const char* len_bin = length < 75 ? "cropped" : "full-length";
    const char* fit_bin = hem_w / top_w < 0.72 ? "tapered" : "straight";
    p.caption = std::string("a pair of ") + len_bin + " " + fit_bin + " pants" +
                (curved ? " with curved hems" : "");
    return p;
}

} // namespace

const char* template_kind_name(TemplateKind k) {
    switch (k) {
        case TemplateKind::kSkirt2Panel: return "skirt_2panel";
        case TemplateKind::kSleevelessDress: return "sleeveless_dress";
        case TemplateKind::kTee: return "tee";
        case TemplateKind::kPants: return "pants";
    }
    return "?";
}

TemplateKind template_kind_from_name(const std::string& name) {
    if (name == "skirt_2panel") return TemplateKind::kSkirt2Panel;
    if (name == "sleeveless_dress") return TemplateKind::kSleevelessDress;
    if (name == "tee") return TemplateKind::kTee;
    if (name == "pants") return TemplateKind::kPants;
    throw ConfigError("unknown template kind: " + name);
}

TemplateSpec standard_template(TemplateKind kind) {
    TemplateSpec spec;
    spec.kind = kind;
    switch (kind) {
        case TemplateKind::kSkirt2Panel:
            spec.ranges = {{"waist", {30, 50}}, {"hem", {50, 85}}, {"length", {40, 80}}};
            break;
        case TemplateKind::kSleevelessDress:
            spec.ranges = {{"hem", {55, 95}},
                           {"waist", {32, 48}},
                           {"shoulder", {26, 40}},
                           {"skirt_len", {35, 60}},
                           {"bodice_len", {25, 40}}};
            break;
        case TemplateKind::kTee:
            spec.ranges = {{"width", {40, 60}},
                           {"shoulder_ratio", {0.70, 0.92}},
                           {"body_len", {50, 75}},
                           {"sleeve_len", {15, 35}},
                           {"sleeve_width", {16, 26}}};
            break;
        case TemplateKind::kPants:
            spec.ranges = {
                {"top_width", {22, 32}}, {"hem_width", {15, 24}}, {"length", {60, 95}}};
            break;
    }
    return spec;
}

std::vector<TemplateSpec> all_templates() {
    return {standard_template(TemplateKind::kSkirt2Panel),
            standard_template(TemplateKind::kSleevelessDress),
            standard_template(TemplateKind::kTee), standard_template(TemplateKind::kPants)};
}

Pattern synth_pattern(const TemplateSpec& spec, uint64_t seed) {
    Rng rng(seed);
    Pattern p;
    switch (spec.kind) {
        case TemplateKind::kSkirt2Panel: p = make_skirt(spec, rng); break;
        case TemplateKind::kSleevelessDress: p = make_dress(spec, rng); break;
        case TemplateKind::kTee: p = make_tee(spec, rng); break;
        case TemplateKind::kPants: p = make_pants(spec, rng); break;
    }
    const auto caption = p.caption;
    p = assign_stitch_tags(p);
    p.caption = caption;
    return p;
}

std::string manifest_to_json_string(const Manifest& m) {
    nlohmann::json j;
    j["items"] = nlohmann::json::array();
    for (const ManifestItem& it : m.items) {
        j["items"].push_back({{"file", it.file},
                              {"caption", it.caption},
                              {"template", it.template_name},
                              {"seed", it.seed},
                              {"split", it.split}});
    }
    return j.dump(2);
}

Manifest manifest_from_json_string(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("manifest: bad JSON: ") + e.what());
    }
    Manifest m;
    try {
        for (const auto& ji : j.at("items")) {
            m.items.push_back({ji.at("file").get<std::string>(), ji.at("caption").get<std::string>(),
                               ji.at("template").get<std::string>(), ji.at("seed").get<uint64_t>(),
                               ji.at("split").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("manifest: schema mismatch: ") + e.what());
    }
    return m;
}

Manifest load_manifest(const std::string& dir) {
    const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_manifest: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return manifest_from_json_string(buf.str());
}

Manifest build_dataset(const std::vector<TemplateSpec>& specs, int n_per_spec, uint64_t seed,
                       const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("build_dataset: cannot create " + out_dir + ": " + ec.message());

    Manifest manifest;
    for (size_t s = 0; s < specs.size(); ++s) {
        const TemplateSpec& spec = specs[s];
        const std::string tname = template_kind_name(spec.kind);

        std::vector<uint64_t> item_seeds(n_per_spec);
        for (int k = 0; k < n_per_spec; ++k) {
            uint64_t st = seed + 0x517cc1b727220a95ULL * (s + 1) + static_cast<uint64_t>(k);
            item_seeds[k] = splitmix64(st);
        }

        // Val split: the n/10 items with the smallest seed hash.
        std::vector<int> order(n_per_spec);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const uint64_t ha = hash_u64(item_seeds[a]);
            const uint64_t hb = hash_u64(item_seeds[b]);
            return ha != hb ? ha < hb : item_seeds[a] < item_seeds[b];
        });
        const int n_val = n_per_spec / 10;
        std::vector<bool> is_val(n_per_spec, false);
        for (int i = 0; i < n_val; ++i) is_val[order[i]] = true;

        for (int k = 0; k < n_per_spec; ++k) {
            const Pattern p = synth_pattern(spec, item_seeds[k]);
            char idx[16];
            std::snprintf(idx, sizeof(idx), "%04d", k);
            const std::string file = tname + "_" + idx + ".json";
            save_pattern(p, (fs::path(out_dir) / file).string());
            manifest.items.push_back(
                {file, p.caption.value_or(""), tname, item_seeds[k], is_val[k] ? "val" : "train"});
        }
    }

    std::ofstream out(fs::path(out_dir) / "manifest.json", std::ios::binary);
    if (!out) throw IoError("build_dataset: cannot write manifest.json");
    out << manifest_to_json_string(manifest) << "\n";
    if (!out.good()) throw IoError("build_dataset: manifest write failed");
    return manifest;
}

} // namespace sewgen
