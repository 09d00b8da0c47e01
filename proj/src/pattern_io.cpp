#include "sewgen/pattern_io.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "sewgen/errors.hpp"
#include "sewgen/stitch.hpp"

namespace sewgen {

using nlohmann::json;

std::string pattern_to_json_string(const Pattern& pattern) {
    json j;
    j["panels"] = json::array();
    for (const Panel& panel : pattern.panels) {
        json jp;
        jp["edges"] = json::array();
        for (const Edge& e : panel.edges) {
            jp["edges"].push_back({{"start", {e.start.x, e.start.y}},
                                   {"control", {e.control.x, e.control.y}}});
        }
        const Quat& q = panel.placement.rotation;
        const Vec3& t = panel.placement.translation;
        jp["rotation"] = {q.w, q.x, q.y, q.z};
        jp["translation"] = {t.x, t.y, t.z};
        jp["stitch_tags"] = json::array();
        for (const Vec3& tag : panel.stitch_tags) {
            jp["stitch_tags"].push_back({tag.x, tag.y, tag.z});
        }
        jp["stitch_flags"] = panel.stitch_flags;
        j["panels"].push_back(std::move(jp));
    }
    j["stitches"] = json::array();
    for (const Stitch& s : pattern.stitches) {
        j["stitches"].push_back({{"a", {s.a.panel, s.a.edge}}, {"b", {s.b.panel, s.b.edge}}});
    }
    if (pattern.caption) {
        j["caption"] = *pattern.caption;
    }
    return j.dump(2);
}

Pattern pattern_from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("pattern: bad JSON: ") + e.what());
    }

    Pattern pattern;
    bool tags_missing = false;
    try {
        for (const auto& jp : j.at("panels")) {
            Panel panel;
            for (const auto& je : jp.at("edges")) {
                Edge e;
                e.start = {je.at("start").at(0).get<double>(), je.at("start").at(1).get<double>()};
                e.control = {je.at("control").at(0).get<double>(), je.at("control").at(1).get<double>()};
                panel.edges.push_back(e);
            }
            const auto& jr = jp.at("rotation");
            panel.placement.rotation = {jr.at(0).get<double>(), jr.at(1).get<double>(),
                                        jr.at(2).get<double>(), jr.at(3).get<double>()};
            const auto& jt = jp.at("translation");
            panel.placement.translation = {jt.at(0).get<double>(), jt.at(1).get<double>(),
                                           jt.at(2).get<double>()};
            if (jp.contains("stitch_tags") && jp.contains("stitch_flags")) {
                for (const auto& jtag : jp.at("stitch_tags")) {
                    panel.stitch_tags.push_back(
                        {jtag.at(0).get<double>(), jtag.at(1).get<double>(), jtag.at(2).get<double>()});
                }
                for (const auto& jf : jp.at("stitch_flags")) {
                    panel.stitch_flags.push_back(jf.get<int>());
                }
            } else {
                tags_missing = true;
            }
            pattern.panels.push_back(std::move(panel));
        }
        if (j.contains("stitches")) {
            for (const auto& js : j.at("stitches")) {
                EdgeRef a{js.at("a").at(0).get<int>(), js.at("a").at(1).get<int>()};
                EdgeRef b{js.at("b").at(0).get<int>(), js.at("b").at(1).get<int>()};
                pattern.stitches.emplace_back(a, b);
            }
        }
        if (j.contains("caption")) {
            pattern.caption = j.at("caption").get<std::string>();
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("pattern: schema mismatch: ") + e.what());
    }

    if (tags_missing) {
        pattern = assign_stitch_tags(pattern);
    }
    return pattern;
}

void save_pattern(const Pattern& pattern, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_pattern: cannot open " + path + " for writing");
    out << pattern_to_json_string(pattern) << "\n";
    if (!out.good()) throw IoError("save_pattern: write to " + path + " failed");
}

Pattern load_pattern(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_pattern: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return pattern_from_json_string(buf.str());
}

} // namespace sewgen
