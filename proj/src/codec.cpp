#include "sewgen/codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "sewgen/errors.hpp"

namespace sewgen {

namespace {

double guarded(double range) { return range == 0.0 ? 1.0 : range; }

// id = quantized value + C + special offset
int32_t to_id(int32_t q, const QuantConfig& cfg) { return q + cfg.c_offset + kSpecialOffset; }
double from_id(int32_t id, const QuantConfig& cfg) {
    return static_cast<double>(id - kSpecialOffset - cfg.c_offset);
}

} // namespace

int QuantConfig::vocab_size() const {
    const int max_scale = std::max({static_cast<int>(std::round(c_edge * kEdgeClamp)), c_rot, c_trans, c_stitch});
    return kSpecialOffset + c_offset + max_scale + 1;
}

void QuantConfig::validate() const {
    if (c_edge <= 0 || c_rot <= 0 || c_trans <= 0 || c_stitch <= 0 || c_offset <= 0 ||
        k_max_edges <= 0 || max_tokens <= 0) {
        throw ConfigError("QuantConfig: all constants must be positive");
    }
    const int max_scale = std::max({static_cast<int>(std::round(c_edge * kEdgeClamp)), c_rot, c_trans, c_stitch});
    if (c_offset < max_scale) {
        throw ConfigError("QuantConfig: C offset too small, tokens could go negative");
    }
    if (max_tokens < 2 + slots_per_panel()) {
        throw ConfigError("QuantConfig: max_tokens cannot fit a single panel");
    }
}

const char* param_class_name(ParamClass c) {
    switch (c) {
        case ParamClass::kEdgeCoord: return "edge_coord";
        case ParamClass::kRotation: return "rotation";
        case ParamClass::kTranslation: return "translation";
        case ParamClass::kStitchTag: return "stitch_tag";
        case ParamClass::kStitchFlag: return "stitch_flag";
        case ParamClass::kSpecial: return "special";
    }
    return "?";
}

NormStats fit_stats(const std::vector<Pattern>& patterns) {
    if (patterns.empty()) {
        throw EmptyDatasetError("fit_stats: empty pattern collection");
    }

    NormStats stats;
    std::array<double, 4> sum{}, sumsq_dev{};
    size_t n_edges = 0;

    for (const Pattern& p : patterns) {
        for (const Panel& panel : p.panels) {
            if (panel.edges.empty()) {
                throw EmptyDatasetError("fit_stats: panel with no edges");
            }
            for (const Edge& e : panel.edges) {
                sum[0] += e.start.x;
                sum[1] += e.start.y;
                sum[2] += e.control.x;
                sum[3] += e.control.y;
                ++n_edges;
            }
        }
    }
    if (n_edges == 0) {
        throw EmptyDatasetError("fit_stats: no edges in collection");
    }
    for (int c = 0; c < 4; ++c) stats.edge_mean[c] = sum[c] / static_cast<double>(n_edges);

    constexpr double inf = std::numeric_limits<double>::infinity();
    stats.trans_min = {inf, inf, inf};
    stats.trans_max = {-inf, -inf, -inf};
    stats.tag_min = {inf, inf, inf};
    stats.tag_max = {-inf, -inf, -inf};

    auto take_min = [](Vec3& lo, const Vec3& v) {
        lo = {std::min(lo.x, v.x), std::min(lo.y, v.y), std::min(lo.z, v.z)};
    };
    auto take_max = [](Vec3& hi, const Vec3& v) {
        hi = {std::max(hi.x, v.x), std::max(hi.y, v.y), std::max(hi.z, v.z)};
    };

    for (const Pattern& p : patterns) {
        for (const Panel& panel : p.panels) {
            for (const Edge& e : panel.edges) {
                const std::array<double, 4> vals{e.start.x, e.start.y, e.control.x, e.control.y};
                for (int c = 0; c < 4; ++c) {
                    const double d = vals[c] - stats.edge_mean[c];
                    sumsq_dev[c] += d * d;
                }
            }
            take_min(stats.trans_min, panel.placement.translation);
            take_max(stats.trans_max, panel.placement.translation);
            for (int e = 0; e < panel.edge_count(); ++e) {
                const Vec3 m = edge_midpoint_3d(panel, e);
                take_min(stats.tag_min, m);
                take_max(stats.tag_max, m);
            }
        }
    }
    for (int c = 0; c < 4; ++c) {
        const double var = sumsq_dev[c] / static_cast<double>(n_edges);
        const double sd = std::sqrt(var);
        stats.edge_std[c] = sd == 0.0 ? 1.0 : sd;
    }
    return stats;
}

int32_t quantize_value(double x, int scale, double max_abs) {
    if (!std::isfinite(x)) {
        throw Error("quantize_value: non-finite input");
    }
    const int32_t bound = static_cast<int32_t>(std::round(scale * max_abs));
    const double scaled = std::round(scale * x); // round halves away from zero
    return std::clamp(static_cast<int32_t>(scaled), -bound, bound);
}

ParamClass param_class_of(int slot_in_panel, int k_max_edges) {
    const int k = k_max_edges;
    if (slot_in_panel < 0 || slot_in_panel >= 8 * k + 7) {
        throw std::out_of_range("param_class_of: slot out of range");
    }
    if (slot_in_panel < 4 * k) return ParamClass::kEdgeCoord;
    if (slot_in_panel < 4 * k + 4) return ParamClass::kRotation;
    if (slot_in_panel < 4 * k + 7) return ParamClass::kTranslation;
    if (slot_in_panel < 7 * k + 7) return ParamClass::kStitchTag;
    return ParamClass::kStitchFlag;
}

std::vector<TokenMeta> positional_meta(const std::vector<int32_t>& ids, int k_max_edges) {
    const int spp = 8 * k_max_edges + 7;
    std::vector<TokenMeta> meta(ids.size());
    for (size_t pos = 0; pos < ids.size(); ++pos) {
        if (pos == 0 || ids[pos] < kSpecialOffset) {
            meta[pos] = {0, ParamClass::kSpecial};
            continue;
        }
        const int interior = static_cast<int>(pos) - 1;
        meta[pos] = {static_cast<int32_t>(interior / spp + 1), param_class_of(interior % spp, k_max_edges)};
    }
    return meta;
}

TokenSeq encode(const Pattern& pattern, const NormStats& stats, const QuantConfig& cfg) {
    cfg.validate();
    const int k = cfg.k_max_edges;
    const int n_panels = pattern.panel_count();
    const int total = 2 + cfg.slots_per_panel() * n_panels;
    if (total > cfg.max_tokens) {
        throw SequenceTooLongError("encode: sequence of " + std::to_string(total) +
                                   " tokens exceeds the cap of " + std::to_string(cfg.max_tokens));
    }

    TokenSeq seq;
    seq.vocab_size = cfg.vocab_size();
    seq.ids.reserve(total);
    seq.meta.reserve(total);

    auto push = [&](int32_t id, int panel, ParamClass cls) {
        seq.ids.push_back(id);
        seq.meta.push_back({static_cast<int32_t>(panel), cls});
    };

    push(kStartId, 0, ParamClass::kSpecial);

    for (int p = 0; p < n_panels; ++p) {
        const Panel& panel = pattern.panels[p];
        const int n = panel.edge_count();
        if (n > k) {
            throw PanelTooLargeError("encode: panel " + std::to_string(p) + " has " +
                                     std::to_string(n) + " edges, K = " + std::to_string(k));
        }
        if (static_cast<int>(panel.stitch_tags.size()) != n ||
            static_cast<int>(panel.stitch_flags.size()) != n) {
            throw Error("encode: panel " + std::to_string(p) + " is missing stitch tags/flags");
        }
        const int pano = p + 1;

        // 4K edge coordinate tokens, standardized then clamped; padded slots
        // encode standardized zero.
        for (int j = 0; j < k; ++j) {
            std::array<double, 4> vals{0.0, 0.0, 0.0, 0.0};
            if (j < n) {
                vals = {panel.edges[j].start.x, panel.edges[j].start.y, panel.edges[j].control.x,
                        panel.edges[j].control.y};
            }
            for (int c = 0; c < 4; ++c) {
                double s = 0.0;
                if (j < n) {
                    s = (vals[c] - stats.edge_mean[c]) / stats.edge_std[c];
                    s = std::clamp(s, -kEdgeClamp, kEdgeClamp);
                }
                push(to_id(quantize_value(s, cfg.c_edge, kEdgeClamp), cfg), pano, ParamClass::kEdgeCoord);
            }
        }

        // 4 rotation tokens, components mapped (q + 1) / 2 into [0,1].
        const Quat& q = panel.placement.rotation;
        for (double comp : {q.w, q.x, q.y, q.z}) {
            push(to_id(quantize_value((comp + 1.0) * 0.5, cfg.c_rot, 1.0), cfg), pano, ParamClass::kRotation);
        }

        // 3 translation tokens, min-max normalized with the dataset extrema.
        const Vec3& t = panel.placement.translation;
        const std::array<double, 3> tv{t.x, t.y, t.z};
        const std::array<double, 3> tmin{stats.trans_min.x, stats.trans_min.y, stats.trans_min.z};
        const std::array<double, 3> tmax{stats.trans_max.x, stats.trans_max.y, stats.trans_max.z};
        for (int c = 0; c < 3; ++c) {
            const double nrm = (tv[c] - tmin[c]) / guarded(tmax[c] - tmin[c]);
            push(to_id(quantize_value(nrm, cfg.c_trans, 1.0), cfg), pano, ParamClass::kTranslation);
        }

        // 3K stitch tag tokens. Tags are stored already normalized to [0,1].
        for (int j = 0; j < k; ++j) {
            const Vec3 tag = j < n ? panel.stitch_tags[j] : Vec3{};
            for (double comp : {tag.x, tag.y, tag.z}) {
                push(to_id(quantize_value(comp, cfg.c_stitch, 1.0), cfg), pano, ParamClass::kStitchTag);
            }
        }

        // K flag tokens, 0/1 verbatim.
        for (int j = 0; j < k; ++j) {
            const int32_t flag = j < n ? panel.stitch_flags[j] : 0;
            push(to_id(flag, cfg), pano, ParamClass::kStitchFlag);
        }
    }

    push(kEndId, 0, ParamClass::kSpecial);
    return seq;
}

DecodeResult decode(const TokenSeq& tokens, const NormStats& stats, const QuantConfig& cfg,
                    const StitchMatchConfig& match) {
    cfg.validate();
    const int k = cfg.k_max_edges;
    const int spp = cfg.slots_per_panel();
    const int vocab = cfg.vocab_size();

    if (tokens.ids.empty() || tokens.ids.front() != kStartId) {
        throw MalformedSequenceError("decode: sequence does not start with START");
    }
    for (int32_t id : tokens.ids) {
        if (id < 0 || id >= vocab) {
            throw TokenOutOfRangeError("decode: token id " + std::to_string(id) +
                                       " outside vocabulary of " + std::to_string(vocab));
        }
    }

    size_t end = tokens.ids.size();
    if (end > 1 && tokens.ids.back() == kEndId) --end;
    for (size_t i = 1; i < end; ++i) {
        if (tokens.ids[i] < kSpecialOffset) {
            throw MalformedSequenceError("decode: special token id " + std::to_string(tokens.ids[i]) +
                                         " inside the sequence interior");
        }
    }

    const size_t interior = end - 1;
    if (interior % static_cast<size_t>(spp) != 0) {
        throw MalformedSequenceError("decode: interior length " + std::to_string(interior) +
                                     " is not a multiple of " + std::to_string(spp));
    }
    const int n_panels = static_cast<int>(interior) / spp;

    const int32_t zero_id = cfg.c_offset + kSpecialOffset;
    DecodeResult res;

    for (int p = 0; p < n_panels; ++p) {
        const int32_t* block = tokens.ids.data() + 1 + static_cast<size_t>(p) * spp;
        const int32_t* edge_tok = block;
        const int32_t* rot_tok = block + 4 * k;
        const int32_t* trans_tok = block + 4 * k + 4;
        const int32_t* tag_tok = block + 4 * k + 7;
        const int32_t* flag_tok = block + 7 * k + 7;

        // Trailing padded slots: all edge, tag and flag tokens encode value 0.
        int n_edges = k;
        while (n_edges > 0) {
            const int j = n_edges - 1;
            bool padded = flag_tok[j] == zero_id;
            for (int c = 0; c < 4 && padded; ++c) padded = edge_tok[4 * j + c] == zero_id;
            for (int c = 0; c < 3 && padded; ++c) padded = tag_tok[3 * j + c] == zero_id;
            if (!padded) break;
            --n_edges;
        }
        if (n_edges < 3) {
            res.warnings.push_back("panel " + std::to_string(p) +
                                   ": decodes to fewer than 3 edges, panel dropped (DegeneratePanel)");
            continue;
        }

        Panel panel;
        panel.edges.resize(n_edges);
        panel.stitch_tags.resize(n_edges);
        panel.stitch_flags.resize(n_edges);

        for (int j = 0; j < n_edges; ++j) {
            std::array<double, 4> vals{};
            for (int c = 0; c < 4; ++c) {
                const double s = from_id(edge_tok[4 * j + c], cfg) / cfg.c_edge;
                vals[c] = s * stats.edge_std[c] + stats.edge_mean[c];
            }
            panel.edges[j] = {{vals[0], vals[1]}, {vals[2], vals[3]}};
        }

        std::array<double, 4> qc{};
        for (int c = 0; c < 4; ++c) {
            qc[c] = 2.0 * (from_id(rot_tok[c], cfg) / cfg.c_rot) - 1.0;
        }
        panel.placement.rotation = normalized_or_identity({qc[0], qc[1], qc[2], qc[3]});

        const std::array<double, 3> tmin{stats.trans_min.x, stats.trans_min.y, stats.trans_min.z};
        const std::array<double, 3> tmax{stats.trans_max.x, stats.trans_max.y, stats.trans_max.z};
        std::array<double, 3> tv{};
        for (int c = 0; c < 3; ++c) {
            tv[c] = (from_id(trans_tok[c], cfg) / cfg.c_trans) * guarded(tmax[c] - tmin[c]) + tmin[c];
        }
        panel.placement.translation = {tv[0], tv[1], tv[2]};

        for (int j = 0; j < n_edges; ++j) {
            panel.stitch_tags[j] = {from_id(tag_tok[3 * j + 0], cfg) / cfg.c_stitch,
                                    from_id(tag_tok[3 * j + 1], cfg) / cfg.c_stitch,
                                    from_id(tag_tok[3 * j + 2], cfg) / cfg.c_stitch};
            panel.stitch_flags[j] = from_id(flag_tok[j], cfg) >= 0.5 ? 1 : 0;
            if (panel.stitch_flags[j] == 0) panel.stitch_tags[j] = Vec3{};
        }
        res.pattern.panels.push_back(std::move(panel));
    }

    StitchRecovery rec = recover_stitches(res.pattern, match);
    res.pattern.stitches = std::move(rec.stitches);
    for (const EdgeRef& r : rec.unmatched) {
        res.warnings.push_back("panel " + std::to_string(r.panel) + ", edge " + std::to_string(r.edge) +
                               ": flagged edge has no stitch partner within tau");
    }
    return res;
}

std::string NormStats::to_json_string() const {
    nlohmann::json j;
    j["edge_mean"] = edge_mean;
    j["edge_std"] = edge_std;
    j["trans_min"] = {trans_min.x, trans_min.y, trans_min.z};
    j["trans_max"] = {trans_max.x, trans_max.y, trans_max.z};
    j["tag_min"] = {tag_min.x, tag_min.y, tag_min.z};
    j["tag_max"] = {tag_max.x, tag_max.y, tag_max.z};
    return j.dump(2);
}

NormStats NormStats::from_json_string(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("NormStats: bad JSON: ") + e.what());
    }
    auto vec3 = [&](const char* key) -> Vec3 {
        const auto& a = j.at(key);
        return {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()};
    };
    NormStats s;
    try {
        for (int c = 0; c < 4; ++c) {
            s.edge_mean[c] = j.at("edge_mean").at(c).get<double>();
            s.edge_std[c] = j.at("edge_std").at(c).get<double>();
        }
        s.trans_min = vec3("trans_min");
        s.trans_max = vec3("trans_max");
        s.tag_min = vec3("tag_min");
        s.tag_max = vec3("tag_max");
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("NormStats: missing field: ") + e.what());
    }
    for (double sd : s.edge_std) {
        if (!(sd > 0.0)) throw IoError("NormStats: edge_std components must be positive");
    }
    return s;
}

void NormStats::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("NormStats: cannot open " + path + " for writing");
    out << to_json_string() << "\n";
    if (!out.good()) throw IoError("NormStats: write to " + path + " failed");
}

NormStats NormStats::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("NormStats: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json_string(buf.str());
}

void write_token_file(const std::string& path, const std::vector<TokenSeq>& seqs,
                      const QuantConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_token_file: cannot open " + path);
    out << "#vocab=" << cfg.vocab_size() << " K=" << cfg.k_max_edges << "\n";
    for (const TokenSeq& s : seqs) {
        for (size_t i = 0; i < s.ids.size(); ++i) {
            if (i) out << ' ';
            out << s.ids[i];
        }
        out << '\n';
    }
    if (!out.good()) throw IoError("write_token_file: write to " + path + " failed");
}

std::vector<TokenSeq> read_token_file(const std::string& path, const QuantConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_token_file: cannot open " + path);

    int vocab = cfg.vocab_size();
    QuantConfig effective = cfg;
    std::vector<TokenSeq> out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first && line.rfind("#", 0) == 0) {
            first = false;
            int v = 0, k = 0;
            if (std::sscanf(line.c_str(), "#vocab=%d K=%d", &v, &k) == 2 && v > 0 && k > 0) {
                vocab = v;
                effective.k_max_edges = k;
            }
            continue;
        }
        first = false;
        if (line.empty()) continue;
        TokenSeq seq;
        seq.vocab_size = vocab;
        std::istringstream ss(line);
        long long id = 0;
        while (ss >> id) {
            if (id < 0 || id >= vocab) {
                throw TokenOutOfRangeError("read_token_file: id " + std::to_string(id) +
                                           " outside vocabulary of " + std::to_string(vocab));
            }
            seq.ids.push_back(static_cast<int32_t>(id));
        }
        if (!ss.eof()) {
            throw IoError("read_token_file: malformed integer in " + path);
        }
        seq.meta = positional_meta(seq.ids, effective.k_max_edges);
        out.push_back(std::move(seq));
    }
    return out;
}

} // namespace sewgen
