// sewgen: sewing-pattern tokenization, generation and rendering pipeline.
//
// Exit codes: 0 success, 1 validation failure, 2 usage error, 3 IO/format
// error. Diagnostics go to stderr; machine-readable results to stdout or the
// requested output files.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "sewgen/codec.hpp"
#include "sewgen/conditioning.hpp"
#include "sewgen/errors.hpp"
#include "sewgen/model.hpp"
#include "sewgen/pattern_io.hpp"
#include "sewgen/stitch.hpp"
#include "sewgen/svg.hpp"
#include "sewgen/synth.hpp"
#include "sewgen/train.hpp"

namespace {

using namespace sewgen;
using nlohmann::json;

// Distinguishes "the input fails validation" (exit 1) from IO errors (exit 3).
struct ValidationFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// Settings: config-file JSON merged with flag overrides (flags win)
// ---------------------------------------------------------------------------

struct CliSettings {
    QuantConfig quant;
    StitchMatchConfig match;
    ProviderSpec provider;
};

json quant_to_json(const QuantConfig& q) {
    return json{{"C_E", q.c_edge},   {"C_R", q.c_rot},         {"C_T", q.c_trans},
                {"C_S", q.c_stitch}, {"C", q.c_offset},        {"K", q.k_max_edges},
                {"max_tokens", q.max_tokens}};
}

QuantConfig quant_from_json(const json& j) {
    QuantConfig q;
    q.c_edge = j.value("C_E", q.c_edge);
    q.c_rot = j.value("C_R", q.c_rot);
    q.c_trans = j.value("C_T", q.c_trans);
    q.c_stitch = j.value("C_S", q.c_stitch);
    q.c_offset = j.value("C", q.c_offset);
    q.k_max_edges = j.value("K", q.k_max_edges);
    q.max_tokens = j.value("max_tokens", q.max_tokens);
    return q;
}

json provider_to_json(const ProviderSpec& p) {
    return json{{"kind", provider_kind_name(p.kind)}, {"dim", p.dim}, {"path", p.path}};
}

ProviderSpec provider_from_json(const json& j) {
    ProviderSpec p;
    if (j.contains("kind")) p.kind = provider_kind_from_name(j.at("kind").get<std::string>());
    p.dim = j.value("dim", p.dim);
    p.path = j.value("path", p.path);
    return p;
}

json stats_to_json(const NormStats& s) { return json::parse(s.to_json_string()); }

// Per-field flag overrides collected before merging.
struct SettingsOverrides {
    std::optional<int> c_edge, c_rot, c_trans, c_stitch, c_offset, k, max_tokens;
    std::optional<double> tau;
    std::optional<std::string> provider_kind, provider_path;
    std::optional<int> provider_dim;
};

void add_settings_flags(CLI::App& cmd, SettingsOverrides& ov) {
    cmd.add_option("--c-edge", ov.c_edge, "edge quantization scale C_E");
    cmd.add_option("--c-rot", ov.c_rot, "rotation quantization scale C_R");
    cmd.add_option("--c-trans", ov.c_trans, "translation quantization scale C_T");
    cmd.add_option("--c-stitch", ov.c_stitch, "stitch-tag quantization scale C_S");
    cmd.add_option("--c-offset", ov.c_offset, "non-negativity offset C");
    cmd.add_option("--K", ov.k, "maximum edges per panel");
    cmd.add_option("--max-tokens", ov.max_tokens, "sequence length cap");
    cmd.add_option("--tau", ov.tau, "stitch matching distance threshold");
    cmd.add_option("--provider-kind", ov.provider_kind,
                   "caption provider: hashed_bow|file_lookup|null");
    cmd.add_option("--provider-dim", ov.provider_dim, "caption embedding width");
    cmd.add_option("--provider-path", ov.provider_path, "embedding file for file_lookup");
}

// Resolves config file (flag wins over SEWCODEC_CONFIG) and applies overrides.
// Aborts before any side effect when the merge is invalid.
CliSettings resolve_settings(const std::string& config_flag, const SettingsOverrides& ov) {
    CliSettings s;
    std::string path = config_flag;
    if (path.empty()) {
        if (const char* env = std::getenv("SEWCODEC_CONFIG")) path = env;
    }
    if (!path.empty()) {
        json j;
        try {
            j = json::parse(slurp(path));
        } catch (const json::exception& e) {
            throw ConfigError("config file " + path + ": " + e.what());
        }
        if (j.contains("quant")) s.quant = quant_from_json(j.at("quant"));
        if (j.contains("tau")) s.match.tau = j.at("tau").get<double>();
        if (j.contains("provider")) s.provider = provider_from_json(j.at("provider"));
    }
    if (ov.c_edge) s.quant.c_edge = *ov.c_edge;
    if (ov.c_rot) s.quant.c_rot = *ov.c_rot;
    if (ov.c_trans) s.quant.c_trans = *ov.c_trans;
    if (ov.c_stitch) s.quant.c_stitch = *ov.c_stitch;
    if (ov.c_offset) s.quant.c_offset = *ov.c_offset;
    if (ov.k) s.quant.k_max_edges = *ov.k;
    if (ov.max_tokens) s.quant.max_tokens = *ov.max_tokens;
    if (ov.tau) s.match.tau = *ov.tau;
    if (ov.provider_kind) s.provider.kind = provider_kind_from_name(*ov.provider_kind);
    if (ov.provider_dim) s.provider.dim = *ov.provider_dim;
    if (ov.provider_path) s.provider.path = *ov.provider_path;

    s.quant.validate();
    if (s.match.tau <= 0) throw ConfigError("tau must be positive");
    if (s.provider.dim <= 0) throw ConfigError("provider dim must be positive");
    return s;
}

// ---------------------------------------------------------------------------
// Checkpoint bundle: model params plus the artifacts generate/complete need
// ---------------------------------------------------------------------------

struct CkptBundle {
    ModelParams params;
    ModelConfig model;
    QuantConfig quant;
    NormStats stats;
    ProviderSpec provider;
};

CkptBundle load_bundle(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    json extra;
    try {
        extra = json::parse(ckpt.extra_json);
    } catch (const json::exception& e) {
        throw CorruptCheckpointError(std::string("checkpoint extra JSON: ") + e.what());
    }
    if (!extra.contains("quant") || !extra.contains("stats") || !extra.contains("provider")) {
        throw CorruptCheckpointError("checkpoint lacks the quant/stats/provider bundle");
    }
    CkptBundle b{std::move(ckpt.params), ckpt.cfg, quant_from_json(extra.at("quant")),
                 NormStats::from_json_string(extra.at("stats").dump()),
                 provider_from_json(extra.at("provider"))};
    b.quant.validate();
    return b;
}

CondEmbedding condition_for_prompt(const CkptBundle& b, const std::string& prompt) {
    if (prompt.empty()) {
        return null_condition(b.params, b.model);
    }
    const CaptionProvider provider = CaptionProvider::make(b.provider);
    return project_condition(b.params, b.model, provider.embed(prompt));
}

void report_warnings(const std::vector<std::string>& warnings) {
    for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

int cmd_validate(const std::string& input) {
    const Pattern p = load_pattern(input);
    const ValidationReport report = validate_pattern(p);
    json out;
    out["valid"] = report.valid();
    out["violations"] = json::array();
    out["warnings"] = json::array();
    for (const ValidationIssue& issue : report.issues) {
        json ji{{"location", issue.location}, {"rule", issue.rule}, {"message", issue.message}};
        (issue.severity == Severity::kError ? out["violations"] : out["warnings"]).push_back(ji);
    }
    std::cout << out.dump(2) << "\n";
    return report.valid() ? 0 : 1;
}

std::vector<Pattern> load_dir_patterns(const std::string& dir, const std::string& split) {
    namespace fs = std::filesystem;
    std::vector<Pattern> out;
    if (fs::exists(fs::path(dir) / "manifest.json")) {
        const Manifest m = load_manifest(dir);
        for (const ManifestItem& item : m.items) {
            if (split != "all" && item.split != split) continue;
            out.push_back(load_pattern((fs::path(dir) / item.file).string()));
        }
    } else {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.path().extension() == ".json") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) out.push_back(load_pattern(f.string()));
    }
    if (out.empty()) throw EmptyDatasetError("no patterns found in " + dir);
    return out;
}

int cmd_fit_stats(const std::string& dir, const std::string& out_path, const std::string& split) {
    const NormStats stats = fit_stats(load_dir_patterns(dir, split));
    stats.save(out_path);
    std::cerr << "stats written to " << out_path << "\n";
    return 0;
}

int cmd_encode(const CliSettings& s, const std::string& input, const std::string& stats_path,
               const std::string& out_path) {
    const Pattern p = load_pattern(input);
    const NormStats stats = NormStats::load(stats_path);
    const TokenSeq seq = encode(p, stats, s.quant);
    write_token_file(out_path, {seq}, s.quant);
    std::cerr << "encoded " << seq.length() << " tokens to " << out_path << "\n";
    return 0;
}

int cmd_decode(const CliSettings& s, const std::string& input, const std::string& stats_path,
               const std::string& out_path) {
    const NormStats stats = NormStats::load(stats_path);
    const std::vector<TokenSeq> seqs = read_token_file(input, s.quant);
    if (seqs.empty()) throw MalformedSequenceError("token file has no sequences");
    if (seqs.size() > 1) {
        std::cerr << "warning: " << seqs.size() << " sequences in file, decoding the first\n";
    }
    const DecodeResult res = decode(seqs.front(), stats, s.quant, s.match);
    report_warnings(res.warnings);
    if (res.pattern.panels.empty()) {
        throw MalformedSequenceError("sequence decodes to no usable panels");
    }
    save_pattern(res.pattern, out_path);
    std::cerr << "decoded " << res.pattern.panel_count() << " panels to " << out_path << "\n";
    return 0;
}

int cmd_roundtrip(const CliSettings& s, const std::string& input, const std::string& stats_path) {
    const Pattern p = load_pattern(input);
    const NormStats stats = NormStats::load(stats_path);
    const TokenSeq seq = encode(p, stats, s.quant);
    const DecodeResult res = decode(seq, stats, s.quant, s.match);
    const Pattern& q = res.pattern;

    const double edge_tol = 0.5 / s.quant.c_edge + 1e-9;
    const double norm_tol = 0.5 / 1000.0 + 1e-9;
    const double rot_tol = 5e-3; // component error after renormalization

    bool ok = q.panel_count() == p.panel_count();
    double edge_err = 0, trans_err = 0, tag_err = 0, rot_err = 0;
    bool flags_exact = ok;
    for (int i = 0; ok && i < p.panel_count(); ++i) {
        const Panel& a = p.panels[i];
        const Panel& b = q.panels[i];
        if (a.edge_count() != b.edge_count()) {
            ok = false;
            break;
        }
        flags_exact = flags_exact && a.stitch_flags == b.stitch_flags;
        for (int e = 0; e < a.edge_count(); ++e) {
            const std::array<double, 4> va{a.edges[e].start.x, a.edges[e].start.y,
                                           a.edges[e].control.x, a.edges[e].control.y};
            const std::array<double, 4> vb{b.edges[e].start.x, b.edges[e].start.y,
                                           b.edges[e].control.x, b.edges[e].control.y};
            for (int c = 0; c < 4; ++c) {
                edge_err = std::max(edge_err, std::fabs(va[c] - vb[c]) / stats.edge_std[c]);
            }
            tag_err = std::max({tag_err, std::fabs(a.stitch_tags[e].x - b.stitch_tags[e].x),
                                std::fabs(a.stitch_tags[e].y - b.stitch_tags[e].y),
                                std::fabs(a.stitch_tags[e].z - b.stitch_tags[e].z)});
        }
        const std::array<double, 3> lo{stats.trans_min.x, stats.trans_min.y, stats.trans_min.z};
        const std::array<double, 3> hi{stats.trans_max.x, stats.trans_max.y, stats.trans_max.z};
        const std::array<double, 3> ta{a.placement.translation.x, a.placement.translation.y,
                                       a.placement.translation.z};
        const std::array<double, 3> tb{b.placement.translation.x, b.placement.translation.y,
                                       b.placement.translation.z};
        for (int c = 0; c < 3; ++c) {
            const double range = hi[c] - lo[c] == 0.0 ? 1.0 : hi[c] - lo[c];
            trans_err = std::max(trans_err, std::fabs(ta[c] - tb[c]) / range);
        }
        rot_err = std::max({rot_err, std::fabs(a.placement.rotation.w - b.placement.rotation.w),
                            std::fabs(a.placement.rotation.x - b.placement.rotation.x),
                            std::fabs(a.placement.rotation.y - b.placement.rotation.y),
                            std::fabs(a.placement.rotation.z - b.placement.rotation.z)});
    }

    const std::set<Stitch> sa(p.stitches.begin(), p.stitches.end());
    const std::set<Stitch> sb(q.stitches.begin(), q.stitches.end());
    const bool stitches_exact = ok && sa == sb;

    std::cout << "panels: " << (ok ? "EXACT" : "DIFFER") << "\n";
    std::cout << "edge error (standardized): " << edge_err << " (tol " << edge_tol << ")\n";
    std::cout << "rotation error (component, renormalized): " << rot_err << " (tol " << rot_tol
              << ")\n";
    std::cout << "translation error (normalized): " << trans_err << " (tol " << norm_tol << ")\n";
    std::cout << "tag error (normalized): " << tag_err << " (tol " << norm_tol << ")\n";
    std::cout << "flags: " << (flags_exact ? "EXACT" : "DIFFER") << "\n";
    std::cout << "stitches: " << (stitches_exact ? "EXACT" : "DIFFER") << "\n";
    report_warnings(res.warnings);

    const bool pass = ok && flags_exact && stitches_exact && edge_err <= edge_tol &&
                      trans_err <= norm_tol && tag_err <= norm_tol && rot_err <= rot_tol;
    if (!pass) throw ValidationFailure("round-trip error exceeds tolerance");
    return 0;
}

int cmd_synth(const std::string& template_name, int n, uint64_t seed, const std::string& out_dir) {
    std::vector<TemplateSpec> specs;
    if (template_name == "all") {
        specs = all_templates();
    } else {
        specs = {standard_template(template_kind_from_name(template_name))};
    }
    const Manifest m = build_dataset(specs, n, seed, out_dir);
    int train = 0, val = 0;
    for (const ManifestItem& item : m.items) (item.split == "val" ? val : train)++;
    std::cerr << "wrote " << m.items.size() << " patterns (" << train << " train, " << val
              << " val) to " << out_dir << "\n";
    return 0;
}

int cmd_train(const CliSettings& s, const std::string& config_path, const std::string& data_dir,
              const std::string& out_path, std::optional<int> steps_override) {
    TrainConfig tcfg = config_path.empty() ? TrainConfig{}
                                           : TrainConfig::from_json_string(slurp(config_path));
    if (steps_override) tcfg.steps = *steps_override;

    ProviderSpec pspec = s.provider;
    pspec.dim = tcfg.model.d_cond_in;
    const CaptionProvider provider = CaptionProvider::make(pspec);

    if (tcfg.model.vocab_size != s.quant.vocab_size()) {
        throw ConfigError("model vocab_size " + std::to_string(tcfg.model.vocab_size) +
                          " does not match the quantizer vocabulary " +
                          std::to_string(s.quant.vocab_size()));
    }
    if (tcfg.model.k_max_edges != s.quant.k_max_edges) {
        throw ConfigError("model K does not match the quantizer K");
    }

    const DatasetBundle bundle = prepare_dataset(data_dir, s.quant, provider);
    std::cerr << "training on " << bundle.train_items.size() << " sequences ("
              << bundle.val_items.size() << " held out)\n";

    Trainer trainer(tcfg, bundle.train_items);
    trainer.run_steps(tcfg.steps, &std::cerr);
    std::cerr << "final step " << trainer.step() << ", full-set loss " << trainer.eval_loss()
              << "\n";

    json extra;
    extra["quant"] = quant_to_json(s.quant);
    extra["stats"] = stats_to_json(bundle.stats);
    extra["provider"] = provider_to_json(pspec);
    save_checkpoint(out_path, trainer.params(), tcfg.model, extra.dump());
    std::cerr << "checkpoint written to " << out_path << "\n";
    return 0;
}

struct SampleFlags {
    double temperature = 1.0;
    std::optional<int> top_k;
    uint64_t seed = 0;
    int max_new = 0;
};

void add_sample_flags(CLI::App& cmd, SampleFlags& f) {
    cmd.add_option("--temperature", f.temperature, "sampling temperature, 0 = greedy");
    cmd.add_option("--top-k", f.top_k, "keep only the k most likely tokens");
    cmd.add_option("--seed", f.seed, "sampler seed");
    cmd.add_option("--max-new", f.max_new, "cap on newly generated tokens");
}

int write_generation(const CliSettings& s, const CkptBundle& b, const SampleResult& res,
                     const std::string& prompt, const std::string& out_path,
                     const std::string& tokens_out, const std::string& svg_out) {
    if (res.truncated) {
        std::cerr << "warning: generation stopped mid-panel; output truncated to the last "
                     "complete panel\n";
    }
    if (!tokens_out.empty()) {
        QuantConfig q = b.quant;
        write_token_file(tokens_out, {res.tokens}, q);
    }
    const DecodeResult dec = decode(res.tokens, b.stats, b.quant, s.match);
    report_warnings(dec.warnings);
    if (dec.pattern.panels.empty()) {
        throw MalformedSequenceError("model produced no complete panels");
    }
    Pattern out = dec.pattern;
    if (!prompt.empty()) out.caption = prompt;
    save_pattern(out, out_path);
    if (!svg_out.empty()) render_svg(out, svg_out);
    std::cerr << "generated " << out.panel_count() << " panels to " << out_path << "\n";
    return 0;
}

int cmd_generate(const CliSettings& s, const std::string& ckpt_path, const std::string& prompt,
                 const SampleFlags& f, const std::string& out_path, const std::string& tokens_out,
                 const std::string& svg_out) {
    const CkptBundle b = load_bundle(ckpt_path);
    const CondEmbedding cond = condition_for_prompt(b, prompt);
    SamplerOptions opts{f.temperature, f.top_k, f.seed, f.max_new};
    const SampleResult res = sample(b.params, b.model, cond, opts);
    return write_generation(s, b, res, prompt, out_path, tokens_out, svg_out);
}

int cmd_complete(const CliSettings& s, const std::string& ckpt_path, const std::string& prefix_path,
                 bool prefix_is_tokens, const std::string& prompt, const SampleFlags& f,
                 const std::string& out_path, const std::string& tokens_out,
                 const std::string& svg_out) {
    const CkptBundle b = load_bundle(ckpt_path);

    TokenSeq prefix;
    if (prefix_is_tokens) {
        const std::vector<TokenSeq> seqs = read_token_file(prefix_path, b.quant);
        if (seqs.empty()) throw MalformedSequenceError("prefix token file is empty");
        prefix = seqs.front();
    } else {
        const Pattern p = load_pattern(prefix_path);
        prefix = encode(p, b.stats, b.quant);
    }
    // drop the END token so the model continues the pattern
    if (!prefix.ids.empty() && prefix.ids.back() == kEndId) {
        prefix.ids.pop_back();
        prefix.meta.pop_back();
    }

    const CondEmbedding cond = condition_for_prompt(b, prompt);
    SamplerOptions opts{f.temperature, f.top_k, f.seed, f.max_new};
    const SampleResult res = sample(b.params, b.model, cond, opts, &prefix);
    return write_generation(s, b, res, prompt, out_path, tokens_out, svg_out);
}

int cmd_gradcheck(const std::string& config_path, int coords, uint64_t seed) {
    ModelConfig cfg;
    if (config_path.empty()) {
        cfg.n_layers = 1;
        cfg.d_model = 16;
        cfg.n_heads = 2;
        cfg.vocab_size = 64;
        cfg.k_max_edges = 2;
        cfg.max_panels = 2;
        cfg.max_seq_len = 2 + 23 * 2;
        cfg.d_cond_in = 8;
    } else {
        cfg = TrainConfig::from_json_string(slurp(config_path)).model;
    }
    GradCheckOptions opts;
    opts.seed = seed;
    opts.n_coords = coords;
    const GradCheckResult res = run_gradcheck(cfg, opts);
    std::cout << "gradcheck: max relative error " << res.max_rel_err << " over "
              << res.coords.size() << " coordinates (f64, h=" << opts.h << ")\n";
    for (size_t i = 0; i < std::min<size_t>(3, res.coords.size()); ++i) {
        const GradCheckCoord& c = res.coords[i];
        std::cout << "  " << c.tensor << "[" << c.index << "] analytic " << c.analytic
                  << " numeric " << c.numeric << " rel " << c.rel_err << "\n";
    }
    if (res.max_rel_err >= 1e-4) {
        throw ValidationFailure("gradient check failed");
    }
    return 0;
}

int cmd_render_svg(const std::string& input, const std::string& out_path) {
    const Pattern p = load_pattern(input);
    render_svg(p, out_path);
    std::cerr << "rendered " << p.panel_count() << " panels to " << out_path << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sewing pattern tokenization, training, generation and rendering"};
    app.require_subcommand(1);

    std::string config_flag;
    app.add_option("--config", config_flag,
                   "settings JSON (defaults to $SEWCODEC_CONFIG when set)");
    SettingsOverrides ov;

    // validate
    auto* validate_cmd = app.add_subcommand("validate", "check a pattern against the invariants");
    std::string validate_input;
    validate_cmd->add_option("pattern", validate_input, "pattern JSON file")->required();

    // fit-stats
    auto* fit_cmd = app.add_subcommand("fit-stats", "fit normalization statistics over a dataset");
    std::string fit_dir, fit_out, fit_split = "train";
    fit_cmd->add_option("dir", fit_dir, "dataset directory")->required();
    fit_cmd->add_option("-o,--out", fit_out, "output stats JSON")->required();
    fit_cmd->add_option("--split", fit_split, "train|val|all (default train)");

    // encode
    auto* encode_cmd = app.add_subcommand("encode", "quantize a pattern into tokens");
    std::string encode_input, encode_stats, encode_out;
    encode_cmd->add_option("pattern", encode_input, "pattern JSON file")->required();
    encode_cmd->add_option("--stats", encode_stats, "stats JSON")->required();
    encode_cmd->add_option("-o,--out", encode_out, "output token file")->required();
    add_settings_flags(*encode_cmd, ov);

    // decode
    auto* decode_cmd = app.add_subcommand("decode", "de-quantize tokens into a pattern");
    std::string decode_input, decode_stats, decode_out;
    decode_cmd->add_option("tokens", decode_input, "token file")->required();
    decode_cmd->add_option("--stats", decode_stats, "stats JSON")->required();
    decode_cmd->add_option("-o,--out", decode_out, "output pattern JSON")->required();
    add_settings_flags(*decode_cmd, ov);

    // roundtrip
    auto* rt_cmd = app.add_subcommand("roundtrip", "encode+decode and report reconstruction error");
    std::string rt_input, rt_stats;
    rt_cmd->add_option("pattern", rt_input, "pattern JSON file")->required();
    rt_cmd->add_option("--stats", rt_stats, "stats JSON")->required();
    add_settings_flags(*rt_cmd, ov);

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_template = "all", synth_out;
    int synth_n = 10;
    uint64_t synth_seed = 0;
    synth_cmd->add_option("--template", synth_template,
                          "skirt_2panel|sleeveless_dress|tee|pants|all");
    synth_cmd->add_option("--n", synth_n, "patterns per template")->required();
    synth_cmd->add_option("--seed", synth_seed, "dataset seed");
    synth_cmd->add_option("-o,--out", synth_out, "output directory")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "train the autoregressive model");
    std::string train_config, train_data, train_out;
    std::optional<int> train_steps;
    train_cmd->add_option("--config", train_config, "training config JSON");
    train_cmd->add_option("--data", train_data, "dataset directory")->required();
    train_cmd->add_option("--out", train_out, "output checkpoint path")->required();
    train_cmd->add_option("--steps", train_steps, "override the configured step count");
    add_settings_flags(*train_cmd, ov);

    // generate
    auto* gen_cmd = app.add_subcommand("generate", "sample a pattern from a text prompt");
    std::string gen_ckpt, gen_prompt, gen_out, gen_tokens_out, gen_svg;
    SampleFlags gen_flags;
    gen_cmd->add_option("--ckpt", gen_ckpt, "checkpoint path")->required();
    gen_cmd->add_option("--prompt", gen_prompt, "text prompt (empty = unconditional)");
    gen_cmd->add_option("-o,--out", gen_out, "output pattern JSON")->required();
    gen_cmd->add_option("--tokens-out", gen_tokens_out, "also write the raw token sequence");
    gen_cmd->add_option("--svg", gen_svg, "also render the pattern to SVG");
    add_sample_flags(*gen_cmd, gen_flags);
    add_settings_flags(*gen_cmd, ov);

    // complete
    auto* comp_cmd = app.add_subcommand("complete", "complete a partial pattern");
    std::string comp_ckpt, comp_prefix, comp_prompt, comp_out, comp_tokens_out, comp_svg;
    bool comp_prefix_tokens = false;
    SampleFlags comp_flags;
    comp_cmd->add_option("--ckpt", comp_ckpt, "checkpoint path")->required();
    comp_cmd->add_option("--prefix", comp_prefix, "partial pattern JSON (whole panels)")
        ->required();
    comp_cmd->add_flag("--tokens", comp_prefix_tokens, "prefix file holds raw tokens instead");
    comp_cmd->add_option("--prompt", comp_prompt, "text prompt (empty = unconditional)");
    comp_cmd->add_option("-o,--out", comp_out, "output pattern JSON")->required();
    comp_cmd->add_option("--tokens-out", comp_tokens_out, "also write the raw token sequence");
    comp_cmd->add_option("--svg", comp_svg, "also render the pattern to SVG");
    add_sample_flags(*comp_cmd, comp_flags);
    add_settings_flags(*comp_cmd, ov);

    // gradcheck
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::string gc_config;
    int gc_coords = 100;
    uint64_t gc_seed = 0;
    gc_cmd->add_option("--config", gc_config, "training config JSON (default: tiny model)");
    gc_cmd->add_option("--coords", gc_coords, "number of coordinates to probe");
    gc_cmd->add_option("--seed", gc_seed, "probe seed");

    // render-svg
    auto* svg_cmd = app.add_subcommand("render-svg", "render a pattern to SVG");
    std::string svg_input, svg_out;
    svg_cmd->add_option("pattern", svg_input, "pattern JSON file")->required();
    svg_cmd->add_option("-o,--out", svg_out, "output SVG path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        const CliSettings settings = resolve_settings(config_flag, ov);
        if (*validate_cmd) return cmd_validate(validate_input);
        if (*fit_cmd) return cmd_fit_stats(fit_dir, fit_out, fit_split);
        if (*encode_cmd) return cmd_encode(settings, encode_input, encode_stats, encode_out);
        if (*decode_cmd) return cmd_decode(settings, decode_input, decode_stats, decode_out);
        if (*rt_cmd) return cmd_roundtrip(settings, rt_input, rt_stats);
        if (*synth_cmd) return cmd_synth(synth_template, synth_n, synth_seed, synth_out);
        if (*train_cmd) return cmd_train(settings, train_config, train_data, train_out, train_steps);
        if (*gen_cmd)
            return cmd_generate(settings, gen_ckpt, gen_prompt, gen_flags, gen_out, gen_tokens_out,
                                gen_svg);
        if (*comp_cmd)
            return cmd_complete(settings, comp_ckpt, comp_prefix, comp_prefix_tokens, comp_prompt,
                                comp_flags, comp_out, comp_tokens_out, comp_svg);
        if (*gc_cmd) return cmd_gradcheck(gc_config, gc_coords, gc_seed);
        if (*svg_cmd) return cmd_render_svg(svg_input, svg_out);
        std::cerr << "no subcommand selected\n";
        return 2;
    } catch (const ValidationFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
