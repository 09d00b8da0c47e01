#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sewgen/pattern.hpp"
#include "sewgen/stitch.hpp"

namespace sewgen {

// Special token ids. Value tokens are shifted up by kSpecialOffset.
constexpr int32_t kPadId = 0;
constexpr int32_t kStartId = 1;
constexpr int32_t kEndId = 2;
constexpr int32_t kSpecialOffset = 3;

// Standardized edge values are clamped to +-kEdgeClamp before scaling, which
// bounds edge tokens to +-(kEdgeClamp * C_E) and keeps the vocabulary finite.
constexpr double kEdgeClamp = 4.0;

// Quantization constants. C_E scales standardized edge coordinates, C_R/C_T/C_S
// scale the normalized rotation/translation/tag channels, C shifts every
// quantized value to be non-negative. K caps edges per panel.
struct QuantConfig {
    int c_edge = 50;
    int c_rot = 1000;
    int c_trans = 1000;
    int c_stitch = 1000;
    int c_offset = 1000;
    int k_max_edges = 14;
    int max_tokens = 1500;

    // 4K edge + 4 rotation + 3 translation + 3K tag + K flag slots.
    int slots_per_panel() const { return 8 * k_max_edges + 7; }
    int max_panels() const { return (max_tokens - 2) / slots_per_panel(); }
    int vocab_size() const;

    // Throws ConfigError when the constants cannot produce non-negative tokens.
    void validate() const;
};

// Per-channel standardization / normalization statistics. Extrema are stored
// as observed; a zero std or zero (max - min) range acts as 1 when applied.
struct NormStats {
    std::array<double, 4> edge_mean{}; // over (v_x, v_y, c_x, c_y) of all edges
    std::array<double, 4> edge_std{};  // population std, zero replaced by 1
    Vec3 trans_min, trans_max;         // over all panel translations
    Vec3 tag_min, tag_max;             // over all 3D edge midpoints

    TagStats tag_stats() const { return {tag_min, tag_max}; }

    std::string to_json_string() const;
    static NormStats from_json_string(const std::string& text);
    void save(const std::string& path) const;
    static NormStats load(const std::string& path);
};

enum class ParamClass : int32_t {
    kEdgeCoord = 0,
    kRotation = 1,
    kTranslation = 2,
    kStitchTag = 3,
    kStitchFlag = 4,
    kSpecial = 5,
};
constexpr int kNumParamClasses = 6;

const char* param_class_name(ParamClass c);

struct TokenMeta {
    int32_t panel = 0; // 1-based panel index; 0 for START/END/PAD
    ParamClass cls = ParamClass::kSpecial;

    bool operator==(const TokenMeta&) const = default;
};

struct TokenSeq {
    std::vector<int32_t> ids;
    std::vector<TokenMeta> meta;
    int32_t vocab_size = 0;

    int length() const { return static_cast<int>(ids.size()); }
};

// Mean/std over all edges and componentwise extrema over all translations and
// 3D edge midpoints of the collection. Throws EmptyDatasetError when there is
// nothing to fit.
NormStats fit_stats(const std::vector<Pattern>& patterns);

// round-half-away-from-zero(scale * x), clamped to +-round(scale * max_abs).
// max_abs is kEdgeClamp for standardized edge channels and 1 for normalized
// channels. Throws on non-finite input.
int32_t quantize_value(double x, int scale, double max_abs = kEdgeClamp);

// Parameter class of a within-panel slot: [0,4K) edges, [4K,4K+4) rotation,
// [4K+4,4K+7) translation, [4K+7,7K+7) tags, [7K+7,8K+7) flags.
ParamClass param_class_of(int slot_in_panel, int k_max_edges);

// Rebuilds (panel, class) metadata for a canonical sequence layout, position 0
// being START. Special ids map to (panel 0, Special); interior position i maps
// to panel i / (8K+7) + 1 and the class of slot i mod (8K+7).
std::vector<TokenMeta> positional_meta(const std::vector<int32_t>& ids, int k_max_edges);

// Quantizes a pattern into a token sequence: START, then per panel 4K edge
// tokens (standardized, zero-padded in standardized space), 4 rotation tokens
// ((q+1)/2), 3 translation tokens (min-max normalized), 3K tag tokens (already
// normalized), K flags, then END. Every value token carries the +C offset plus
// the special-token shift.
TokenSeq encode(const Pattern& pattern, const NormStats& stats, const QuantConfig& cfg);

struct DecodeResult {
    Pattern pattern;
    // DegeneratePanel drops and unmatched flagged edges; decode continues.
    std::vector<std::string> warnings;
};

// Exact inverse of encode up to quantization error. Strips START/END, inverts
// each arithmetic step, drops trailing padded edge slots, renormalizes the
// rotation quaternion and rebuilds the stitch list via recover_stitches.
DecodeResult decode(const TokenSeq& tokens, const NormStats& stats, const QuantConfig& cfg,
                    const StitchMatchConfig& match = {});

// Token file IO: one sequence per line, space-separated decimal ids; line 1 is
// the header "#vocab=<V> K=<K>".
void write_token_file(const std::string& path, const std::vector<TokenSeq>& seqs,
                      const QuantConfig& cfg);
std::vector<TokenSeq> read_token_file(const std::string& path, const QuantConfig& cfg);

} // namespace sewgen
