#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sewgen/codec.hpp"
#include "sewgen/conditioning.hpp"
#include "sewgen/optim.hpp"
#include "sewgen/tensor.hpp"

namespace sewgen {

// Decoder-only transformer configuration. The named embedding widths
// (d_pos, d_param, d_val, d_feature) all equal d_model.
struct ModelConfig {
    int n_layers = 2;
    int d_model = 64;
    int n_heads = 4;
    int vocab_size = 2004;
    int max_seq_len = 1500;
    int k_max_edges = 14;
    int max_panels = 12;
    int d_cond_in = 1024; // raw caption-embedding width
    bool slot_embedding = true;

    int d_pos() const { return d_model; }
    int d_param() const { return d_model; }
    int d_val() const { return d_model; }
    int d_feature() const { return d_model; }

    int slots_per_panel() const { return 8 * k_max_edges + 7; }
    int head_dim() const { return d_model / n_heads; }

    void validate() const;
    std::string to_json_string() const;
    static ModelConfig from_json_string(const std::string& text);
};

template <typename T>
struct LayerParamsT {
    Tensor<T> ln1_w, ln1_b;
    Tensor<T> attn_wq, attn_bq, attn_wk, attn_bk, attn_wv, attn_bv, attn_wo, attn_bo;
    Tensor<T> ln2_w, ln2_b;
    Tensor<T> cross_wq, cross_bq, cross_wk, cross_bk, cross_wv, cross_bv, cross_wo, cross_bo;
    Tensor<T> ln3_w, ln3_b;
    Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// All learnable tensors. Weight matrices are stored [in, out] row-major.
template <typename T>
struct ModelParamsT {
    Tensor<T> value_emb; // [vocab, d]
    Tensor<T> param_emb; // [6, d]
    Tensor<T> panel_emb; // [max_panels + 1, d]
    Tensor<T> slot_emb;  // [8K + 7, d]
    Tensor<T> cond_w1, cond_b1, cond_w2, cond_b2; // caption projection MLP
    Tensor<T> cond_null;                          // learned unconditional token [d]
    std::vector<LayerParamsT<T>> layers;
    Tensor<T> lnf_w, lnf_b;
    Tensor<T> head_w, head_b; // [d, vocab], [vocab]

    int64_t num_params() const;
};

using ModelParams = ModelParamsT<float>;

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> named_tensors(ModelParamsT<T>& p);
template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> named_tensors(const ModelParamsT<T>& p);

// Zero-valued parameter set with the shapes the config dictates.
template <typename T>
ModelParamsT<T> make_param_skeleton(const ModelConfig& cfg);

// Weight matrices and embeddings ~ normal(0, 0.02), biases zero, layernorm
// gains one. Deterministic in the seed.
template <typename T>
ModelParamsT<T> init_params_t(const ModelConfig& cfg, uint64_t seed);
ModelParams init_params(const ModelConfig& cfg, uint64_t seed);

// Triple embedding plus the within-panel slot table: row t is the sum of the
// value, parameter-class, panel-position and slot lookups. START/END rows use
// class Special, panel 0, slot 0.
template <typename T>
Tensor<T> embed_tokens_t(const ModelParamsT<T>& params, const ModelConfig& cfg,
                         const TokenSeq& tokens);
Tensor<float> embed_tokens(const ModelParams& params, const ModelConfig& cfg,
                           const TokenSeq& tokens);

// Full forward pass: per layer, pre-layernorm causal self-attention, then
// cross-attention over the conditioning rows, then a GELU MLP, all residual;
// final layernorm and the output projection. Returns logits [len, vocab].
template <typename T>
Tensor<T> forward_t(const ModelParamsT<T>& params, const ModelConfig& cfg, const TokenSeq& tokens,
                    const Tensor<T>& cond);
Tensor<float> forward(const ModelParams& params, const ModelConfig& cfg, const TokenSeq& tokens,
                      const CondEmbedding& cond);

// Mean of -log softmax(logits)[target] over positions whose target id is >= 0
// and not PAD.
template <typename T>
double nll_loss_t(const Tensor<T>& logits, const std::vector<int32_t>& targets);
double nll_loss(const Tensor<float>& logits, const std::vector<int32_t>& targets);

// Projects a raw caption embedding through the trainable two-layer MLP into a
// single conditioning row.
template <typename T>
Tensor<T> project_condition_t(const ModelParamsT<T>& params, const ModelConfig& cfg,
                              const std::vector<T>& raw);
CondEmbedding project_condition(const ModelParams& params, const ModelConfig& cfg,
                                const std::vector<float>& raw);

// The learned null conditioning token, used for unconditional passes.
CondEmbedding null_condition(const ModelParams& params, const ModelConfig& cfg);

// One training example: token sequence plus its raw caption embedding. An
// empty cond_raw selects the learned null token.
struct TrainItem {
    TokenSeq tokens;
    std::vector<float> cond_raw;
};

struct AdamState {
    ModelParams m;
    ModelParams v;
    int64_t step = 0;
};
AdamState make_adam_state(const ModelConfig& cfg);

// Teacher-forced step over the batch: reverse-mode gradients of the mean
// per-token loss through the whole model (conditioning MLP included) and one
// Adam update. Deterministic for a fixed batch regardless of n_threads; throws
// on a non-finite loss. Returns the batch mean per-token loss.
double backward_and_step(ModelParams& params, const ModelConfig& cfg,
                         const std::vector<const TrainItem*>& batch, AdamState& opt,
                         const AdamConfig& hyper, int n_threads = 1);

// Mean per-token loss of the items without touching gradients.
double mean_loss(const ModelParams& params, const ModelConfig& cfg,
                 const std::vector<const TrainItem*>& items);

struct SamplerOptions {
    double temperature = 1.0; // 0 = greedy argmax
    std::optional<int> top_k;
    uint64_t seed = 0;
    int max_new_tokens = 0; // 0 = fill to model capacity
};

struct SampleResult {
    TokenSeq tokens;
    // Set when generation stopped mid-panel (END too early, a stray special
    // token, or the length budget); the output is cut at the last complete
    // panel boundary and terminated with END.
    bool truncated = false;
};

// Autoregressively extends the prefix (or [START]) until END, applying
// temperature, then optional top-k truncation, then a categorical draw.
// Deterministic in the seed; temperature 0 takes the argmax.
SampleResult sample(const ModelParams& params, const ModelConfig& cfg, const CondEmbedding& cond,
                    const SamplerOptions& opts, const TokenSeq* prefix = nullptr);

// Single-token sampling from one logits row (exposed for tests and tools).
struct Rng;
int sample_from_logits(const float* logits, int vocab, const SamplerOptions& opts, Rng& rng);
void softmax_inplace(float* x, int n);

// Checkpoint container: magic "SEWGPT01", u32 version, u32 config-JSON length,
// config JSON, u32 tensor count, tensor table (u32 name length, name, u32
// rank, u64 dims, u64 payload offset), then raw little-endian f32 payloads.
// extra_json rides inside the config JSON under "extra".
void save_checkpoint(const std::string& path, const ModelParams& params, const ModelConfig& cfg,
                     const std::string& extra_json = "{}");

struct Checkpoint {
    ModelParams params;
    ModelConfig cfg;
    std::string extra_json;
};
Checkpoint load_checkpoint(const std::string& path);

// Finite-difference verification of the analytic gradients, run in double
// precision on a freshly initialized model over a random batch.
struct GradCheckOptions {
    uint64_t seed = 0;
    int n_coords = 100;
    double h = 1e-3;
    std::string tensor_prefix; // restrict sampled coordinates, e.g. "cond."
};

struct GradCheckCoord {
    std::string tensor;
    int64_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::vector<GradCheckCoord> coords;
};

GradCheckResult run_gradcheck(const ModelConfig& cfg, const GradCheckOptions& opts);

} // namespace sewgen
