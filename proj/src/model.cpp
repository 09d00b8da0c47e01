#include "sewgen/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <thread>

#include "json.hpp"

#include "sewgen/errors.hpp"
#include "sewgen/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace sewgen {

using nlohmann::json;

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
    if (n_layers <= 0 || d_model <= 0 || n_heads <= 0 || vocab_size <= 0 || max_seq_len <= 0 ||
        k_max_edges <= 0 || max_panels <= 0 || d_cond_in <= 0) {
        throw ConfigError("ModelConfig: all dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("ModelConfig: d_model must be divisible by n_heads");
    }
    if (max_seq_len < 2 + slots_per_panel() * max_panels) {
        throw ConfigError("ModelConfig: max_seq_len cannot hold max_panels panels");
    }
}

std::string ModelConfig::to_json_string() const {
    json j;
    j["n_layers"] = n_layers;
    j["d_model"] = d_model;
    j["n_heads"] = n_heads;
    j["vocab_size"] = vocab_size;
    j["max_seq_len"] = max_seq_len;
    j["K"] = k_max_edges;
    j["max_panels"] = max_panels;
    j["d_cond_in"] = d_cond_in;
    j["slot_embedding"] = slot_embedding;
    return j.dump();
}

ModelConfig ModelConfig::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("ModelConfig: bad JSON: ") + e.what());
    }
    ModelConfig cfg;
    try {
        cfg.n_layers = j.at("n_layers").get<int>();
        cfg.d_model = j.at("d_model").get<int>();
        cfg.n_heads = j.at("n_heads").get<int>();
        cfg.vocab_size = j.at("vocab_size").get<int>();
        cfg.max_seq_len = j.at("max_seq_len").get<int>();
        cfg.k_max_edges = j.at("K").get<int>();
        cfg.max_panels = j.at("max_panels").get<int>();
        cfg.d_cond_in = j.at("d_cond_in").get<int>();
        cfg.slot_embedding = j.value("slot_embedding", true);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("ModelConfig: missing field: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Parameter containers
// ---------------------------------------------------------------------------

template <typename T>
ModelParamsT<T> make_param_skeleton(const ModelConfig& cfg) {
    cfg.validate();
    const int64_t d = cfg.d_model;
    const int64_t f = 4 * d;
    ModelParamsT<T> p;
    p.value_emb = Tensor<T>({cfg.vocab_size, d});
    p.param_emb = Tensor<T>({kNumParamClasses, d});
    p.panel_emb = Tensor<T>({cfg.max_panels + 1, d});
    p.slot_emb = Tensor<T>({cfg.slots_per_panel(), d});
    p.cond_w1 = Tensor<T>({cfg.d_cond_in, d});
    p.cond_b1 = Tensor<T>({d});
    p.cond_w2 = Tensor<T>({d, d});
    p.cond_b2 = Tensor<T>({d});
    p.cond_null = Tensor<T>({d});
    p.layers.resize(cfg.n_layers);
    for (auto& l : p.layers) {
        l.ln1_w = Tensor<T>({d});
        l.ln1_b = Tensor<T>({d});
        l.attn_wq = Tensor<T>({d, d});
        l.attn_bq = Tensor<T>({d});
        l.attn_wk = Tensor<T>({d, d});
        l.attn_bk = Tensor<T>({d});
        l.attn_wv = Tensor<T>({d, d});
        l.attn_bv = Tensor<T>({d});
        l.attn_wo = Tensor<T>({d, d});
        l.attn_bo = Tensor<T>({d});
        l.ln2_w = Tensor<T>({d});
        l.ln2_b = Tensor<T>({d});
        l.cross_wq = Tensor<T>({d, d});
        l.cross_bq = Tensor<T>({d});
        l.cross_wk = Tensor<T>({d, d});
        l.cross_bk = Tensor<T>({d});
        l.cross_wv = Tensor<T>({d, d});
        l.cross_bv = Tensor<T>({d});
        l.cross_wo = Tensor<T>({d, d});
        l.cross_bo = Tensor<T>({d});
        l.ln3_w = Tensor<T>({d});
        l.ln3_b = Tensor<T>({d});
        l.mlp_w1 = Tensor<T>({d, f});
        l.mlp_b1 = Tensor<T>({f});
        l.mlp_w2 = Tensor<T>({f, d});
        l.mlp_b2 = Tensor<T>({d});
    }
    p.lnf_w = Tensor<T>({d});
    p.lnf_b = Tensor<T>({d});
    p.head_w = Tensor<T>({d, cfg.vocab_size});
    p.head_b = Tensor<T>({cfg.vocab_size});
    return p;
}

template <typename T, typename P, typename Out>
void collect_tensors(P& p, Out& out) {
    out.emplace_back("value_emb", &p.value_emb);
    out.emplace_back("param_emb", &p.param_emb);
    out.emplace_back("panel_emb", &p.panel_emb);
    out.emplace_back("slot_emb", &p.slot_emb);
    out.emplace_back("cond.w1", &p.cond_w1);
    out.emplace_back("cond.b1", &p.cond_b1);
    out.emplace_back("cond.w2", &p.cond_w2);
    out.emplace_back("cond.b2", &p.cond_b2);
    out.emplace_back("cond.null", &p.cond_null);
    for (size_t i = 0; i < p.layers.size(); ++i) {
        auto& l = p.layers[i];
        const std::string pre = "layers." + std::to_string(i) + ".";
        out.emplace_back(pre + "ln1.w", &l.ln1_w);
        out.emplace_back(pre + "ln1.b", &l.ln1_b);
        out.emplace_back(pre + "attn.wq", &l.attn_wq);
        out.emplace_back(pre + "attn.bq", &l.attn_bq);
        out.emplace_back(pre + "attn.wk", &l.attn_wk);
        out.emplace_back(pre + "attn.bk", &l.attn_bk);
        out.emplace_back(pre + "attn.wv", &l.attn_wv);
        out.emplace_back(pre + "attn.bv", &l.attn_bv);
        out.emplace_back(pre + "attn.wo", &l.attn_wo);
        out.emplace_back(pre + "attn.bo", &l.attn_bo);
        out.emplace_back(pre + "ln2.w", &l.ln2_w);
        out.emplace_back(pre + "ln2.b", &l.ln2_b);
        out.emplace_back(pre + "cross.wq", &l.cross_wq);
        out.emplace_back(pre + "cross.bq", &l.cross_bq);
        out.emplace_back(pre + "cross.wk", &l.cross_wk);
        out.emplace_back(pre + "cross.bk", &l.cross_bk);
        out.emplace_back(pre + "cross.wv", &l.cross_wv);
        out.emplace_back(pre + "cross.bv", &l.cross_bv);
        out.emplace_back(pre + "cross.wo", &l.cross_wo);
        out.emplace_back(pre + "cross.bo", &l.cross_bo);
        out.emplace_back(pre + "ln3.w", &l.ln3_w);
        out.emplace_back(pre + "ln3.b", &l.ln3_b);
        out.emplace_back(pre + "mlp.w1", &l.mlp_w1);
        out.emplace_back(pre + "mlp.b1", &l.mlp_b1);
        out.emplace_back(pre + "mlp.w2", &l.mlp_w2);
        out.emplace_back(pre + "mlp.b2", &l.mlp_b2);
    }
    out.emplace_back("ln_f.w", &p.lnf_w);
    out.emplace_back("ln_f.b", &p.lnf_b);
    out.emplace_back("head.w", &p.head_w);
    out.emplace_back("head.b", &p.head_b);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> named_tensors(ModelParamsT<T>& p) {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    collect_tensors<T>(p, out);
    return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> named_tensors(const ModelParamsT<T>& p) {
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    collect_tensors<T>(p, out);
    return out;
}

template <typename T>
int64_t ModelParamsT<T>::num_params() const {
    int64_t n = 0;
    for (const auto& [name, t] : named_tensors(*this)) n += t->size();
    return n;
}

namespace {

constexpr double kInitStd = 0.02;

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double std) {
    for (auto& x : t.v) x = static_cast<T>(rng.normal(0.0, std));
}

template <typename T>
void fill_ones(Tensor<T>& t) {
    std::fill(t.v.begin(), t.v.end(), T(1));
}

} // namespace

template <typename T>
ModelParamsT<T> init_params_t(const ModelConfig& cfg, uint64_t seed) {
    ModelParamsT<T> p = make_param_skeleton<T>(cfg);
    Rng rng(seed);
    fill_normal(p.value_emb, rng, kInitStd);
    fill_normal(p.param_emb, rng, kInitStd);
    fill_normal(p.panel_emb, rng, kInitStd);
    if (cfg.slot_embedding) fill_normal(p.slot_emb, rng, kInitStd);
    fill_normal(p.cond_w1, rng, kInitStd);
    fill_normal(p.cond_w2, rng, kInitStd);
    fill_normal(p.cond_null, rng, kInitStd);
    for (auto& l : p.layers) {
        fill_ones(l.ln1_w);
        fill_ones(l.ln2_w);
        fill_ones(l.ln3_w);
        fill_normal(l.attn_wq, rng, kInitStd);
        fill_normal(l.attn_wk, rng, kInitStd);
        fill_normal(l.attn_wv, rng, kInitStd);
        fill_normal(l.attn_wo, rng, kInitStd);
        fill_normal(l.cross_wq, rng, kInitStd);
        fill_normal(l.cross_wk, rng, kInitStd);
        fill_normal(l.cross_wv, rng, kInitStd);
        fill_normal(l.cross_wo, rng, kInitStd);
        fill_normal(l.mlp_w1, rng, kInitStd);
        fill_normal(l.mlp_w2, rng, kInitStd);
    }
    fill_ones(p.lnf_w);
    fill_normal(p.head_w, rng, kInitStd);
    return p;
}

ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
    return init_params_t<float>(cfg, seed);
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluK = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

// exp/tanh for the float training path: cephes-style polynomial, accurate to
// ~4e-6 relative, written so the loops around it auto-vectorize. The double
// path keeps libm so the gradient check runs against the exact functions.
inline float fast_exp(float x) {
    x = std::max(x, -87.0f);
    x = std::min(x, 88.0f);
    const float z = x * 1.44269504088896341f + 12582912.0f; // magic rounding
    const float n = z - 12582912.0f;
    float r = x - n * 0.693359375f;
    r += n * 2.12194440e-4f;
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    p = p * r * r + r + 1.0f;
    int32_t zb;
    std::memcpy(&zb, &z, 4);
    const int32_t bits = (zb - 0x4B400000 + 127) << 23; // 2^n
    float scale;
    std::memcpy(&scale, &bits, 4);
    return p * scale;
}

inline double fast_exp(double x) { return std::exp(x); }

inline float fast_tanh(float x) {
    const float a = std::fabs(x);
    const float e = fast_exp(-2.0f * a);
    const float t = (1.0f - e) / (1.0f + e);
    return std::copysign(t, x);
}

inline double fast_tanh(double x) { return std::tanh(x); }

template <typename T>
T gelu(T x) {
    const T u = static_cast<T>(kGeluK) * (x + static_cast<T>(kGeluC) * x * x * x);
    return T(0.5) * x * (T(1) + fast_tanh(u));
}

template <typename T>
T gelu_grad(T x) {
    const T u = static_cast<T>(kGeluK) * (x + static_cast<T>(kGeluC) * x * x * x);
    const T th = fast_tanh(u);
    const T du = static_cast<T>(kGeluK) * (T(1) + T(3) * static_cast<T>(kGeluC) * x * x);
    return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

// Fixed-order 8-lane partial sum; deterministic and wide enough to hide the
// FP add latency chain.
template <typename T>
T sum_fixed(const T* __restrict__ x, int n) {
    T acc[8] = {};
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int k = 0; k < 8; ++k) acc[k] += x[i + k];
    }
    T tail = T(0);
    for (; i < n; ++i) tail += x[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

// y[t] = x[t] W + b, W stored [in, out] row-major.
template <typename T>
void linear_forward(const T* __restrict__ x, const T* __restrict__ w, const T* __restrict__ b,
                    T* __restrict__ y, int rows, int in, int out) {
    for (int t = 0; t < rows; ++t) {
        T* __restrict__ yr = y + static_cast<int64_t>(t) * out;
        std::memcpy(yr, b, sizeof(T) * out);
        const T* __restrict__ xr = x + static_cast<int64_t>(t) * in;
        for (int i = 0; i < in; ++i) {
            const T xi = xr[i];
            const T* __restrict__ wr = w + static_cast<int64_t>(i) * out;
            for (int o = 0; o < out; ++o) yr[o] += xi * wr[o];
        }
    }
}

// Accumulates dx += dy W^T, dw += x^T dy, db += sum_t dy. dx may be null;
// when present, wt_scratch must hold in * out entries: the dy W^T product is
// taken against a transposed copy so the inner loop is a contiguous axpy.
template <typename T>
void linear_backward(const T* __restrict__ x, const T* __restrict__ w, const T* __restrict__ dy,
                     T* __restrict__ dx, T* __restrict__ dw, T* __restrict__ db, int rows, int in,
                     int out, T* __restrict__ wt_scratch = nullptr) {
    for (int t = 0; t < rows; ++t) {
        const T* __restrict__ dyr = dy + static_cast<int64_t>(t) * out;
        for (int o = 0; o < out; ++o) db[o] += dyr[o];
        const T* __restrict__ xr = x + static_cast<int64_t>(t) * in;
        for (int i = 0; i < in; ++i) {
            const T xi = xr[i];
            T* __restrict__ dwr = dw + static_cast<int64_t>(i) * out;
            for (int o = 0; o < out; ++o) dwr[o] += xi * dyr[o];
        }
    }
    if (!dx) return;
    if (wt_scratch) {
        for (int i = 0; i < in; ++i) {
            for (int o = 0; o < out; ++o) {
                wt_scratch[static_cast<int64_t>(o) * in + i] = w[static_cast<int64_t>(i) * out + o];
            }
        }
        for (int t = 0; t < rows; ++t) {
            const T* __restrict__ dyr = dy + static_cast<int64_t>(t) * out;
            T* __restrict__ dxr = dx + static_cast<int64_t>(t) * in;
            for (int o = 0; o < out; ++o) {
                const T dyo = dyr[o];
                const T* __restrict__ wtr = wt_scratch + static_cast<int64_t>(o) * in;
                for (int i = 0; i < in; ++i) dxr[i] += dyo * wtr[i];
            }
        }
    } else {
        for (int t = 0; t < rows; ++t) {
            const T* __restrict__ dyr = dy + static_cast<int64_t>(t) * out;
            T* __restrict__ dxr = dx + static_cast<int64_t>(t) * in;
            for (int i = 0; i < in; ++i) {
                const T* __restrict__ wr = w + static_cast<int64_t>(i) * out;
                T acc[8] = {};
                int o = 0;
                for (; o + 8 <= out; o += 8) {
                    for (int k = 0; k < 8; ++k) acc[k] += dyr[o + k] * wr[o + k];
                }
                T tail = T(0);
                for (; o < out; ++o) tail += dyr[o] * wr[o];
                dxr[i] += ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
                          ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
            }
        }
    }
}

template <typename T>
void layernorm_forward(const T* __restrict__ x, const T* __restrict__ g, const T* __restrict__ b,
                       T* __restrict__ y, T* __restrict__ mean, T* __restrict__ rstd, int rows,
                       int d) {
    for (int t = 0; t < rows; ++t) {
        const T* __restrict__ xr = x + static_cast<int64_t>(t) * d;
        T* __restrict__ yr = y + static_cast<int64_t>(t) * d;
        const T mu = sum_fixed(xr, d) / static_cast<T>(d);
        for (int i = 0; i < d; ++i) yr[i] = (xr[i] - mu) * (xr[i] - mu);
        const T var = sum_fixed(yr, d) / static_cast<T>(d);
        const T r = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
        mean[t] = mu;
        rstd[t] = r;
        for (int i = 0; i < d; ++i) yr[i] = g[i] * (xr[i] - mu) * r + b[i];
    }
}

// Accumulates into dx, dg, db. scratch must hold 2 * d entries.
template <typename T>
void layernorm_backward(const T* __restrict__ x, const T* __restrict__ g,
                        const T* __restrict__ mean, const T* __restrict__ rstd,
                        const T* __restrict__ dy, T* __restrict__ dx, T* __restrict__ dg,
                        T* __restrict__ db, int rows, int d, T* __restrict__ scratch) {
    T* __restrict__ s1 = scratch;
    T* __restrict__ s2 = scratch + d;
    for (int t = 0; t < rows; ++t) {
        const T* __restrict__ xr = x + static_cast<int64_t>(t) * d;
        const T* __restrict__ dyr = dy + static_cast<int64_t>(t) * d;
        T* __restrict__ dxr = dx + static_cast<int64_t>(t) * d;
        const T mu = mean[t];
        const T r = rstd[t];

        for (int i = 0; i < d; ++i) {
            const T xhat = (xr[i] - mu) * r;
            const T dxhat = dyr[i] * g[i];
            dg[i] += dyr[i] * xhat;
            db[i] += dyr[i];
            s1[i] = dxhat;
            s2[i] = dxhat * xhat;
        }
        const T m1 = sum_fixed(s1, d) / static_cast<T>(d);
        const T m2 = sum_fixed(s2, d) / static_cast<T>(d);
        for (int i = 0; i < d; ++i) {
            const T xhat = (xr[i] - mu) * r;
            dxr[i] += r * (s1[i] - m1 - xhat * m2);
        }
    }
}

// [rows, d] -> [d, rows]; makes per-head columns contiguous for the row-wide
// score and dp loops.
template <typename T>
void transpose_rows(const T* __restrict__ src, T* __restrict__ dst, int rows, int d) {
    for (int t = 0; t < rows; ++t) {
        const T* __restrict__ sr = src + static_cast<int64_t>(t) * d;
        for (int c = 0; c < d; ++c) dst[static_cast<int64_t>(c) * rows + t] = sr[c];
    }
}

// Causal multi-head attention over concatenated head layout. kt is the
// transposed key matrix [d, rows]; probs has room for heads * rows * rows.
template <typename T>
void causal_attention_forward(const T* __restrict__ q, const T* __restrict__ kt,
                              const T* __restrict__ v, T* __restrict__ probs, T* __restrict__ out,
                              int rows, int d, int heads) {
    const int hs = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hs));
    std::fill(out, out + static_cast<int64_t>(rows) * d, T(0));
    for (int h = 0; h < heads; ++h) {
        const int off = h * hs;
        T* __restrict__ hp = probs + static_cast<int64_t>(h) * rows * rows;
        for (int t = 0; t < rows; ++t) {
            T* __restrict__ prow = hp + static_cast<int64_t>(t) * rows;
            const T* __restrict__ qt = q + static_cast<int64_t>(t) * d + off;
            const int n = t + 1;

            std::fill(prow, prow + rows, T(0));
            for (int c = 0; c < hs; ++c) {
                const T qc = qt[c] * scale;
                const T* __restrict__ krow = kt + static_cast<int64_t>(off + c) * rows;
                for (int u = 0; u < n; ++u) prow[u] += qc * krow[u];
            }
            T maxs = prow[0];
            for (int u = 1; u < n; ++u) maxs = std::max(maxs, prow[u]);
            for (int u = 0; u < n; ++u) prow[u] = fast_exp(prow[u] - maxs);
            const T inv = T(1) / sum_fixed(prow, n);
            for (int u = 0; u < n; ++u) prow[u] *= inv;

            T* __restrict__ ot = out + static_cast<int64_t>(t) * d + off;
            for (int u = 0; u < n; ++u) {
                const T* __restrict__ vu = v + static_cast<int64_t>(u) * d + off;
                const T p = prow[u];
                for (int c = 0; c < hs; ++c) ot[c] += p * vu[c];
            }
        }
    }
}

// Accumulates into dq, dk, dv. vt is the transposed value matrix [d, rows];
// scratch must hold 2 * rows entries.
template <typename T>
void causal_attention_backward(const T* __restrict__ q, const T* __restrict__ k,
                               const T* __restrict__ vt, const T* __restrict__ probs,
                               const T* __restrict__ dout, T* __restrict__ dq, T* __restrict__ dk,
                               T* __restrict__ dv, T* __restrict__ scratch, int rows, int d,
                               int heads) {
    const int hs = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hs));
    T* __restrict__ dp = scratch;
    T* __restrict__ pd_terms = scratch + rows;
    for (int h = 0; h < heads; ++h) {
        const int off = h * hs;
        const T* __restrict__ hp = probs + static_cast<int64_t>(h) * rows * rows;
        for (int t = 0; t < rows; ++t) {
            const T* __restrict__ prow = hp + static_cast<int64_t>(t) * rows;
            const T* __restrict__ dot = dout + static_cast<int64_t>(t) * d + off;
            const T* __restrict__ qt = q + static_cast<int64_t>(t) * d + off;
            T* __restrict__ dqt = dq + static_cast<int64_t>(t) * d + off;
            const int n = t + 1;

            // dp[u] = dout_t . v_u ; dv_u += p[u] * dout_t
            std::fill(dp, dp + n, T(0));
            for (int c = 0; c < hs; ++c) {
                const T dc = dot[c];
                const T* __restrict__ vrow = vt + static_cast<int64_t>(off + c) * rows;
                for (int u = 0; u < n; ++u) dp[u] += dc * vrow[u];
            }
            for (int u = 0; u < n; ++u) {
                T* __restrict__ dvu = dv + static_cast<int64_t>(u) * d + off;
                const T p = prow[u];
                for (int c = 0; c < hs; ++c) dvu[c] += p * dot[c];
            }

            for (int u = 0; u < n; ++u) pd_terms[u] = prow[u] * dp[u];
            const T pd = sum_fixed(pd_terms, n);

            // softmax backward, then q/k grads
            for (int u = 0; u < n; ++u) {
                const T ds = prow[u] * (dp[u] - pd) * scale;
                const T* __restrict__ ku = k + static_cast<int64_t>(u) * d + off;
                T* __restrict__ dku = dk + static_cast<int64_t>(u) * d + off;
                for (int c = 0; c < hs; ++c) {
                    dqt[c] += ds * ku[c];
                    dku[c] += ds * qt[c];
                }
            }
        }
    }
}

// Cross attention: queries from the token stream, keys/values from the
// conditioning rows. No mask.
template <typename T>
void cross_attention_forward(const T* q, const T* k, const T* v, T* probs, T* out, int rows,
                             int n_cond, int d, int heads) {
    const int hs = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hs));
    std::fill(out, out + static_cast<int64_t>(rows) * d, T(0));
    for (int h = 0; h < heads; ++h) {
        const int off = h * hs;
        T* hp = probs + static_cast<int64_t>(h) * rows * n_cond;
        for (int t = 0; t < rows; ++t) {
            T* prow = hp + static_cast<int64_t>(t) * n_cond;
            const T* qt = q + static_cast<int64_t>(t) * d + off;
            T maxs = -std::numeric_limits<T>::infinity();
            for (int u = 0; u < n_cond; ++u) {
                const T* ku = k + static_cast<int64_t>(u) * d + off;
                T s = T(0);
                for (int c = 0; c < hs; ++c) s += qt[c] * ku[c];
                s *= scale;
                prow[u] = s;
                maxs = std::max(maxs, s);
            }
            T denom = T(0);
            for (int u = 0; u < n_cond; ++u) {
                prow[u] = fast_exp(prow[u] - maxs);
                denom += prow[u];
            }
            const T inv = T(1) / denom;
            T* ot = out + static_cast<int64_t>(t) * d + off;
            for (int u = 0; u < n_cond; ++u) {
                prow[u] *= inv;
                const T* vu = v + static_cast<int64_t>(u) * d + off;
                const T p = prow[u];
                for (int c = 0; c < hs; ++c) ot[c] += p * vu[c];
            }
        }
    }
}

template <typename T>
void cross_attention_backward(const T* q, const T* k, const T* v, const T* probs, const T* dout,
                              T* dq, T* dk, T* dv, T* scratch, int rows, int n_cond, int d,
                              int heads) {
    const int hs = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hs));
    for (int h = 0; h < heads; ++h) {
        const int off = h * hs;
        const T* hp = probs + static_cast<int64_t>(h) * rows * n_cond;
        for (int t = 0; t < rows; ++t) {
            const T* prow = hp + static_cast<int64_t>(t) * n_cond;
            const T* dot = dout + static_cast<int64_t>(t) * d + off;
            const T* qt = q + static_cast<int64_t>(t) * d + off;
            T* dqt = dq + static_cast<int64_t>(t) * d + off;

            T pd = T(0);
            for (int u = 0; u < n_cond; ++u) {
                const T* vu = v + static_cast<int64_t>(u) * d + off;
                T* dvu = dv + static_cast<int64_t>(u) * d + off;
                T dp = T(0);
                const T p = prow[u];
                for (int c = 0; c < hs; ++c) {
                    dp += dot[c] * vu[c];
                    dvu[c] += p * dot[c];
                }
                scratch[u] = dp;
                pd += p * dp;
            }
            for (int u = 0; u < n_cond; ++u) {
                const T ds = prow[u] * (scratch[u] - pd) * scale;
                const T* ku = k + static_cast<int64_t>(u) * d + off;
                T* dku = dk + static_cast<int64_t>(u) * d + off;
                for (int c = 0; c < hs; ++c) {
                    dqt[c] += ds * ku[c];
                    dku[c] += ds * qt[c];
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Workspace and the fused forward/backward passes
// ---------------------------------------------------------------------------

template <typename T>
struct LayerActs {
    std::vector<T> ln1, ln1_mean, ln1_rstd;
    std::vector<T> q, k, v, att_probs, att;
    std::vector<T> x_attn; // after self-attention residual
    std::vector<T> ln2, ln2_mean, ln2_rstd;
    std::vector<T> cq, ck, cv, cross_probs, catt;
    std::vector<T> x_cross; // after cross-attention residual
    std::vector<T> ln3, ln3_mean, ln3_rstd;
    std::vector<T> hpre, hact;
};

template <typename T>
struct Workspace {
    // xs[0] = embeddings, xs[l+1] = output of layer l
    std::vector<std::vector<T>> xs;
    std::vector<LayerActs<T>> layers;
    std::vector<T> lnf, lnf_mean, lnf_rstd, logits;
    std::vector<T> cond_rows; // [n_cond, d], the rows cross-attention sees
    std::vector<T> chpre, chact; // conditioning MLP intermediates (n_cond == 1)

    // gradient scratch
    std::vector<T> dx, dln, dq, dk, dv, datt, dstage;
    std::vector<T> dcq, dck, dcv, dcatt, dcond;
    std::vector<T> dh1, dh2; // MLP hidden grads
    std::vector<T> dlogits, dxf, attn_scratch;
    std::vector<T> kvt;        // transposed K or V, [d, rows]
    std::vector<T> wt_scratch; // transposed weight for the dx axpy path
    std::vector<T> ln_scratch; // 2 * d
};

template <typename T>
void resize_ws(Workspace<T>& ws, const ModelConfig& cfg, int rows, int n_cond) {
    const size_t td = static_cast<size_t>(rows) * cfg.d_model;
    const size_t tf = static_cast<size_t>(rows) * 4 * cfg.d_model;
    const size_t tv = static_cast<size_t>(rows) * cfg.vocab_size;
    const size_t cd = static_cast<size_t>(n_cond) * cfg.d_model;

    ws.xs.resize(cfg.n_layers + 1);
    for (auto& x : ws.xs) x.resize(td);
    ws.layers.resize(cfg.n_layers);
    for (auto& l : ws.layers) {
        l.ln1.resize(td);
        l.ln1_mean.resize(rows);
        l.ln1_rstd.resize(rows);
        l.q.resize(td);
        l.k.resize(td);
        l.v.resize(td);
        l.att_probs.resize(static_cast<size_t>(cfg.n_heads) * rows * rows);
        l.att.resize(td);
        l.x_attn.resize(td);
        l.ln2.resize(td);
        l.ln2_mean.resize(rows);
        l.ln2_rstd.resize(rows);
        l.cq.resize(td);
        l.ck.resize(cd);
        l.cv.resize(cd);
        l.cross_probs.resize(static_cast<size_t>(cfg.n_heads) * rows * n_cond);
        l.catt.resize(td);
        l.x_cross.resize(td);
        l.ln3.resize(td);
        l.ln3_mean.resize(rows);
        l.ln3_rstd.resize(rows);
        l.hpre.resize(tf);
        l.hact.resize(tf);
    }
    ws.lnf.resize(td);
    ws.lnf_mean.resize(rows);
    ws.lnf_rstd.resize(rows);
    ws.logits.resize(tv);
    ws.cond_rows.resize(cd);
    ws.chpre.resize(cfg.d_model);
    ws.chact.resize(cfg.d_model);

    ws.dx.resize(td);
    ws.dln.resize(td);
    ws.dq.resize(td);
    ws.dk.resize(td);
    ws.dv.resize(td);
    ws.datt.resize(td);
    ws.dstage.resize(td);
    ws.dcq.resize(td);
    ws.dck.resize(cd);
    ws.dcv.resize(cd);
    ws.dcatt.resize(td);
    ws.dcond.resize(cd);
    ws.dh1.resize(tf);
    ws.dh2.resize(tf);
    ws.dlogits.resize(tv);
    ws.dxf.resize(td);
    ws.attn_scratch.resize(2 * static_cast<size_t>(std::max(rows, n_cond)));
    ws.kvt.resize(td);
    ws.wt_scratch.resize(static_cast<size_t>(cfg.d_model) *
                         std::max({cfg.vocab_size, 4 * cfg.d_model, cfg.d_cond_in}));
    ws.ln_scratch.resize(2 * static_cast<size_t>(cfg.d_model));
}

// Within-panel slot of position `pos`; specials use slot 0.
inline int slot_of(int pos, ParamClass cls, int spp) {
    if (pos == 0 || cls == ParamClass::kSpecial) return 0;
    return (pos - 1) % spp;
}

template <typename T>
void embed_forward(const ModelParamsT<T>& params, const ModelConfig& cfg, const TokenSeq& tokens,
                   int rows, T* out) {
    const int d = cfg.d_model;
    const int spp = cfg.slots_per_panel();
    for (int t = 0; t < rows; ++t) {
        const int32_t id = tokens.ids[t];
        if (id < 0 || id >= cfg.vocab_size) {
            throw TokenOutOfRangeError("embed_tokens: id " + std::to_string(id) +
                                       " outside vocabulary of " + std::to_string(cfg.vocab_size));
        }
        const TokenMeta& m = tokens.meta[t];
        if (m.panel < 0 || m.panel > cfg.max_panels) {
            throw ConfigError("embed_tokens: panel index " + std::to_string(m.panel) +
                              " outside the panel table");
        }
        const int slot = slot_of(t, m.cls, spp);
        const T* ve = params.value_emb.data() + static_cast<int64_t>(id) * d;
        const T* pe = params.param_emb.data() + static_cast<int64_t>(static_cast<int32_t>(m.cls)) * d;
        const T* ne = params.panel_emb.data() + static_cast<int64_t>(m.panel) * d;
        const T* se = params.slot_emb.data() + static_cast<int64_t>(slot) * d;
        T* row = out + static_cast<int64_t>(t) * d;
        if (cfg.slot_embedding) {
            for (int i = 0; i < d; ++i) row[i] = ve[i] + pe[i] + ne[i] + se[i];
        } else {
            for (int i = 0; i < d; ++i) row[i] = ve[i] + pe[i] + ne[i];
        }
    }
}

template <typename T>
void embed_backward(const ModelConfig& cfg, const TokenSeq& tokens, int rows, const T* dx,
                    ModelParamsT<T>& grad) {
    const int d = cfg.d_model;
    const int spp = cfg.slots_per_panel();
    for (int t = 0; t < rows; ++t) {
        const int32_t id = tokens.ids[t];
        const TokenMeta& m = tokens.meta[t];
        const int slot = slot_of(t, m.cls, spp);
        const T* row = dx + static_cast<int64_t>(t) * d;
        T* ve = grad.value_emb.data() + static_cast<int64_t>(id) * d;
        T* pe = grad.param_emb.data() + static_cast<int64_t>(static_cast<int32_t>(m.cls)) * d;
        T* ne = grad.panel_emb.data() + static_cast<int64_t>(m.panel) * d;
        T* se = grad.slot_emb.data() + static_cast<int64_t>(slot) * d;
        for (int i = 0; i < d; ++i) {
            ve[i] += row[i];
            pe[i] += row[i];
            ne[i] += row[i];
            if (cfg.slot_embedding) se[i] += row[i];
        }
    }
}

// Builds ws.cond_rows: either the projected caption embedding (storing the MLP
// intermediates for backward) or the learned null token.
template <typename T>
void condition_forward(const ModelParamsT<T>& params, const ModelConfig& cfg, const T* raw,
                       Workspace<T>& ws) {
    const int d = cfg.d_model;
    if (raw == nullptr) {
        std::memcpy(ws.cond_rows.data(), params.cond_null.data(), sizeof(T) * d);
        return;
    }
    linear_forward(raw, params.cond_w1.data(), params.cond_b1.data(), ws.chpre.data(), 1,
                   cfg.d_cond_in, d);
    for (int i = 0; i < d; ++i) ws.chact[i] = gelu(ws.chpre[i]);
    linear_forward(ws.chact.data(), params.cond_w2.data(), params.cond_b2.data(),
                   ws.cond_rows.data(), 1, d, d);
}

template <typename T>
void condition_backward(const ModelParamsT<T>& params, const ModelConfig& cfg, const T* raw,
                        Workspace<T>& ws, ModelParamsT<T>& grad) {
    const int d = cfg.d_model;
    if (raw == nullptr) {
        T* g = grad.cond_null.data();
        for (int i = 0; i < d; ++i) g[i] += ws.dcond[i];
        return;
    }
    std::fill(ws.dh1.begin(), ws.dh1.begin() + d, T(0));
    linear_backward(ws.chact.data(), params.cond_w2.data(), ws.dcond.data(), ws.dh1.data(),
                    grad.cond_w2.data(), grad.cond_b2.data(), 1, d, d, ws.wt_scratch.data());
    for (int i = 0; i < d; ++i) ws.dh2[i] = ws.dh1[i] * gelu_grad(ws.chpre[i]);
    linear_backward(raw, params.cond_w1.data(), ws.dh2.data(), static_cast<T*>(nullptr),
                    grad.cond_w1.data(), grad.cond_b1.data(), 1, cfg.d_cond_in, d);
}

// Forward over `rows` input tokens with the conditioning rows already in
// ws.cond_rows. Leaves logits in ws.logits.
template <typename T>
void forward_pass(const ModelParamsT<T>& params, const ModelConfig& cfg, const TokenSeq& tokens,
                  int rows, int n_cond, Workspace<T>& ws) {
    const int d = cfg.d_model;
    const int f = 4 * d;
    const int heads = cfg.n_heads;

    embed_forward(params, cfg, tokens, rows, ws.xs[0].data());

    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& lp = params.layers[l];
        auto& a = ws.layers[l];
        const T* x_in = ws.xs[l].data();

        layernorm_forward(x_in, lp.ln1_w.data(), lp.ln1_b.data(), a.ln1.data(), a.ln1_mean.data(),
                          a.ln1_rstd.data(), rows, d);
        linear_forward(a.ln1.data(), lp.attn_wq.data(), lp.attn_bq.data(), a.q.data(), rows, d, d);
        linear_forward(a.ln1.data(), lp.attn_wk.data(), lp.attn_bk.data(), a.k.data(), rows, d, d);
        linear_forward(a.ln1.data(), lp.attn_wv.data(), lp.attn_bv.data(), a.v.data(), rows, d, d);
        transpose_rows(a.k.data(), ws.kvt.data(), rows, d);
        causal_attention_forward(a.q.data(), ws.kvt.data(), a.v.data(), a.att_probs.data(),
                                 a.att.data(), rows, d, heads);
        linear_forward(a.att.data(), lp.attn_wo.data(), lp.attn_bo.data(), ws.dstage.data(), rows,
                       d, d);
        for (int i = 0; i < rows * d; ++i) a.x_attn[i] = x_in[i] + ws.dstage[i];

        layernorm_forward(a.x_attn.data(), lp.ln2_w.data(), lp.ln2_b.data(), a.ln2.data(),
                          a.ln2_mean.data(), a.ln2_rstd.data(), rows, d);
        linear_forward(a.ln2.data(), lp.cross_wq.data(), lp.cross_bq.data(), a.cq.data(), rows, d, d);
        linear_forward(ws.cond_rows.data(), lp.cross_wk.data(), lp.cross_bk.data(), a.ck.data(),
                       n_cond, d, d);
        linear_forward(ws.cond_rows.data(), lp.cross_wv.data(), lp.cross_bv.data(), a.cv.data(),
                       n_cond, d, d);
        cross_attention_forward(a.cq.data(), a.ck.data(), a.cv.data(), a.cross_probs.data(),
                                a.catt.data(), rows, n_cond, d, heads);
        linear_forward(a.catt.data(), lp.cross_wo.data(), lp.cross_bo.data(), ws.dstage.data(),
                       rows, d, d);
        for (int i = 0; i < rows * d; ++i) a.x_cross[i] = a.x_attn[i] + ws.dstage[i];

        layernorm_forward(a.x_cross.data(), lp.ln3_w.data(), lp.ln3_b.data(), a.ln3.data(),
                          a.ln3_mean.data(), a.ln3_rstd.data(), rows, d);
        linear_forward(a.ln3.data(), lp.mlp_w1.data(), lp.mlp_b1.data(), a.hpre.data(), rows, d, f);
        for (int i = 0; i < rows * f; ++i) a.hact[i] = gelu(a.hpre[i]);
        linear_forward(a.hact.data(), lp.mlp_w2.data(), lp.mlp_b2.data(), ws.xs[l + 1].data(), rows,
                       f, d);
        T* x_out = ws.xs[l + 1].data();
        for (int i = 0; i < rows * d; ++i) x_out[i] += a.x_cross[i];
    }

    layernorm_forward(ws.xs[cfg.n_layers].data(), params.lnf_w.data(), params.lnf_b.data(),
                      ws.lnf.data(), ws.lnf_mean.data(), ws.lnf_rstd.data(), rows, d);
    linear_forward(ws.lnf.data(), params.head_w.data(), params.head_b.data(), ws.logits.data(),
                   rows, d, cfg.vocab_size);
}

// Cross-entropy over valid targets. Fills ws.dlogits with the unscaled
// gradient (softmax - onehot per valid row) and returns the summed nll.
template <typename T>
double loss_and_dlogits(const ModelConfig& cfg, const std::vector<int32_t>& targets, int rows,
                        Workspace<T>& ws, int64_t& n_valid) {
    const int v = cfg.vocab_size;
    double loss_sum = 0.0;
    n_valid = 0;
    std::fill(ws.dlogits.begin(), ws.dlogits.begin() + static_cast<size_t>(rows) * v, T(0));
    for (int t = 0; t < rows; ++t) {
        const int32_t y = targets[t];
        const T* __restrict__ lr = ws.logits.data() + static_cast<int64_t>(t) * v;
        T* __restrict__ dl = ws.dlogits.data() + static_cast<int64_t>(t) * v;
        if (y < 0 || y == kPadId) continue;
        if (y >= v) throw TokenOutOfRangeError("nll: target outside vocabulary");
        T maxl = lr[0];
        for (int i = 1; i < v; ++i) maxl = std::max(maxl, lr[i]);
        if (!std::isfinite(maxl)) {
            throw Error("nll: non-finite logits at position " + std::to_string(t));
        }
        for (int i = 0; i < v; ++i) dl[i] = fast_exp(lr[i] - maxl);
        const T denom = sum_fixed(dl, v);
        loss_sum += static_cast<double>(maxl) + std::log(static_cast<double>(denom)) -
                    static_cast<double>(lr[y]);
        const T inv = T(1) / denom;
        for (int i = 0; i < v; ++i) dl[i] *= inv;
        dl[y] -= T(1);
        ++n_valid;
    }
    return loss_sum;
}

// Backward through the whole stack. ws must hold the forward activations;
// ws.dlogits the output gradient. Accumulates parameter gradients into `grad`.
template <typename T>
void backward_pass(const ModelParamsT<T>& params, const ModelConfig& cfg, const TokenSeq& tokens,
                   int rows, int n_cond, const T* cond_raw, Workspace<T>& ws,
                   ModelParamsT<T>& grad) {
    const int d = cfg.d_model;
    const int f = 4 * d;
    const int heads = cfg.n_heads;
    const size_t td = static_cast<size_t>(rows) * d;
    const size_t cd = static_cast<size_t>(n_cond) * d;

    std::fill(ws.dxf.begin(), ws.dxf.begin() + td, T(0));
    linear_backward(ws.lnf.data(), params.head_w.data(), ws.dlogits.data(), ws.dxf.data(),
                    grad.head_w.data(), grad.head_b.data(), rows, d, cfg.vocab_size,
                    ws.wt_scratch.data());

    std::fill(ws.dx.begin(), ws.dx.begin() + td, T(0));
    layernorm_backward(ws.xs[cfg.n_layers].data(), params.lnf_w.data(), ws.lnf_mean.data(),
                       ws.lnf_rstd.data(), ws.dxf.data(), ws.dx.data(), grad.lnf_w.data(),
                       grad.lnf_b.data(), rows, d, ws.ln_scratch.data());

    std::fill(ws.dcond.begin(), ws.dcond.begin() + cd, T(0));

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const auto& lp = params.layers[l];
        auto& gl = grad.layers[l];
        auto& a = ws.layers[l];
        const T* x_in = ws.xs[l].data();

        // MLP stage: x_out = x_cross + mlp(ln3(x_cross))
        std::fill(ws.dh1.begin(), ws.dh1.begin() + static_cast<size_t>(rows) * f, T(0));
        linear_backward(a.hact.data(), lp.mlp_w2.data(), ws.dx.data(), ws.dh1.data(),
                        gl.mlp_w2.data(), gl.mlp_b2.data(), rows, f, d, ws.wt_scratch.data());
        for (int i = 0; i < rows * f; ++i) ws.dh2[i] = ws.dh1[i] * gelu_grad(a.hpre[i]);
        std::fill(ws.dln.begin(), ws.dln.begin() + td, T(0));
        linear_backward(a.ln3.data(), lp.mlp_w1.data(), ws.dh2.data(), ws.dln.data(),
                        gl.mlp_w1.data(), gl.mlp_b1.data(), rows, d, f, ws.wt_scratch.data());
        layernorm_backward(a.x_cross.data(), lp.ln3_w.data(), a.ln3_mean.data(), a.ln3_rstd.data(),
                           ws.dln.data(), ws.dx.data(), gl.ln3_w.data(), gl.ln3_b.data(), rows, d,
                           ws.ln_scratch.data());

        // Cross-attention stage: x_cross = x_attn + wo(catt)
        std::fill(ws.dcatt.begin(), ws.dcatt.begin() + td, T(0));
        linear_backward(a.catt.data(), lp.cross_wo.data(), ws.dx.data(), ws.dcatt.data(),
                        gl.cross_wo.data(), gl.cross_bo.data(), rows, d, d, ws.wt_scratch.data());
        std::fill(ws.dcq.begin(), ws.dcq.begin() + td, T(0));
        std::fill(ws.dck.begin(), ws.dck.begin() + cd, T(0));
        std::fill(ws.dcv.begin(), ws.dcv.begin() + cd, T(0));
        cross_attention_backward(a.cq.data(), a.ck.data(), a.cv.data(), a.cross_probs.data(),
                                 ws.dcatt.data(), ws.dcq.data(), ws.dck.data(), ws.dcv.data(),
                                 ws.attn_scratch.data(), rows, n_cond, d, heads);
        std::fill(ws.dln.begin(), ws.dln.begin() + td, T(0));
        linear_backward(a.ln2.data(), lp.cross_wq.data(), ws.dcq.data(), ws.dln.data(),
                        gl.cross_wq.data(), gl.cross_bq.data(), rows, d, d, ws.wt_scratch.data());
        linear_backward(ws.cond_rows.data(), lp.cross_wk.data(), ws.dck.data(), ws.dcond.data(),
                        gl.cross_wk.data(), gl.cross_bk.data(), n_cond, d, d, ws.wt_scratch.data());
        linear_backward(ws.cond_rows.data(), lp.cross_wv.data(), ws.dcv.data(), ws.dcond.data(),
                        gl.cross_wv.data(), gl.cross_bv.data(), n_cond, d, d, ws.wt_scratch.data());
        layernorm_backward(a.x_attn.data(), lp.ln2_w.data(), a.ln2_mean.data(), a.ln2_rstd.data(),
                           ws.dln.data(), ws.dx.data(), gl.ln2_w.data(), gl.ln2_b.data(), rows, d,
                           ws.ln_scratch.data());

        // Self-attention stage: x_attn = x_in + wo(att)
        std::fill(ws.datt.begin(), ws.datt.begin() + td, T(0));
        linear_backward(a.att.data(), lp.attn_wo.data(), ws.dx.data(), ws.datt.data(),
                        gl.attn_wo.data(), gl.attn_bo.data(), rows, d, d, ws.wt_scratch.data());
        std::fill(ws.dq.begin(), ws.dq.begin() + td, T(0));
        std::fill(ws.dk.begin(), ws.dk.begin() + td, T(0));
        std::fill(ws.dv.begin(), ws.dv.begin() + td, T(0));
        transpose_rows(a.v.data(), ws.kvt.data(), rows, d);
        causal_attention_backward(a.q.data(), a.k.data(), ws.kvt.data(), a.att_probs.data(),
                                  ws.datt.data(), ws.dq.data(), ws.dk.data(), ws.dv.data(),
                                  ws.attn_scratch.data(), rows, d, heads);
        std::fill(ws.dln.begin(), ws.dln.begin() + td, T(0));
        linear_backward(a.ln1.data(), lp.attn_wq.data(), ws.dq.data(), ws.dln.data(),
                        gl.attn_wq.data(), gl.attn_bq.data(), rows, d, d, ws.wt_scratch.data());
        linear_backward(a.ln1.data(), lp.attn_wk.data(), ws.dk.data(), ws.dln.data(),
                        gl.attn_wk.data(), gl.attn_bk.data(), rows, d, d, ws.wt_scratch.data());
        linear_backward(a.ln1.data(), lp.attn_wv.data(), ws.dv.data(), ws.dln.data(),
                        gl.attn_wv.data(), gl.attn_bv.data(), rows, d, d, ws.wt_scratch.data());
        layernorm_backward(x_in, lp.ln1_w.data(), a.ln1_mean.data(), a.ln1_rstd.data(),
                           ws.dln.data(), ws.dx.data(), gl.ln1_w.data(), gl.ln1_b.data(), rows, d,
                           ws.ln_scratch.data());
    }

    embed_backward(cfg, tokens, rows, ws.dx.data(), grad);
    condition_backward(params, cfg, cond_raw, ws, grad);
}

// One teacher-forced sample: inputs are ids[0..L-2], targets ids[1..L-1].
// Returns the summed nll; accumulates gradients into `grad`.
template <typename T>
double forward_backward_sample(const ModelParamsT<T>& params, const ModelConfig& cfg,
                               const TokenSeq& tokens, const T* cond_raw, Workspace<T>& ws,
                               ModelParamsT<T>& grad, int64_t& n_tokens) {
    const int len = tokens.length();
    if (len < 2) throw Error("train: sequence too short to form targets");
    if (len > cfg.max_seq_len) throw Error("train: sequence exceeds max_seq_len");
    if (tokens.meta.size() != tokens.ids.size()) throw ConfigError("train: token meta missing");

    const int rows = len - 1;
    resize_ws(ws, cfg, rows, 1);
    condition_forward(params, cfg, cond_raw, ws);
    forward_pass(params, cfg, tokens, rows, 1, ws);

    std::vector<int32_t> targets(tokens.ids.begin() + 1, tokens.ids.end());
    int64_t n_valid = 0;
    const double loss = loss_and_dlogits(cfg, targets, rows, ws, n_valid);
    backward_pass(params, cfg, tokens, rows, 1, cond_raw, ws, grad);
    n_tokens = n_valid;
    return loss;
}

template <typename T>
void zero_params(ModelParamsT<T>& p) {
    for (auto& [name, t] : named_tensors(p)) t->zero();
}

template <typename T>
void accumulate_params(ModelParamsT<T>& dst, const ModelParamsT<T>& src) {
    auto d = named_tensors(dst);
    auto s = named_tensors(src);
    for (size_t i = 0; i < d.size(); ++i) {
        T* a = d[i].second->data();
        const T* b = s[i].second->data();
        const int64_t n = d[i].second->size();
        for (int64_t j = 0; j < n; ++j) a[j] += b[j];
    }
}

} // namespace

// ---------------------------------------------------------------------------
// Public ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> embed_tokens_t(const ModelParamsT<T>& params, const ModelConfig& cfg,
                         const TokenSeq& tokens) {
    if (tokens.meta.size() != tokens.ids.size()) {
        throw ConfigError("embed_tokens: token meta missing");
    }
    if (tokens.length() > cfg.max_seq_len) {
        throw Error("embed_tokens: sequence exceeds max_seq_len");
    }
    Tensor<T> out({tokens.length(), cfg.d_model});
    embed_forward(params, cfg, tokens, tokens.length(), out.data());
    return out;
}

Tensor<float> embed_tokens(const ModelParams& params, const ModelConfig& cfg,
                           const TokenSeq& tokens) {
    return embed_tokens_t<float>(params, cfg, tokens);
}

template <typename T>
Tensor<T> forward_t(const ModelParamsT<T>& params, const ModelConfig& cfg, const TokenSeq& tokens,
                    const Tensor<T>& cond) {
    if (tokens.meta.size() != tokens.ids.size()) throw ConfigError("forward: token meta missing");
    if (tokens.length() > cfg.max_seq_len) throw Error("forward: sequence exceeds max_seq_len");
    if (cond.shape.size() != 2 || cond.dim(1) != cfg.d_model || cond.dim(0) < 1) {
        throw ConfigError("forward: conditioning must be [rows >= 1, d_model]");
    }
    const int rows = tokens.length();
    const int n_cond = static_cast<int>(cond.dim(0));
    Workspace<T> ws;
    resize_ws(ws, cfg, rows, n_cond);
    std::memcpy(ws.cond_rows.data(), cond.data(), sizeof(T) * cond.size());
    forward_pass(params, cfg, tokens, rows, n_cond, ws);
    Tensor<T> logits({rows, cfg.vocab_size});
    std::memcpy(logits.data(), ws.logits.data(), sizeof(T) * logits.size());
    return logits;
}

Tensor<float> forward(const ModelParams& params, const ModelConfig& cfg, const TokenSeq& tokens,
                      const CondEmbedding& cond) {
    if (cond.rows() < 1 || cond.d != cfg.d_model) {
        throw ConfigError("forward: conditioning embedding has the wrong shape");
    }
    Tensor<float> c({cond.rows(), cond.d});
    std::memcpy(c.data(), cond.data.data(), sizeof(float) * cond.data.size());
    return forward_t<float>(params, cfg, tokens, c);
}

template <typename T>
double nll_loss_t(const Tensor<T>& logits, const std::vector<int32_t>& targets) {
    if (logits.shape.size() != 2 || static_cast<size_t>(logits.dim(0)) != targets.size()) {
        throw Error("nll_loss: logits/targets length mismatch");
    }
    const int rows = static_cast<int>(logits.dim(0));
    const int v = static_cast<int>(logits.dim(1));
    double sum = 0.0;
    int64_t n = 0;
    for (int t = 0; t < rows; ++t) {
        const int32_t y = targets[t];
        if (y < 0 || y == kPadId) continue;
        if (y >= v) throw TokenOutOfRangeError("nll_loss: target outside vocabulary");
        const T* lr = logits.data() + static_cast<int64_t>(t) * v;
        T maxl = lr[0];
        for (int i = 1; i < v; ++i) maxl = std::max(maxl, lr[i]);
        double denom = 0.0;
        for (int i = 0; i < v; ++i) denom += std::exp(static_cast<double>(lr[i] - maxl));
        sum += static_cast<double>(maxl) + std::log(denom) - static_cast<double>(lr[y]);
        ++n;
    }
    if (n == 0) throw Error("nll_loss: no valid target positions");
    return sum / static_cast<double>(n);
}

double nll_loss(const Tensor<float>& logits, const std::vector<int32_t>& targets) {
    return nll_loss_t<float>(logits, targets);
}

template <typename T>
Tensor<T> project_condition_t(const ModelParamsT<T>& params, const ModelConfig& cfg,
                              const std::vector<T>& raw) {
    if (static_cast<int>(raw.size()) != cfg.d_cond_in) {
        throw ConfigError("project_condition: raw embedding has dim " + std::to_string(raw.size()) +
                          ", expected " + std::to_string(cfg.d_cond_in));
    }
    const int d = cfg.d_model;
    Tensor<T> h({1, d});
    std::vector<T> pre(d), act(d);
    linear_forward(raw.data(), params.cond_w1.data(), params.cond_b1.data(), pre.data(), 1,
                   cfg.d_cond_in, d);
    for (int i = 0; i < d; ++i) act[i] = gelu(pre[i]);
    linear_forward(act.data(), params.cond_w2.data(), params.cond_b2.data(), h.data(), 1, d, d);
    return h;
}

CondEmbedding project_condition(const ModelParams& params, const ModelConfig& cfg,
                                const std::vector<float>& raw) {
    Tensor<float> h = project_condition_t<float>(params, cfg, raw);
    CondEmbedding e;
    e.d = cfg.d_model;
    e.data.assign(h.data(), h.data() + h.size());
    return e;
}

CondEmbedding null_condition(const ModelParams& params, const ModelConfig& cfg) {
    CondEmbedding e;
    e.d = cfg.d_model;
    e.data.assign(params.cond_null.data(), params.cond_null.data() + cfg.d_model);
    return e;
}

AdamState make_adam_state(const ModelConfig& cfg) {
    return {make_param_skeleton<float>(cfg), make_param_skeleton<float>(cfg), 0};
}

double backward_and_step(ModelParams& params, const ModelConfig& cfg,
                         const std::vector<const TrainItem*>& batch, AdamState& opt,
                         const AdamConfig& hyper, int n_threads) {
    if (batch.empty()) throw Error("backward_and_step: empty batch");
    const int b = static_cast<int>(batch.size());
    n_threads = std::max(1, std::min(n_threads, b));

    // Per-sample gradient buffers reduced in sample order, so the result does
    // not depend on the thread count. Buffers persist across steps and are
    // rebuilt when the config changes. Plain statics: parameters are owned by
    // a single training driver, concurrent calls are not supported.
    static std::string cached_cfg;
    static std::vector<ModelParams> grad_bufs;
    static std::vector<Workspace<float>> workspaces;
    const std::string cfg_key = cfg.to_json_string();
    if (cfg_key != cached_cfg || static_cast<int>(grad_bufs.size()) < b) {
        cached_cfg = cfg_key;
        grad_bufs.assign(b, make_param_skeleton<float>(cfg));
        workspaces.assign(b, Workspace<float>{});
    }

    std::vector<double> losses(b, 0.0);
    std::vector<int64_t> counts(b, 0);
    std::vector<std::string> errors(b);

    auto run_sample = [&](int i) {
        try {
            zero_params(grad_bufs[i]);
            const TrainItem& item = *batch[i];
            const float* raw = item.cond_raw.empty() ? nullptr : item.cond_raw.data();
            if (raw && static_cast<int>(item.cond_raw.size()) != cfg.d_cond_in) {
                throw ConfigError("backward_and_step: cond_raw has the wrong width");
            }
            losses[i] = forward_backward_sample<float>(params, cfg, item.tokens, raw,
                                                       workspaces[i], grad_bufs[i], counts[i]);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    };

    if (n_threads == 1) {
        for (int i = 0; i < b; ++i) run_sample(i);
    } else {
        std::vector<std::thread> pool;
        for (int tid = 0; tid < n_threads; ++tid) {
            pool.emplace_back([&, tid] {
                for (int i = tid; i < b; i += n_threads) run_sample(i);
            });
        }
        for (auto& th : pool) th.join();
    }
    for (int i = 0; i < b; ++i) {
        if (!errors[i].empty()) throw Error("backward_and_step: sample " + std::to_string(i) + ": " + errors[i]);
    }

    double loss_sum = 0.0;
    int64_t token_sum = 0;
    for (int i = 0; i < b; ++i) {
        loss_sum += losses[i];
        token_sum += counts[i];
        if (i > 0) accumulate_params(grad_bufs[0], grad_bufs[i]);
    }
    if (token_sum == 0) throw Error("backward_and_step: no target tokens in batch");
    const double mean = loss_sum / static_cast<double>(token_sum);
    if (!std::isfinite(mean)) {
        throw Error("backward_and_step: non-finite loss at step " + std::to_string(opt.step + 1));
    }

    ++opt.step;
    auto pw = named_tensors(params);
    auto pg = named_tensors(grad_bufs[0]);
    auto pm = named_tensors(opt.m);
    auto pv = named_tensors(opt.v);
    const double scale = 1.0 / static_cast<double>(token_sum);
    for (size_t i = 0; i < pw.size(); ++i) {
        adam_update(pw[i].second->data(), pg[i].second->data(), pm[i].second->data(),
                    pv[i].second->data(), pw[i].second->size(), opt.step, hyper, scale);
    }
    return mean;
}

double mean_loss(const ModelParams& params, const ModelConfig& cfg,
                 const std::vector<const TrainItem*>& items) {
    Workspace<float> ws;
    double sum = 0.0;
    int64_t count = 0;
    for (const TrainItem* item : items) {
        const int len = item->tokens.length();
        if (len < 2) throw Error("mean_loss: sequence too short");
        const int rows = len - 1;
        resize_ws(ws, cfg, rows, 1);
        const float* raw = item->cond_raw.empty() ? nullptr : item->cond_raw.data();
        condition_forward(params, cfg, raw, ws);
        forward_pass(params, cfg, item->tokens, rows, 1, ws);
        std::vector<int32_t> targets(item->tokens.ids.begin() + 1, item->tokens.ids.end());
        int64_t n = 0;
        sum += loss_and_dlogits(cfg, targets, rows, ws, n);
        count += n;
    }
    if (count == 0) throw Error("mean_loss: no target tokens");
    return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

void softmax_inplace(float* x, int n) {
    float maxv = x[0];
    for (int i = 1; i < n; ++i) maxv = std::max(maxv, x[i]);
    double denom = 0.0;
    for (int i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - maxv);
        denom += x[i];
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (int i = 0; i < n; ++i) x[i] *= inv;
}

int sample_from_logits(const float* logits, int vocab, const SamplerOptions& opts, Rng& rng) {
    if (opts.temperature <= 0.0) {
        int best = 0;
        for (int i = 1; i < vocab; ++i) {
            if (logits[i] > logits[best]) best = i;
        }
        return best;
    }
    std::vector<float> p(logits, logits + vocab);
    const float inv_t = static_cast<float>(1.0 / opts.temperature);
    for (float& x : p) x *= inv_t;
    softmax_inplace(p.data(), vocab);

    if (opts.top_k && *opts.top_k < vocab) {
        const int k = std::max(1, *opts.top_k);
        std::vector<int> idx(vocab);
        for (int i = 0; i < vocab; ++i) idx[i] = i;
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
            if (p[a] != p[b]) return p[a] > p[b];
            return a < b;
        });
        std::vector<float> keep(vocab, 0.0f);
        double mass = 0.0;
        for (int i = 0; i < k; ++i) {
            keep[idx[i]] = p[idx[i]];
            mass += p[idx[i]];
        }
        const float inv = static_cast<float>(1.0 / mass);
        for (int i = 0; i < vocab; ++i) keep[i] *= inv;
        p.swap(keep);
    }

    const double u = rng.uniform();
    double acc = 0.0;
    int last_nonzero = 0;
    for (int i = 0; i < vocab; ++i) {
        if (p[i] <= 0.0f) continue;
        last_nonzero = i;
        acc += p[i];
        if (u < acc) return i;
    }
    return last_nonzero;
}

SampleResult sample(const ModelParams& params, const ModelConfig& cfg, const CondEmbedding& cond,
                    const SamplerOptions& opts, const TokenSeq* prefix) {
    cfg.validate();
    if (cond.rows() < 1 || cond.d != cfg.d_model) {
        throw ConfigError("sample: conditioning embedding has the wrong shape");
    }
    if (opts.top_k && *opts.top_k < 1) throw ConfigError("sample: top_k must be >= 1");
    const int spp = cfg.slots_per_panel();
    const int capacity = std::min(cfg.max_seq_len, 2 + spp * cfg.max_panels);

    TokenSeq seq;
    seq.vocab_size = cfg.vocab_size;
    if (prefix != nullptr) {
        if (prefix->ids.empty() || prefix->ids.front() != kStartId) {
            throw Error("sample: prefix must start with START");
        }
        for (size_t i = 1; i < prefix->ids.size(); ++i) {
            if (prefix->ids[i] < kSpecialOffset) {
                throw Error("sample: prefix must not contain special tokens");
            }
        }
        if (prefix->length() >= capacity) throw Error("sample: prefix exceeds model capacity");
        seq.ids = prefix->ids;
    } else {
        seq.ids = {kStartId};
    }
    seq.meta = positional_meta(seq.ids, cfg.k_max_edges);

    Rng rng(opts.seed);
    Workspace<float> ws;
    const int n_cond = cond.rows();
    const int budget = opts.max_new_tokens > 0 ? opts.max_new_tokens
                                               : capacity - seq.length();

    bool truncated = false;
    bool ended = false;
    for (int step = 0; step < budget; ++step) {
        const int rows = seq.length();
        resize_ws(ws, cfg, rows, n_cond);
        std::memcpy(ws.cond_rows.data(), cond.data.data(), sizeof(float) * cond.data.size());
        forward_pass(params, cfg, seq, rows, n_cond, ws);
        const float* last = ws.logits.data() + static_cast<int64_t>(rows - 1) * cfg.vocab_size;
        const int id = sample_from_logits(last, cfg.vocab_size, opts, rng);

        if (id == kEndId) {
            ended = true;
            break;
        }
        if (id < kSpecialOffset) {
            // stray PAD/START: treat like a malformed stop
            truncated = true;
            break;
        }
        if (seq.length() >= capacity - 1) {
            truncated = true; // no room for another value token
            break;
        }
        const int interior_pos = seq.length() - 1;
        seq.ids.push_back(id);
        seq.meta.push_back({static_cast<int32_t>(interior_pos / spp + 1),
                            param_class_of(interior_pos % spp, cfg.k_max_edges)});
    }

    if (!ended && !truncated) truncated = true; // ran out of budget

    // Cut back to the last complete panel boundary and terminate with END.
    const int interior = seq.length() - 1;
    const int complete = (interior / spp) * spp;
    if (complete != interior) {
        truncated = true;
        seq.ids.resize(1 + complete);
        seq.meta.resize(1 + complete);
    }
    seq.ids.push_back(kEndId);
    seq.meta.push_back({0, ParamClass::kSpecial});

    return {std::move(seq), truncated};
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'S', 'E', 'W', 'G', 'P', 'T', '0', '1'};
constexpr uint32_t kCkptVersion = 1;

void wr_u32(std::ofstream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void wr_u64(std::ofstream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

bool rd_exact(std::ifstream& in, void* p, size_t n) {
    in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
    return static_cast<size_t>(in.gcount()) == n;
}

} // namespace

void save_checkpoint(const std::string& path, const ModelParams& params, const ModelConfig& cfg,
                     const std::string& extra_json) {
    json jcfg;
    try {
        jcfg["model"] = json::parse(cfg.to_json_string());
        jcfg["extra"] = json::parse(extra_json);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("save_checkpoint: bad extra JSON: ") + e.what());
    }
    const std::string cfg_str = jcfg.dump();

    auto tensors = named_tensors(params);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out.write(kCkptMagic, 8);
    wr_u32(out, kCkptVersion);
    wr_u32(out, static_cast<uint32_t>(cfg_str.size()));
    out.write(cfg_str.data(), static_cast<std::streamsize>(cfg_str.size()));

    wr_u32(out, static_cast<uint32_t>(tensors.size()));
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        wr_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        wr_u32(out, static_cast<uint32_t>(t->shape.size()));
        for (int64_t dim : t->shape) wr_u64(out, static_cast<uint64_t>(dim));
        wr_u64(out, offset);
        offset += static_cast<uint64_t>(t->size()) * sizeof(float);
    }
    for (const auto& [name, t] : tensors) {
        out.write(reinterpret_cast<const char*>(t->data()),
                  static_cast<std::streamsize>(t->size() * sizeof(float)));
    }
    if (!out.good()) throw IoError("save_checkpoint: write to " + path + " failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);

    char magic[8];
    if (!rd_exact(in, magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0) {
        throw NotACheckpointError("load_checkpoint: bad magic in " + path);
    }
    uint32_t version = 0;
    if (!rd_exact(in, &version, 4)) throw CorruptCheckpointError("load_checkpoint: truncated header");
    if (version != kCkptVersion) {
        throw UnsupportedVersionError("load_checkpoint: unsupported version " +
                                      std::to_string(version));
    }
    uint32_t cfg_len = 0;
    if (!rd_exact(in, &cfg_len, 4)) throw CorruptCheckpointError("load_checkpoint: truncated header");
    if (cfg_len > (1u << 24)) throw CorruptCheckpointError("load_checkpoint: config length implausible");
    std::string cfg_str(cfg_len, '\0');
    if (!rd_exact(in, cfg_str.data(), cfg_len)) {
        throw CorruptCheckpointError("load_checkpoint: truncated config JSON");
    }

    Checkpoint ckpt;
    try {
        json jcfg = json::parse(cfg_str);
        ckpt.cfg = ModelConfig::from_json_string(jcfg.at("model").dump());
        ckpt.extra_json = jcfg.value("extra", json::object()).dump();
    } catch (const json::exception& e) {
        throw CorruptCheckpointError(std::string("load_checkpoint: bad config JSON: ") + e.what());
    }

    ckpt.params = make_param_skeleton<float>(ckpt.cfg);
    auto tensors = named_tensors(ckpt.params);
    std::map<std::string, Tensor<float>*> by_name;
    for (auto& [name, t] : tensors) by_name[name] = t;

    uint32_t count = 0;
    if (!rd_exact(in, &count, 4)) throw CorruptCheckpointError("load_checkpoint: truncated table");
    if (count != tensors.size()) {
        throw CorruptCheckpointError("load_checkpoint: tensor count mismatch");
    }

    struct Entry {
        Tensor<float>* tensor;
        uint64_t offset;
    };
    std::vector<Entry> entries;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = 0;
        if (!rd_exact(in, &name_len, 4) || name_len > 4096) {
            throw CorruptCheckpointError("load_checkpoint: truncated tensor name");
        }
        std::string name(name_len, '\0');
        if (!rd_exact(in, name.data(), name_len)) {
            throw CorruptCheckpointError("load_checkpoint: truncated tensor name");
        }
        uint32_t rank = 0;
        if (!rd_exact(in, &rank, 4) || rank > 8) {
            throw CorruptCheckpointError("load_checkpoint: bad tensor rank");
        }
        std::vector<int64_t> dims(rank);
        for (uint32_t r = 0; r < rank; ++r) {
            uint64_t dim = 0;
            if (!rd_exact(in, &dim, 8)) throw CorruptCheckpointError("load_checkpoint: truncated dims");
            dims[r] = static_cast<int64_t>(dim);
        }
        uint64_t offset = 0;
        if (!rd_exact(in, &offset, 8)) throw CorruptCheckpointError("load_checkpoint: truncated table");

        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw CorruptCheckpointError("load_checkpoint: unexpected tensor \"" + name + "\"");
        }
        if (it->second->shape != dims) {
            throw CorruptCheckpointError("load_checkpoint: shape mismatch for \"" + name + "\"");
        }
        entries.push_back({it->second, offset});
        by_name.erase(it);
    }
    if (!by_name.empty()) {
        throw CorruptCheckpointError("load_checkpoint: missing tensor \"" + by_name.begin()->first +
                                     "\"");
    }

    const std::streampos payload_start = in.tellg();
    for (const Entry& e : entries) {
        in.seekg(payload_start + static_cast<std::streamoff>(e.offset));
        if (!rd_exact(in, e.tensor->data(), static_cast<size_t>(e.tensor->size()) * sizeof(float))) {
            throw CorruptCheckpointError("load_checkpoint: truncated tensor payload");
        }
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// Gradient check (double precision throughout)
// ---------------------------------------------------------------------------

namespace {

struct GcItem {
    TokenSeq tokens;
    std::vector<double> raw; // empty = null conditioning
};

std::vector<GcItem> gradcheck_batch(const ModelConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    std::vector<GcItem> items;
    const int spp = cfg.slots_per_panel();
    for (int s = 0; s < 2; ++s) {
        const int n_panels = 1 + static_cast<int>(rng.uniform_int(
                                     std::min(cfg.max_panels, (cfg.max_seq_len - 2) / spp)));
        GcItem item;
        item.tokens.vocab_size = cfg.vocab_size;
        item.tokens.ids.push_back(kStartId);
        for (int i = 0; i < n_panels * spp; ++i) {
            item.tokens.ids.push_back(
                kSpecialOffset + static_cast<int32_t>(rng.uniform_int(cfg.vocab_size - kSpecialOffset)));
        }
        item.tokens.ids.push_back(kEndId);
        item.tokens.meta = positional_meta(item.tokens.ids, cfg.k_max_edges);
        if (s == 0) {
            item.raw.resize(cfg.d_cond_in);
            for (auto& x : item.raw) x = rng.normal();
        }
        items.push_back(std::move(item));
    }
    return items;
}

double gc_loss(const ModelParamsT<double>& params, const ModelConfig& cfg,
               const std::vector<GcItem>& items) {
    Workspace<double> ws;
    double sum = 0.0;
    int64_t count = 0;
    for (const GcItem& item : items) {
        const int rows = item.tokens.length() - 1;
        resize_ws(ws, cfg, rows, 1);
        condition_forward(params, cfg, item.raw.empty() ? nullptr : item.raw.data(), ws);
        forward_pass(params, cfg, item.tokens, rows, 1, ws);
        std::vector<int32_t> targets(item.tokens.ids.begin() + 1, item.tokens.ids.end());
        int64_t n = 0;
        sum += loss_and_dlogits(cfg, targets, rows, ws, n);
        count += n;
    }
    return sum / static_cast<double>(count);
}

} // namespace

GradCheckResult run_gradcheck(const ModelConfig& cfg, const GradCheckOptions& opts) {
    cfg.validate();
    ModelParamsT<double> params = init_params_t<double>(cfg, opts.seed + 1);
    std::vector<GcItem> items = gradcheck_batch(cfg, opts.seed + 2);

    // Analytic gradient of the batch-mean loss.
    ModelParamsT<double> grad = make_param_skeleton<double>(cfg);
    {
        Workspace<double> ws;
        int64_t total = 0;
        for (const GcItem& item : items) {
            int64_t n = 0;
            forward_backward_sample<double>(params, cfg, item.tokens,
                                            item.raw.empty() ? nullptr : item.raw.data(), ws, grad,
                                            n);
            total += n;
        }
        const double scale = 1.0 / static_cast<double>(total);
        for (auto& [name, t] : named_tensors(grad)) {
            for (auto& g : t->v) g *= scale;
        }
    }

    auto pt = named_tensors(params);
    auto gt = named_tensors(grad);
    std::vector<size_t> eligible;
    int64_t flat_total = 0;
    for (size_t i = 0; i < pt.size(); ++i) {
        if (!opts.tensor_prefix.empty() && pt[i].first.rfind(opts.tensor_prefix, 0) != 0) continue;
        eligible.push_back(i);
        flat_total += pt[i].second->size();
    }
    if (flat_total == 0) throw ConfigError("run_gradcheck: no tensors match the prefix");

    Rng rng(opts.seed + 3);
    GradCheckResult res;
    for (int c = 0; c < opts.n_coords; ++c) {
        int64_t flat = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(flat_total)));
        size_t ti = 0;
        for (size_t e = 0; e < eligible.size(); ++e) {
            const int64_t sz = pt[eligible[e]].second->size();
            if (flat < sz) {
                ti = eligible[e];
                break;
            }
            flat -= sz;
        }

        double* w = &pt[ti].second->v[static_cast<size_t>(flat)];
        const double saved = *w;
        *w = saved + opts.h;
        const double lp = gc_loss(params, cfg, items);
        *w = saved - opts.h;
        const double lm = gc_loss(params, cfg, items);
        *w = saved;

        const double numeric = (lp - lm) / (2.0 * opts.h);
        const double analytic = gt[ti].second->v[static_cast<size_t>(flat)];
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-2});
        const double rel = std::fabs(analytic - numeric) / denom;

        res.coords.push_back({pt[ti].first, flat, analytic, numeric, rel});
        res.max_rel_err = std::max(res.max_rel_err, rel);
    }
    std::sort(res.coords.begin(), res.coords.end(),
              [](const GradCheckCoord& a, const GradCheckCoord& b) { return a.rel_err > b.rel_err; });
    return res;
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

template struct ModelParamsT<float>;
template struct ModelParamsT<double>;

template ModelParamsT<float> make_param_skeleton<float>(const ModelConfig&);
template ModelParamsT<double> make_param_skeleton<double>(const ModelConfig&);
template ModelParamsT<float> init_params_t<float>(const ModelConfig&, uint64_t);
template ModelParamsT<double> init_params_t<double>(const ModelConfig&, uint64_t);
template std::vector<std::pair<std::string, Tensor<float>*>> named_tensors(ModelParamsT<float>&);
template std::vector<std::pair<std::string, Tensor<double>*>> named_tensors(ModelParamsT<double>&);
template std::vector<std::pair<std::string, const Tensor<float>*>> named_tensors(
    const ModelParamsT<float>&);
template std::vector<std::pair<std::string, const Tensor<double>*>> named_tensors(
    const ModelParamsT<double>&);
template Tensor<float> embed_tokens_t<float>(const ModelParamsT<float>&, const ModelConfig&,
                                             const TokenSeq&);
template Tensor<double> embed_tokens_t<double>(const ModelParamsT<double>&, const ModelConfig&,
                                               const TokenSeq&);
template Tensor<float> forward_t<float>(const ModelParamsT<float>&, const ModelConfig&,
                                        const TokenSeq&, const Tensor<float>&);
template Tensor<double> forward_t<double>(const ModelParamsT<double>&, const ModelConfig&,
                                          const TokenSeq&, const Tensor<double>&);
template double nll_loss_t<float>(const Tensor<float>&, const std::vector<int32_t>&);
template double nll_loss_t<double>(const Tensor<double>&, const std::vector<int32_t>&);
template Tensor<float> project_condition_t<float>(const ModelParamsT<float>&, const ModelConfig&,
                                                  const std::vector<float>&);
template Tensor<double> project_condition_t<double>(const ModelParamsT<double>&, const ModelConfig&,
                                                    const std::vector<double>&);

} // namespace sewgen
