#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "sewgen/errors.hpp"
#include "sewgen/model.hpp"
#include "sewgen/rng.hpp"

using namespace sewgen;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.vocab_size = 64;
    cfg.k_max_edges = 2; // 23 slots per panel
    cfg.max_panels = 2;
    cfg.max_seq_len = 2 + 23 * 2;
    cfg.d_cond_in = 8;
    return cfg;
}

TokenSeq random_sequence(const ModelConfig& cfg, int n_panels, uint64_t seed) {
    Rng rng(seed);
    TokenSeq seq;
    seq.vocab_size = cfg.vocab_size;
    seq.ids.push_back(kStartId);
    for (int i = 0; i < n_panels * cfg.slots_per_panel(); ++i) {
        seq.ids.push_back(kSpecialOffset +
                          static_cast<int32_t>(rng.uniform_int(cfg.vocab_size - kSpecialOffset)));
    }
    seq.ids.push_back(kEndId);
    seq.meta = positional_meta(seq.ids, cfg.k_max_edges);
    return seq;
}

CondEmbedding random_cond(const ModelConfig& cfg, const ModelParams& params, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> raw(cfg.d_cond_in);
    for (auto& x : raw) x = static_cast<float>(rng.normal());
    return project_condition(params, cfg, raw);
}

} // namespace

TEST_SUITE("model") {

TEST_CASE("embedding with zero tables is the zero matrix") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = make_param_skeleton<float>(cfg);
    const TokenSeq seq = random_sequence(cfg, 1, 3);
    const Tensor<float> emb = embed_tokens(params, cfg, seq);
    for (float x : emb.v) CHECK(x == 0.0f);
}

TEST_CASE("embedding rows equal the sum of the four table lookups") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 1);
    const TokenSeq seq = random_sequence(cfg, 2, 4);
    const Tensor<float> emb = embed_tokens(params, cfg, seq);

    const int d = cfg.d_model;
    const int spp = cfg.slots_per_panel();
    for (int t = 0; t < seq.length(); ++t) {
        const int slot = (t == 0 || seq.meta[t].cls == ParamClass::kSpecial) ? 0 : (t - 1) % spp;
        for (int i = 0; i < d; ++i) {
            const float expect = params.value_emb.data()[seq.ids[t] * d + i] +
                                 params.param_emb.data()[static_cast<int>(seq.meta[t].cls) * d + i] +
                                 params.panel_emb.data()[seq.meta[t].panel * d + i] +
                                 params.slot_emb.data()[slot * d + i];
            CHECK(emb.data()[t * d + i] == doctest::Approx(expect).epsilon(1e-6));
        }
    }
}

TEST_CASE("tokens identical in id, class, panel and slot embed identically") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 2);
    TokenSeq seq = random_sequence(cfg, 2, 5);
    const int spp = cfg.slots_per_panel();
    // positions 3 and 3 + spp share the same within-panel slot; force the same
    // id, class and panel index in the meta.
    seq.ids[3 + spp] = seq.ids[3];
    seq.meta[3 + spp] = seq.meta[3];
    const Tensor<float> emb = embed_tokens(params, cfg, seq);
    for (int i = 0; i < cfg.d_model; ++i) {
        CHECK(emb.data()[3 * cfg.d_model + i] == emb.data()[(3 + spp) * cfg.d_model + i]);
    }
}

TEST_CASE("slot embedding toggles off cleanly") {
    ModelConfig cfg = tiny_config();
    cfg.slot_embedding = false;
    ModelParams params = init_params(cfg, 44);
    // garbage in the slot table must not leak into the rows
    for (auto& x : params.slot_emb.v) x = 1e6f;
    const TokenSeq seq = random_sequence(cfg, 1, 45);
    const Tensor<float> emb = embed_tokens(params, cfg, seq);
    const int d = cfg.d_model;
    for (int t = 0; t < seq.length(); ++t) {
        for (int i = 0; i < d; ++i) {
            const float expect =
                params.value_emb.data()[seq.ids[t] * d + i] +
                params.param_emb.data()[static_cast<int>(seq.meta[t].cls) * d + i] +
                params.panel_emb.data()[seq.meta[t].panel * d + i];
            CHECK(emb.data()[t * d + i] == expect);
        }
    }
}

TEST_CASE("embedding rejects out-of-vocabulary ids") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 1);
    TokenSeq seq = random_sequence(cfg, 1, 6);
    seq.ids[2] = cfg.vocab_size;
    CHECK_THROWS_AS(embed_tokens(params, cfg, seq), TokenOutOfRangeError);
}

TEST_CASE("logits are finite on random init and random tokens") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 7);
    const TokenSeq seq = random_sequence(cfg, 2, 8);
    const Tensor<float> logits = forward(params, cfg, seq, random_cond(cfg, params, 9));
    for (float x : logits.v) CHECK(std::isfinite(x));
}

TEST_CASE("causality: perturbing position t leaves rows before t unchanged") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 11);
    const CondEmbedding cond = random_cond(cfg, params, 12);
    TokenSeq seq = random_sequence(cfg, 2, 13);

    const Tensor<float> base = forward(params, cfg, seq, cond);
    Rng rng(14);
    for (int trial = 0; trial < 5; ++trial) {
        const int t = 5 + static_cast<int>(rng.uniform_int(seq.length() - 6));
        TokenSeq mutated = seq;
        mutated.ids[t] = kSpecialOffset + static_cast<int32_t>(rng.uniform_int(cfg.vocab_size - 3));
        const Tensor<float> out = forward(params, cfg, mutated, cond);
        for (int row = 0; row < t; ++row) {
            for (int v = 0; v < cfg.vocab_size; ++v) {
                CHECK(out.data()[row * cfg.vocab_size + v] ==
                      base.data()[row * cfg.vocab_size + v]);
            }
        }
    }
}

TEST_CASE("prefix logits are unchanged by any continuation") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 15);
    const CondEmbedding cond = random_cond(cfg, params, 16);
    const TokenSeq full = random_sequence(cfg, 2, 17);

    TokenSeq prefix = full;
    prefix.ids.resize(10);
    prefix.meta.resize(10);
    const Tensor<float> a = forward(params, cfg, prefix, cond);
    const Tensor<float> b = forward(params, cfg, full, cond);
    for (int row = 0; row < 10; ++row) {
        for (int v = 0; v < cfg.vocab_size; ++v) {
            CHECK(a.data()[row * cfg.vocab_size + v] == b.data()[row * cfg.vocab_size + v]);
        }
    }
}

TEST_CASE("cross-attention accepts several conditioning rows") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 61);
    const TokenSeq seq = random_sequence(cfg, 1, 62);

    CondEmbedding two = random_cond(cfg, params, 63);
    const CondEmbedding other = random_cond(cfg, params, 64);
    two.data.insert(two.data.end(), other.data.begin(), other.data.end());
    REQUIRE(two.rows() == 2);

    const Tensor<float> logits = forward(params, cfg, seq, two);
    for (float x : logits.v) CHECK(std::isfinite(x));
    // the second row participates: dropping it changes the output
    CondEmbedding first_only = two;
    first_only.data.resize(cfg.d_model);
    const Tensor<float> logits2 = forward(params, cfg, seq, first_only);
    bool any_diff = false;
    for (size_t i = 0; i < logits.v.size(); ++i) any_diff = any_diff || logits.v[i] != logits2.v[i];
    CHECK(any_diff);
}

TEST_CASE("zeroed blocks reduce logits to an affine map of the embeddings") {
    ModelConfig cfg = tiny_config();
    ModelParams params = init_params(cfg, 18);
    // zero every attention/MLP path -> residual stream stays the embeddings
    for (auto& l : params.layers) {
        for (Tensor<float>* t :
             {&l.attn_wq, &l.attn_bq, &l.attn_wk, &l.attn_bk, &l.attn_wv, &l.attn_bv, &l.attn_wo,
              &l.attn_bo, &l.cross_wq, &l.cross_bq, &l.cross_wk, &l.cross_bk, &l.cross_wv,
              &l.cross_bv, &l.cross_wo, &l.cross_bo, &l.mlp_w1, &l.mlp_b1, &l.mlp_w2, &l.mlp_b2}) {
            t->zero();
        }
    }
    // identity-ish output path: ln_f gain 1 bias 0 (already), head = [I | 0]
    params.head_w.zero();
    params.head_b.zero();
    for (int i = 0; i < cfg.d_model; ++i) params.head_w.data()[i * cfg.vocab_size + i] = 1.0f;

    const TokenSeq seq = random_sequence(cfg, 1, 19);
    const CondEmbedding cond = random_cond(cfg, params, 20);
    const Tensor<float> logits = forward(params, cfg, seq, cond);
    const Tensor<float> emb = embed_tokens(params, cfg, seq);

    // oracle: layernorm of each embedding row, copied into the first d columns
    for (int t = 0; t < seq.length(); ++t) {
        const float* row = emb.data() + t * cfg.d_model;
        double mu = 0;
        for (int i = 0; i < cfg.d_model; ++i) mu += row[i];
        mu /= cfg.d_model;
        double var = 0;
        for (int i = 0; i < cfg.d_model; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= cfg.d_model;
        const double r = 1.0 / std::sqrt(var + 1e-5);
        for (int i = 0; i < cfg.d_model; ++i) {
            const double expect = (row[i] - mu) * r;
            CHECK(logits.data()[t * cfg.vocab_size + i] == doctest::Approx(expect).epsilon(1e-4));
        }
        for (int v = cfg.d_model; v < cfg.vocab_size; ++v) {
            CHECK(logits.data()[t * cfg.vocab_size + v] == 0.0f);
        }
    }
}

TEST_CASE("attention rows are a normalized convex combination") {
    // With wq = wk = 0 the causal softmax is uniform over the prefix, so the
    // attention output must equal the running mean of the value rows; that
    // only holds when every weight row is non-negative and sums to one.
    ModelConfig cfg = tiny_config();
    ModelParams params = make_param_skeleton<float>(cfg);
    for (int i = 0; i < cfg.d_model; ++i) {
        params.layers[0].ln1_w.data()[i] = 1.0f;
        params.layers[0].attn_wv.data()[i * cfg.d_model + i] = 1.0f; // v = ln1
        params.layers[0].attn_wo.data()[i * cfg.d_model + i] = 1.0f;
        params.layers[0].ln2_w.data()[i] = 1.0f;
        params.layers[0].ln3_w.data()[i] = 1.0f;
        params.lnf_w.data()[i] = 1.0f;
        params.head_w.data()[i * cfg.vocab_size + i] = 1.0f;
    }
    Rng rng(71);
    for (auto& x : params.value_emb.v) x = static_cast<float>(rng.normal(0, 0.5));

    const TokenSeq seq = random_sequence(cfg, 1, 72);
    const Tensor<float> emb = embed_tokens(params, cfg, seq);
    const CondEmbedding cond = null_condition(params, cfg);
    const Tensor<float> logits = forward(params, cfg, seq, cond);

    // Recompute the expected residual stream by hand: x + running mean of
    // layernorm(x) rows, then layernorms and the identity head.
    const int d = cfg.d_model;
    auto layer_norm = [&](std::vector<double> row) {
        double mu = 0;
        for (double x : row) mu += x;
        mu /= d;
        double var = 0;
        for (double x : row) var += (x - mu) * (x - mu);
        var /= d;
        const double r = 1.0 / std::sqrt(var + 1e-5);
        for (double& x : row) x = (x - mu) * r;
        return row;
    };
    std::vector<std::vector<double>> ln_rows;
    for (int t = 0; t < seq.length(); ++t) {
        std::vector<double> row(d);
        for (int i = 0; i < d; ++i) row[i] = emb.data()[t * d + i];
        ln_rows.push_back(layer_norm(row));
    }
    std::vector<double> running(d, 0.0);
    for (int t = 0; t < seq.length(); ++t) {
        for (int i = 0; i < d; ++i) running[i] += ln_rows[t][i];
        std::vector<double> x(d);
        for (int i = 0; i < d; ++i) {
            x[i] = emb.data()[t * d + i] + running[i] / (t + 1); // uniform attention
        }
        // cross/MLP branches are zero, so only the final layernorm applies
        const std::vector<double> expect = layer_norm(x);
        for (int i = 0; i < d; ++i) {
            CHECK(logits.data()[t * cfg.vocab_size + i] ==
                  doctest::Approx(expect[i]).epsilon(2e-3));
        }
    }
}

TEST_CASE("sampled output always begins with the prefix") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 98);
    const CondEmbedding cond = random_cond(cfg, params, 99);

    TokenSeq prefix = random_sequence(cfg, 1, 101);
    prefix.ids.pop_back(); // drop END so the prefix is continuable
    prefix.meta.pop_back();

    SamplerOptions opts;
    opts.temperature = 0.7;
    opts.seed = 11;
    const SampleResult res = sample(params, cfg, cond, opts, &prefix);
    REQUIRE(res.tokens.length() >= prefix.length());
    for (int i = 0; i < prefix.length(); ++i) {
        CHECK(res.tokens.ids[i] == prefix.ids[i]);
    }
}

TEST_CASE("uniform logits give ln(V) loss") {
    Tensor<float> logits({5, 2004});
    std::vector<int32_t> targets{10, 20, 30, 40, 50};
    CHECK(nll_loss(logits, targets) == doctest::Approx(std::log(2004.0)).epsilon(1e-6));

    // +50 on the target id drives the loss to ~0
    for (int t = 0; t < 5; ++t) logits.data()[t * 2004 + targets[t]] = 50.0f;
    CHECK(nll_loss(logits, targets) < 1e-6);
}

TEST_CASE("loss equals the hand-summed per-position value on a 5-token case") {
    const int v = 7;
    Tensor<float> logits({5, v});
    Rng rng(21);
    for (auto& x : logits.v) x = static_cast<float>(rng.uniform(-2, 2));
    const std::vector<int32_t> targets{3, 5, kPadId, 6, -1}; // PAD and -1 masked

    double expect = 0.0;
    int n = 0;
    for (int t = 0; t < 5; ++t) {
        if (targets[t] < 0 || targets[t] == kPadId) continue;
        double denom = 0;
        for (int i = 0; i < v; ++i) denom += std::exp(static_cast<double>(logits.data()[t * v + i]));
        expect += std::log(denom) - static_cast<double>(logits.data()[t * v + targets[t]]);
        ++n;
    }
    expect /= n;
    CHECK(nll_loss(logits, targets) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("random-init loss sits near ln(vocab)") {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 64;
    cfg.n_heads = 4; // the desk-scale default configuration
    const ModelParams params = init_params(cfg, 22);

    std::vector<TrainItem> items;
    for (uint64_t s = 0; s < 3; ++s) {
        TrainItem item;
        item.tokens = random_sequence(cfg, 2, 100 + s);
        Rng rng(200 + s);
        item.cond_raw.resize(cfg.d_cond_in);
        for (auto& x : item.cond_raw) x = static_cast<float>(rng.normal());
        items.push_back(std::move(item));
    }
    std::vector<const TrainItem*> ptrs;
    for (const auto& item : items) ptrs.push_back(&item);

    const double loss = mean_loss(params, cfg, ptrs);
    CHECK(loss == doctest::Approx(std::log(2004.0)).epsilon(0.05));
}

TEST_CASE("adam on a scalar quadratic walks to the minimum") {
    AdamConfig hp;
    hp.lr = 0.01;
    float w = 0.0f, m = 0.0f, v = 0.0f;
    // Far from the optimum the walk is monotone at small lr.
    float prev_gap = 3.0f;
    for (int64_t t = 1; t <= 200; ++t) {
        const float g = 2.0f * (w - 3.0f); // d/dw (w-3)^2
        adam_update(&w, &g, &m, &v, 1, t, hp);
        const float gap = std::fabs(w - 3.0f);
        CHECK(gap <= prev_gap + 1e-6f);
        prev_gap = gap;
    }
    CHECK(prev_gap < 3.0f - 0.5f * 0.01f * 200); // moved by at least half lr per step
    for (int64_t t = 201; t <= 2000; ++t) {
        const float g = 2.0f * (w - 3.0f);
        adam_update(&w, &g, &m, &v, 1, t, hp);
    }
    CHECK(std::fabs(w - 3.0f) < 0.2f);
}

TEST_CASE("adam first step has magnitude lr times sign") {
    AdamConfig hp;
    hp.lr = 1e-3;
    for (float g0 : {0.001f, 0.5f, -2.0f, 40.0f}) {
        float w = 1.0f, m = 0.0f, v = 0.0f;
        const float g = g0;
        adam_update(&w, &g, &m, &v, 1, 1, hp);
        // bias-corrected m_hat / sqrt(v_hat) = sign(g) up to eps
        const double expect = 1.0 - hp.lr * (g0 > 0 ? 1.0 : -1.0);
        CHECK(w == doctest::Approx(expect).epsilon(1e-3));
    }
}

TEST_CASE("full-model gradients match central finite differences") {
    const ModelConfig cfg = tiny_config();
    GradCheckOptions opts;
    opts.seed = 123;
    opts.n_coords = 60; // the acceptance suite runs the full 100-coordinate pass
    const GradCheckResult res = run_gradcheck(cfg, opts);
    INFO("max rel err ", res.max_rel_err, " worst tensor ",
         res.coords.empty() ? "none" : res.coords.front().tensor);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("training step is deterministic and independent of thread count") {
    const ModelConfig cfg = tiny_config();
    std::vector<TrainItem> items;
    for (uint64_t s = 0; s < 4; ++s) {
        TrainItem item;
        item.tokens = random_sequence(cfg, 1, 300 + s);
        Rng rng(400 + s);
        item.cond_raw.resize(cfg.d_cond_in);
        for (auto& x : item.cond_raw) x = static_cast<float>(rng.normal());
        items.push_back(std::move(item));
    }
    std::vector<const TrainItem*> batch;
    for (const auto& item : items) batch.push_back(&item);

    auto run = [&](int threads) {
        ModelParams params = init_params(cfg, 55);
        AdamState opt = make_adam_state(cfg);
        AdamConfig hp;
        std::vector<double> losses;
        for (int step = 0; step < 3; ++step) {
            losses.push_back(backward_and_step(params, cfg, batch, opt, hp, threads));
        }
        return std::make_pair(params.value_emb.v, losses);
    };
    const auto a = run(1);
    const auto b = run(4);
    CHECK(a.first == b.first); // bit-identical parameters
    CHECK(a.second == b.second);
}

TEST_CASE("training loss decreases on a tiny overfit") {
    const ModelConfig cfg = tiny_config();
    std::vector<TrainItem> items;
    TrainItem item;
    item.tokens = random_sequence(cfg, 1, 42);
    item.cond_raw.assign(cfg.d_cond_in, 0.5f);
    items.push_back(item);
    std::vector<const TrainItem*> batch{&items[0]};

    ModelParams params = init_params(cfg, 77);
    AdamState opt = make_adam_state(cfg);
    AdamConfig hp;
    hp.lr = 1e-2;
    const double first = backward_and_step(params, cfg, batch, opt, hp, 1);
    double last = first;
    for (int i = 0; i < 60; ++i) last = backward_and_step(params, cfg, batch, opt, hp, 1);
    CHECK(last < first * 0.2);
}

TEST_CASE("softmax rows sum to one and stay non-negative") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<float> row(97);
        for (auto& x : row) x = static_cast<float>(rng.uniform(-8, 8));
        softmax_inplace(row.data(), static_cast<int>(row.size()));
        double sum = 0;
        for (float x : row) {
            CHECK(x >= 0.0f);
            sum += x;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("argmax sampling is invariant under constant logit shifts") {
    Rng rng(32);
    std::vector<float> row(50);
    for (auto& x : row) x = static_cast<float>(rng.uniform(-3, 3));
    SamplerOptions greedy;
    greedy.temperature = 0.0;
    Rng r1(0), r2(0);
    const int a = sample_from_logits(row.data(), 50, greedy, r1);
    std::vector<float> shifted = row;
    for (auto& x : shifted) x += 17.5f;
    const int b = sample_from_logits(shifted.data(), 50, greedy, r2);
    CHECK(a == b);
}

TEST_CASE("sampler determinism contracts") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 91);
    const CondEmbedding cond = random_cond(cfg, params, 92);

    SamplerOptions greedy;
    greedy.temperature = 0.0;
    const SampleResult first = sample(params, cfg, cond, greedy);
    for (int i = 0; i < 9; ++i) {
        CHECK(sample(params, cfg, cond, greedy).tokens.ids == first.tokens.ids);
    }

    SamplerOptions hot;
    hot.temperature = 1.0;
    hot.seed = 1234;
    const SampleResult a = sample(params, cfg, cond, hot);
    const SampleResult b = sample(params, cfg, cond, hot);
    CHECK(a.tokens.ids == b.tokens.ids);

    // a different seed is allowed to differ; just verify it runs and is valid
    hot.seed = 99;
    const SampleResult c = sample(params, cfg, cond, hot);
    CHECK(c.tokens.ids.front() == kStartId);
    CHECK(c.tokens.ids.back() == kEndId);
}

TEST_CASE("top-k restricts sampling to the k best ids") {
    std::vector<float> row{0.0f, 5.0f, 4.0f, -1.0f, 3.0f};
    SamplerOptions opts;
    opts.temperature = 1.0;
    opts.top_k = 2;
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        const int id = sample_from_logits(row.data(), 5, opts, rng);
        CHECK((id == 1 || id == 2));
    }
}

TEST_CASE("sampled output meta is positional and truncation flags fire") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 93);
    const CondEmbedding cond = random_cond(cfg, params, 94);

    SamplerOptions opts;
    opts.temperature = 0.8;
    opts.seed = 7;
    opts.max_new_tokens = 10; // far below one panel: must truncate
    const SampleResult res = sample(params, cfg, cond, opts);
    CHECK(res.truncated);
    CHECK(res.tokens.ids.front() == kStartId);
    CHECK(res.tokens.ids.back() == kEndId);
    const int interior = res.tokens.length() - 2;
    CHECK(interior % cfg.slots_per_panel() == 0);
}

TEST_CASE("sample validates its prefix") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 95);
    const CondEmbedding cond = random_cond(cfg, params, 96);

    TokenSeq no_start;
    no_start.vocab_size = cfg.vocab_size;
    no_start.ids = {5, 6};
    no_start.meta = positional_meta(no_start.ids, cfg.k_max_edges);
    CHECK_THROWS_AS(sample(params, cfg, cond, {}, &no_start), Error);

    TokenSeq with_end = random_sequence(cfg, 1, 97); // contains END
    CHECK_THROWS_AS(sample(params, cfg, cond, {}, &with_end), Error);
}

TEST_CASE("checkpoint round-trip is bit-identical") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 1001);
    const std::string path = "ckpt_test.sewgpt";
    save_checkpoint(path, params, cfg, R"({"note":"test"})");

    const Checkpoint ckpt = load_checkpoint(path);
    CHECK(ckpt.cfg.to_json_string() == cfg.to_json_string());
    CHECK(ckpt.extra_json.find("note") != std::string::npos);

    auto a = named_tensors(params);
    auto b = named_tensors(ckpt.params);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(a[i].second->v == b[i].second->v);
    }
    std::remove(path.c_str());
}

TEST_CASE("checkpoint error taxonomy") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 1002);
    const std::string path = "ckpt_err_test.sewgpt";
    save_checkpoint(path, params, cfg);

    SUBCASE("bad magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXXXXXX", 8);
        f.close();
        CHECK_THROWS_AS(load_checkpoint(path), NotACheckpointError);
    }
    SUBCASE("unsupported version") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        const uint32_t v = 9;
        f.write(reinterpret_cast<const char*>(&v), 4);
        f.close();
        CHECK_THROWS_AS(load_checkpoint(path), UnsupportedVersionError);
    }
    SUBCASE("truncated payload") {
        const auto size = std::filesystem::file_size(path);
        std::filesystem::resize_file(path, size - 1);
        CHECK_THROWS_AS(load_checkpoint(path), CorruptCheckpointError);
    }
    std::remove(path.c_str());
}

} // TEST_SUITE
