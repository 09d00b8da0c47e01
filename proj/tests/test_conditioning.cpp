#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "doctest.h"

#include "sewgen/conditioning.hpp"
#include "sewgen/errors.hpp"
#include "sewgen/model.hpp"
#include "sewgen/synth.hpp"

using namespace sewgen;

namespace {

double l2(const std::vector<float>& v) {
    double s = 0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

double dist(const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace

TEST_SUITE("conditioning") {

TEST_CASE("hashed bag of words is deterministic and normalized") {
    const ProviderSpec spec{ProviderKind::kHashedBow, 64, ""};
    const auto a = embed_caption(spec, "a long skirt");
    const auto b = embed_caption(spec, "a long skirt");
    CHECK(a == b);
    CHECK(l2(a) == doctest::Approx(1.0));

    const auto c = embed_caption(spec, "a short dress");
    CHECK(dist(a, c) > 1e-6);
}

TEST_CASE("empty caption embeds to the zero vector") {
    const ProviderSpec spec{ProviderKind::kHashedBow, 64, ""};
    const auto v = embed_caption(spec, "");
    CHECK(l2(v) == 0.0);
    const auto w = embed_caption(spec, "  ,,&&  ");
    CHECK(l2(w) == 0.0);
}

TEST_CASE("hashing is case and separator insensitive") {
    const ProviderSpec spec{ProviderKind::kHashedBow, 128, ""};
    CHECK(embed_caption(spec, "Long-Skirt") == embed_caption(spec, "long skirt"));
}

TEST_CASE("null provider returns zeros") {
    const ProviderSpec spec{ProviderKind::kNull, 16, ""};
    const auto v = embed_caption(spec, "anything");
    CHECK(static_cast<int>(v.size()) == 16);
    CHECK(l2(v) == 0.0);
}

TEST_CASE("file lookup hits and misses") {
    const std::string path = "cond_lookup_test.json";
    {
        std::ofstream out(path);
        out << R"({"a red coat": [1.0, 0.0, 0.5, 0.25]})";
    }
    const ProviderSpec spec{ProviderKind::kFileLookup, 4, path};
    const CaptionProvider provider = CaptionProvider::make(spec);
    const auto v = provider.embed("a red coat");
    CHECK(v == std::vector<float>{1.0f, 0.0f, 0.5f, 0.25f});
    CHECK_THROWS_AS(provider.embed("a blue coat"), UnknownCaptionError);
    std::remove(path.c_str());

    // dimension mismatch is rejected at construction
    {
        std::ofstream out(path);
        out << R"({"a red coat": [1.0, 0.0]})";
    }
    CHECK_THROWS_AS(CaptionProvider::make(spec), ConfigError);
    std::remove(path.c_str());
}

TEST_CASE("projection MLP maps zero weights to the zero row") {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.vocab_size = 64;
    cfg.k_max_edges = 2;
    cfg.max_panels = 2;
    cfg.max_seq_len = 2 + 23 * 2;
    cfg.d_cond_in = 8;
    ModelParams params = make_param_skeleton<float>(cfg);
    const CondEmbedding h = project_condition(params, cfg, std::vector<float>(8, 1.0f));
    REQUIRE(h.rows() == 1);
    for (float x : h.data) CHECK(x == 0.0f);
}

TEST_CASE("identity-like weights pass the raw vector through") {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.vocab_size = 32;
    cfg.k_max_edges = 1;
    cfg.max_panels = 1;
    cfg.max_seq_len = 2 + 15;
    cfg.d_cond_in = 8;
    ModelParams params = make_param_skeleton<float>(cfg);
    // identity maps on both layers: the row reduces to gelu(raw)
    for (int i = 0; i < 8; ++i) {
        params.cond_w1.data()[i * 8 + i] = 1.0f;
        params.cond_w2.data()[i * 8 + i] = 1.0f;
    }
    const std::vector<float> raw{3, 3, 3, 3, 3, 3, 3, 3};
    const CondEmbedding h = project_condition(params, cfg, raw);
    // gelu(3) = 2.9964 to four decimals; the row is gelu(raw) under identity maps
    for (float x : h.data) CHECK(x == doctest::Approx(2.9964).epsilon(1e-3));
}

TEST_CASE("projection rejects the wrong input width") {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.vocab_size = 64;
    cfg.k_max_edges = 2;
    cfg.max_panels = 2;
    cfg.max_seq_len = 2 + 23 * 2;
    cfg.d_cond_in = 8;
    ModelParams params = make_param_skeleton<float>(cfg);
    CHECK_THROWS_AS(project_condition(params, cfg, std::vector<float>(7, 0.0f)), ConfigError);
}

TEST_CASE("distinct synthetic captions produce distinct embeddings end to end") {
    std::set<std::string> captions;
    for (const TemplateSpec& spec : all_templates()) {
        for (uint64_t seed = 0; seed < 120; ++seed) {
            captions.insert(*synth_pattern(spec, seed).caption);
        }
    }
    REQUIRE(captions.size() >= 16);

    const ProviderSpec spec{ProviderKind::kHashedBow, 1024, ""};
    const CaptionProvider provider = CaptionProvider::make(spec);

    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 32;
    cfg.n_heads = 4;
    cfg.vocab_size = 64;
    cfg.k_max_edges = 2;
    cfg.max_panels = 2;
    cfg.max_seq_len = 2 + 23 * 2;
    cfg.d_cond_in = 1024;
    const ModelParams params = init_params(cfg, 9);

    std::vector<std::vector<float>> raws;
    std::vector<CondEmbedding> hs;
    for (const std::string& caption : captions) {
        raws.push_back(provider.embed(caption));
        hs.push_back(project_condition(params, cfg, raws.back()));
    }
    for (size_t i = 0; i < raws.size(); ++i) {
        for (size_t j = i + 1; j < raws.size(); ++j) {
            CHECK(dist(raws[i], raws[j]) > 1e-9);
            CHECK(dist(hs[i].data, hs[j].data) > 1e-9);
        }
    }
}

TEST_CASE("cond MLP gradients match finite differences") {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.vocab_size = 64;
    cfg.k_max_edges = 2;
    cfg.max_panels = 2;
    cfg.max_seq_len = 2 + 23 * 2;
    cfg.d_cond_in = 8;

    GradCheckOptions opts;
    opts.seed = 5;
    opts.n_coords = 40;
    opts.tensor_prefix = "cond.";
    const GradCheckResult res = run_gradcheck(cfg, opts);
    INFO("max rel err ", res.max_rel_err);
    CHECK(res.max_rel_err < 1e-4);
}

} // TEST_SUITE
