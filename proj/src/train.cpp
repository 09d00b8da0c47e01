#include "sewgen/train.hpp"

#include <algorithm>
#include <filesystem>
#include <thread>

#include "json.hpp"

#include "sewgen/errors.hpp"
#include "sewgen/pattern_io.hpp"
#include "sewgen/synth.hpp"

namespace sewgen {

using nlohmann::json;

std::string TrainConfig::to_json_string() const {
    json j;
    j["n_layers"] = model.n_layers;
    j["d_model"] = model.d_model;
    j["n_heads"] = model.n_heads;
    j["vocab_size"] = model.vocab_size;
    j["max_seq_len"] = model.max_seq_len;
    j["K"] = model.k_max_edges;
    j["max_panels"] = model.max_panels;
    j["d_cond_in"] = model.d_cond_in;
    j["slot_embedding"] = model.slot_embedding;
    j["lr"] = adam.lr;
    j["betas"] = {adam.beta1, adam.beta2};
    j["eps"] = adam.eps;
    j["batch_size"] = batch_size;
    j["steps"] = steps;
    j["seed"] = seed;
    j["deterministic"] = deterministic;
    j["null_cond_prob"] = null_cond_prob;
    j["log_every"] = log_every;
    j["target_loss"] = target_loss;
    j["n_threads"] = n_threads;
    return j.dump(2);
}

TrainConfig TrainConfig::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("TrainConfig: bad JSON: ") + e.what());
    }
    TrainConfig cfg;
    try {
        cfg.model.n_layers = j.value("n_layers", cfg.model.n_layers);
        cfg.model.d_model = j.value("d_model", cfg.model.d_model);
        cfg.model.n_heads = j.value("n_heads", cfg.model.n_heads);
        cfg.model.vocab_size = j.value("vocab_size", cfg.model.vocab_size);
        cfg.model.max_seq_len = j.value("max_seq_len", cfg.model.max_seq_len);
        cfg.model.k_max_edges = j.value("K", cfg.model.k_max_edges);
        cfg.model.max_panels = j.value("max_panels", cfg.model.max_panels);
        cfg.model.d_cond_in = j.value("d_cond_in", cfg.model.d_cond_in);
        cfg.model.slot_embedding = j.value("slot_embedding", cfg.model.slot_embedding);
        cfg.adam.lr = j.value("lr", cfg.adam.lr);
        if (j.contains("betas")) {
            cfg.adam.beta1 = j.at("betas").at(0).get<double>();
            cfg.adam.beta2 = j.at("betas").at(1).get<double>();
        }
        cfg.adam.eps = j.value("eps", cfg.adam.eps);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.steps = j.value("steps", cfg.steps);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.deterministic = j.value("deterministic", cfg.deterministic);
        cfg.null_cond_prob = j.value("null_cond_prob", cfg.null_cond_prob);
        cfg.log_every = j.value("log_every", cfg.log_every);
        cfg.target_loss = j.value("target_loss", cfg.target_loss);
        cfg.n_threads = j.value("n_threads", cfg.n_threads);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("TrainConfig: bad field: ") + e.what());
    }
    cfg.model.validate();
    if (cfg.batch_size <= 0 || cfg.steps < 0) {
        throw ConfigError("TrainConfig: batch_size must be positive and steps non-negative");
    }
    return cfg;
}

Trainer::Trainer(TrainConfig cfg, std::vector<TrainItem> items)
    : cfg_(std::move(cfg)),
      items_(std::move(items)),
      params_(init_params(cfg_.model, cfg_.seed)),
      opt_(make_adam_state(cfg_.model)),
      order_rng_(cfg_.seed + 0x5d3f0c1a2b4e6d78ULL) {
    if (items_.empty()) throw EmptyDatasetError("Trainer: no training items");
    for (const TrainItem& item : items_) {
        if (item.tokens.length() < 2 || item.tokens.ids.front() != kStartId) {
            throw Error("Trainer: items must be complete START-led sequences");
        }
        if (item.tokens.length() > cfg_.model.max_seq_len) {
            throw SequenceTooLongError("Trainer: item exceeds max_seq_len");
        }
    }
    null_scratch_.resize(cfg_.batch_size);
    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    threads_ = cfg_.n_threads > 0 ? cfg_.n_threads
                                  : std::max(1, std::min(cfg_.batch_size, hw > 0 ? hw : 1));
}

std::vector<const TrainItem*> Trainer::next_batch() {
    std::vector<const TrainItem*> batch;
    batch.reserve(cfg_.batch_size);
    for (int i = 0; i < cfg_.batch_size; ++i) {
        if (perm_pos_ >= perm_.size()) {
            perm_.resize(items_.size());
            for (size_t k = 0; k < perm_.size(); ++k) perm_[k] = static_cast<int>(k);
            for (size_t k = perm_.size(); k > 1; --k) {
                const size_t r = order_rng_.uniform_int(k);
                std::swap(perm_[k - 1], perm_[r]);
            }
            perm_pos_ = 0;
        }
        const TrainItem* item = &items_[perm_[perm_pos_++]];
        if (cfg_.null_cond_prob > 0.0 && order_rng_.uniform() < cfg_.null_cond_prob) {
            null_scratch_[i].tokens = item->tokens;
            null_scratch_[i].cond_raw.clear();
            item = &null_scratch_[i];
        }
        batch.push_back(item);
    }
    return batch;
}

double Trainer::run_steps(int n, std::ostream* log) {
    for (int s = 0; s < n && opt_.step < cfg_.steps; ++s) {
        const auto batch = next_batch();
        last_loss_ = backward_and_step(params_, cfg_.model, batch, opt_, cfg_.adam, threads_);
        const bool logged = cfg_.log_every > 0 && opt_.step % cfg_.log_every == 0;
        if (log && logged) {
            (*log) << "step " << opt_.step << " loss " << last_loss_ << "\n";
        }
        if (cfg_.target_loss > 0.0 && logged) {
            const double full = eval_loss();
            if (log) (*log) << "step " << opt_.step << " full-set loss " << full << "\n";
            if (full < cfg_.target_loss) {
                reached_target_ = true;
                break;
            }
        }
    }
    return last_loss_;
}

double Trainer::eval_loss() const {
    std::vector<const TrainItem*> all;
    all.reserve(items_.size());
    for (const TrainItem& item : items_) all.push_back(&item);
    return mean_loss(params_, cfg_.model, all);
}

DatasetBundle prepare_dataset(const std::string& dir, const QuantConfig& qcfg,
                              const CaptionProvider& provider) {
    namespace fs = std::filesystem;
    const Manifest manifest = load_manifest(dir);
    if (manifest.items.empty()) throw EmptyDatasetError("prepare_dataset: manifest has no items");

    std::vector<Pattern> train_patterns, val_patterns;
    std::vector<std::string> train_caps, val_caps;
    for (const ManifestItem& item : manifest.items) {
        Pattern p = load_pattern((fs::path(dir) / item.file).string());
        const std::string caption = item.caption.empty() ? p.caption.value_or("") : item.caption;
        if (item.split == "val") {
            val_patterns.push_back(std::move(p));
            val_caps.push_back(caption);
        } else {
            train_patterns.push_back(std::move(p));
            train_caps.push_back(caption);
        }
    }
    if (train_patterns.empty()) throw EmptyDatasetError("prepare_dataset: no train items");

    DatasetBundle bundle;
    bundle.stats = fit_stats(train_patterns);
    bundle.train_captions = train_caps;
    bundle.val_captions = val_caps;

    auto build = [&](const std::vector<Pattern>& patterns, const std::vector<std::string>& caps,
                     std::vector<TrainItem>& out) {
        for (size_t i = 0; i < patterns.size(); ++i) {
            TrainItem item;
            item.tokens = encode(patterns[i], bundle.stats, qcfg);
            item.cond_raw = provider.embed(caps[i]);
            out.push_back(std::move(item));
        }
    };
    build(train_patterns, train_caps, bundle.train_items);
    build(val_patterns, val_caps, bundle.val_items);
    return bundle;
}

} // namespace sewgen
