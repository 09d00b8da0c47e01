#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "sewgen/codec.hpp"
#include "sewgen/conditioning.hpp"
#include "sewgen/model.hpp"
#include "sewgen/rng.hpp"

namespace sewgen {

// Training configuration. The JSON form uses the flat keys n_layers, d_model,
// n_heads, vocab_size, max_seq_len, K, max_panels, d_cond_in, lr, betas, eps,
// batch_size, steps, seed, deterministic, null_cond_prob, slot_embedding,
// plus the optional extras log_every, target_loss and n_threads.
struct TrainConfig {
    ModelConfig model;
    AdamConfig adam;
    int batch_size = 4;
    int steps = 1000;
    uint64_t seed = 0;
    // Training is bit-deterministic for a fixed config either way (per-sample
    // gradients are reduced in sample order); the flag is recorded so a future
    // relaxed mode can be opted into explicitly.
    bool deterministic = true;
    double null_cond_prob = 0.1;
    int log_every = 100;
    double target_loss = 0.0; // > 0: stop once the full-dataset loss drops below
    int n_threads = 0;        // 0 = min(batch_size, hardware)

    std::string to_json_string() const;
    static TrainConfig from_json_string(const std::string& text);
};

// Owns the parameters, optimizer state and batch order; resumable so callers
// can interleave training chunks with their own evaluation.
class Trainer {
  public:
    Trainer(TrainConfig cfg, std::vector<TrainItem> items);

    // Runs up to n steps (bounded by cfg.steps overall). Returns the mean
    // per-token loss of the last executed step. Honors target_loss.
    double run_steps(int n, std::ostream* log = nullptr);

    // Mean per-token loss over all items with their true conditioning.
    double eval_loss() const;

    bool reached_target() const { return reached_target_; }
    int64_t step() const { return opt_.step; }
    const ModelParams& params() const { return params_; }
    const ModelConfig& model_config() const { return cfg_.model; }
    const std::vector<TrainItem>& items() const { return items_; }

  private:
    std::vector<const TrainItem*> next_batch();

    TrainConfig cfg_;
    std::vector<TrainItem> items_;
    ModelParams params_;
    AdamState opt_;
    Rng order_rng_;
    std::vector<int> perm_;
    size_t perm_pos_ = 0;
    std::vector<TrainItem> null_scratch_;
    double last_loss_ = 0.0;
    bool reached_target_ = false;
    int threads_ = 1;
};

// Dataset directory -> encoded training items. Stats are fit on the train
// split; both splits are encoded with them.
struct DatasetBundle {
    std::vector<TrainItem> train_items;
    std::vector<TrainItem> val_items;
    std::vector<std::string> train_captions;
    std::vector<std::string> val_captions;
    NormStats stats;
};

DatasetBundle prepare_dataset(const std::string& dir, const QuantConfig& qcfg,
                              const CaptionProvider& provider);

} // namespace sewgen
