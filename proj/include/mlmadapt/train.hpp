#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mlmadapt/backend.hpp"
#include "mlmadapt/chunks.hpp"
#include "mlmadapt/masking.hpp"
#include "mlmadapt/tiny_encoder.hpp"
#include "mlmadapt/tokenizer.hpp"

namespace mlmadapt {

struct TrainConfig {
    uint32_t per_device_batch = 32;
    uint32_t accumulation_steps = 4;
    double learning_rate = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    uint32_t epochs = 2;
    bool mixed_precision = true;
    // Optimizer steps between validation passes; 0 means a tenth of an epoch.
    uint32_t eval_interval_steps = 0;
    uint64_t seed = 1;
    std::string lr_schedule = "constant";  // constant | linear_decay

    void validate() const;
    // Digest over the canonical key=value rendering; guards resume against
    // silently changed hyperparameters.
    uint64_t digest() const;
};

// Combined digest of the training config and the mask policy in effect;
// this is what resume checks before continuing a run.
uint64_t train_run_digest(const TrainConfig& cfg, const MaskPolicy& policy);

struct CheckpointRecord {
    uint64_t step = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::string path;  // relative to the run directory
};

// Lowest validation loss wins; ties go to the earliest step.
CheckpointRecord select_best(const std::vector<CheckpointRecord>& records);

struct TrainResult {
    uint64_t steps = 0;
    std::vector<CheckpointRecord> checkpoints;
    CheckpointRecord best;
    double final_train_loss = 0.0;
};

struct TrainData {
    std::vector<TokenChunk> train;
    std::vector<TokenChunk> validation;
};

// Runs the fine-tuning regime: shuffled epochs with fresh dynamic masking,
// gradient accumulation, AdamW updates, periodic validation, and checkpoints
// under `out_dir` (init/ plus step-NNNNNN/, with best.txt naming the winner).
// With resume=true, picks up mid-run from the newest step checkpoint.
TrainResult train(TinyEncoder& model, const TrainData& data, const TokenizerInfo& tok,
                  const MaskPolicy& policy, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir, bool resume = false,
                  bool force = false);

// Mean NLL over every labeled position in `examples`, batched forward.
double validation_loss(Backend& model, const std::vector<MaskedExample>& examples,
                       uint32_t batch_size);

// Seed folding used by the trainer; exposed so tests can reproduce the exact
// masks of a given epoch.
uint64_t epoch_mask_seed(uint64_t seed, uint32_t epoch);
uint64_t val_mask_seed(uint64_t seed);
uint64_t shuffle_seed(uint64_t seed, uint32_t epoch);

std::vector<size_t> shuffled_order(size_t n, uint64_t key);

}  // namespace mlmadapt
