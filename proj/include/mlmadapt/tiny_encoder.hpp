#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mlmadapt/backend.hpp"

namespace mlmadapt {

struct TinyEncoderConfig {
    uint32_t vocab_size = 0;
    uint32_t max_positions = 256;
    uint32_t layers = 2;
    uint32_t hidden = 128;
    uint32_t heads = 4;
    uint32_t ff = 512;
    uint32_t pad_id = 0;
    uint64_t init_seed = 1;

    void validate() const;
};

// A small bidirectional pre-LN transformer encoder with learned token and
// position embeddings, GELU feed-forward blocks, and a linear vocabulary
// head. Forward, backward, and the AdamW update are all implemented here in
// fp32; mixed precision rounds the compute weights to binary16 while the
// fp32 master copies keep receiving updates.
class TinyEncoder : public Backend {
public:
    explicit TinyEncoder(const TinyEncoderConfig& cfg);
    ~TinyEncoder() override;

    TinyEncoder(const TinyEncoder&) = delete;
    TinyEncoder& operator=(const TinyEncoder&) = delete;

    const TinyEncoderConfig& config() const;
    uint32_t vocab_size() const override;
    std::string kind() const override { return "tiny_encoder"; }
    uint64_t parameter_count() const;

    BatchLogits forward(std::span<const MaskedExample> batch) override;

    bool trainable() const override { return true; }
    void begin_accumulation() override;
    void accumulate(const MaskedExample& ex) override;
    AccumStats accumulation_stats() const override;
    void apply_update(const OptimizerConfig& opt) override;

    void set_mixed_precision(bool on) override;
    bool mixed_precision() const override;

    // Checkpoint directory: config.txt (key=value) plus weights.bin. Saves
    // are byte-stable for identical weights; load refuses partial matches.
    void save(const std::filesystem::path& dir) const override;
    static std::unique_ptr<TinyEncoder> load(const std::filesystem::path& dir);

    // Optimizer moments and step count, for resuming interrupted training.
    void save_optimizer(const std::filesystem::path& file) const;
    void load_optimizer(const std::filesystem::path& file);
    uint64_t adam_step() const;

    // Test hooks: named access to master weights and accumulated gradients.
    std::vector<std::string> parameter_names() const;
    const Eigen::MatrixXf& parameter(const std::string& name) const;
    Eigen::MatrixXf& mutable_parameter(const std::string& name);
    const Eigen::MatrixXf& gradient(const std::string& name) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace mlmadapt
