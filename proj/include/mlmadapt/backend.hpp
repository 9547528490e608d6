#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mlmadapt/common.hpp"
#include "mlmadapt/masking.hpp"

namespace mlmadapt {

// Unnormalized per-position scores over the vocabulary, one row matrix
// (chunk_len x vocab_size) per example in the batch.
using LogitsMatrix = Eigen::MatrixXf;
using BatchLogits = std::vector<LogitsMatrix>;

struct OptimizerConfig {
    double learning_rate = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AccumStats {
    double nll_sum = 0.0;        // summed NLL over labeled positions
    uint64_t labeled = 0;        // labeled positions seen
    uint64_t examples = 0;

    double mean_loss() const {
        if (labeled == 0) throw DataError("no supervised positions in batch");
        return nll_sum / static_cast<double>(labeled);
    }
};

// Contract every model must satisfy: per-position logits over the vocab,
// a trainable step, and a checkpoint round-trip. Inference is deterministic
// for fixed weights and inputs.
class Backend {
public:
    virtual ~Backend() = default;

    virtual uint32_t vocab_size() const = 0;
    virtual std::string kind() const = 0;
    virtual BatchLogits forward(std::span<const MaskedExample> batch) = 0;

    virtual bool trainable() const { return false; }

    // Gradient-accumulation surface: begin, accumulate micro-batches, apply.
    // Gradients and losses are normalized over all labeled positions seen
    // since begin_accumulation, so grouping into micro-batches cannot change
    // the update.
    virtual void begin_accumulation() { throw ConfigError(kind() + " backend is not trainable"); }
    virtual void accumulate(const MaskedExample&) {
        throw ConfigError(kind() + " backend is not trainable");
    }
    virtual AccumStats accumulation_stats() const {
        throw ConfigError(kind() + " backend is not trainable");
    }
    virtual void apply_update(const OptimizerConfig&) {
        throw ConfigError(kind() + " backend is not trainable");
    }

    // One optimizer update on a single batch; returns the pre-update loss.
    double train_step(std::span<const MaskedExample> batch, const OptimizerConfig& opt);

    virtual void set_mixed_precision(bool) {}
    virtual bool mixed_precision() const { return false; }

    virtual void save(const std::filesystem::path& dir) const = 0;
};

// Mean cross-entropy over labeled (non-IGNORE) positions across the batch.
// Throws DataError when no position is labeled.
double masked_cross_entropy(const BatchLogits& logits, std::span<const MaskedExample> batch);

// Per-position negative log-likelihood of `label` under a logits row,
// computed with a numerically stable log-sum-exp in double precision.
double row_nll(const Eigen::Ref<const Eigen::RowVectorXf>& row, uint32_t label);

// Fixed-logits backend for metric oracles: a score table indexed either by
// (position mod table size) or by (true label mod table size).
class StubBackend : public Backend {
public:
    enum class KeyBy { kPosition, kLabel };

    StubBackend(uint32_t vocab_size, KeyBy key_by, std::vector<Eigen::RowVectorXf> table);

    // All-zero logits: the uniform-distribution reference model.
    static std::unique_ptr<StubBackend> uniform(uint32_t vocab_size);

    uint32_t vocab_size() const override { return vocab_size_; }
    std::string kind() const override { return "stub"; }
    BatchLogits forward(std::span<const MaskedExample> batch) override;
    void save(const std::filesystem::path&) const override {
        throw ConfigError("stub backends have no checkpoint format");
    }

private:
    uint32_t vocab_size_;
    KeyBy key_by_;
    std::vector<Eigen::RowVectorXf> table_;
};

// Loads a checkpoint directory (see TinyEncoder::save for the layout).
std::unique_ptr<Backend> load_backend(const std::filesystem::path& dir);

// Resolves a backend spec: "uniform:<vocab>" or a checkpoint directory path
// (optionally prefixed "ckpt:" / "external:").
std::unique_ptr<Backend> resolve_backend(const std::string& spec);

}  // namespace mlmadapt
