#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlmadapt/backend.hpp"
#include "mlmadapt/chunks.hpp"
#include "mlmadapt/masking.hpp"
#include "mlmadapt/tokenizer.hpp"

namespace mlmadapt {

struct EvalConfig {
    std::vector<uint32_t> ks{1, 2, 5};  // strictly ascending, non-empty
    uint64_t mask_seed = 42;
    // Score only positions whose visible input is the mask token, instead of
    // every labeled position (which includes random/keep corruptions).
    bool restrict_to_mask_token = false;
    // Seeded chunk-level subsample; 1.0 evaluates everything.
    double subsample_rate = 1.0;
    uint64_t subsample_seed = 0;
    uint32_t batch_size = 32;  // forward batching only; no metric effect

    void validate() const;
    // Canonical rendering of every digest-relevant field (batch size is
    // excluded: it cannot change the metrics).
    std::string canonical() const;
    uint64_t digest() const;
};

// 1-based rank of `label` under the deterministic total order: score
// descending, token id ascending.
uint64_t rank_of_label(const Eigen::Ref<const Eigen::RowVectorXf>& row, uint32_t label);

struct MetricAccumulator {
    std::vector<uint32_t> ks;
    uint64_t config_digest = 0;
    uint64_t labeled = 0;
    double nll_sum = 0.0;
    std::vector<uint64_t> hits;  // parallel to ks

    explicit MetricAccumulator(std::vector<uint32_t> ks_in = {1, 2, 5}, uint64_t digest = 0);
    void add(double nll, uint64_t rank);
    void merge(const MetricAccumulator& other);  // digest + ks must match
};

struct EvalReport {
    std::vector<uint32_t> ks;
    uint64_t config_digest = 0;
    uint64_t labeled = 0;
    double nll_sum = 0.0;
    std::vector<uint64_t> hits;

    double perplexity() const;  // exp(nll_sum / labeled)
    uint64_t hit_count(uint32_t k) const;
    double accuracy(uint32_t k) const;

    void save(const std::filesystem::path& file) const;
    static EvalReport load(const std::filesystem::path& file);
};

EvalReport report_from(const MetricAccumulator& acc);

struct TallyCells {
    uint64_t both_hit = 0;
    uint64_t a_only = 0;
    uint64_t b_only = 0;
    uint64_t both_miss = 0;

    uint64_t total() const { return both_hit + a_only + b_only + both_miss; }
};

struct ComparisonTally {
    std::vector<uint32_t> ks;
    uint64_t labeled = 0;
    std::vector<TallyCells> cells;  // parallel to ks

    const TallyCells& at_k(uint32_t k) const;
    void save(const std::filesystem::path& file) const;
    static ComparisonTally load(const std::filesystem::path& file);
};

struct ComparisonResult {
    EvalReport a;
    EvalReport b;
    ComparisonTally tally;
};

// Per-position record for the replayable evaluation log.
struct PositionLogEntry {
    ChunkOrigin origin;
    uint32_t pos = 0;
    uint32_t label = 0;
    double nll = 0.0;
    uint64_t rank = 0;
};

class PositionLogWriter {
public:
    PositionLogWriter(const std::filesystem::path& file, const EvalConfig& cfg);
    ~PositionLogWriter();
    void write(const PositionLogEntry& entry);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Streams a stored per-position log back through the accumulator path.
// The header supplies the ks list and config digest.
MetricAccumulator replay_position_log(const std::filesystem::path& file);

// Core metric pass over already-masked examples. `mask_token_id` is only
// consulted when cfg.restrict_to_mask_token is set.
EvalReport evaluate_masked(Backend& backend, std::span<const MaskedExample> examples,
                           const EvalConfig& cfg, uint32_t mask_token_id,
                           PositionLogWriter* log = nullptr);

// Masks `chunks` with cfg.mask_seed (after optional subsampling) and scores
// them. Deterministic given (weights, chunks, policy, cfg).
EvalReport evaluate(Backend& backend, std::span<const TokenChunk> chunks,
                    const MaskPolicy& policy, const TokenizerInfo& tok, const EvalConfig& cfg,
                    PositionLogWriter* log = nullptr);

// Scores two backends on byte-identical masked inputs and tallies the
// per-position 2x2 outcomes for every k. Embedded reports equal standalone
// evaluate outputs on the same inputs.
ComparisonResult compare_masked(Backend& backend_a, Backend& backend_b,
                                std::span<const MaskedExample> examples, const EvalConfig& cfg,
                                uint32_t mask_token_id, PositionLogWriter* log_a = nullptr,
                                PositionLogWriter* log_b = nullptr);

ComparisonResult compare(Backend& backend_a, Backend& backend_b,
                         std::span<const TokenChunk> chunks, const MaskPolicy& policy,
                         const TokenizerInfo& tok, const EvalConfig& cfg,
                         PositionLogWriter* log_a = nullptr, PositionLogWriter* log_b = nullptr);

// Chunk-level subsample predicate used by evaluate/compare (exposed for
// tests): keeps a chunk iff the seeded unit hash of its origin falls below
// cfg.subsample_rate.
bool chunk_subsampled(const ChunkOrigin& origin, const EvalConfig& cfg);

}  // namespace mlmadapt
