#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "mlmadapt/chunks.hpp"
#include "mlmadapt/corpus.hpp"
#include "mlmadapt/eval.hpp"
#include "mlmadapt/masking.hpp"
#include "mlmadapt/synth.hpp"
#include "mlmadapt/tiny_encoder.hpp"
#include "mlmadapt/train.hpp"

namespace mlmadapt {

// Flat key=value text document: '#' comments, blank lines ignored, duplicate
// keys rejected. The digest is computed over the canonical form (keys
// sorted, whitespace trimmed), so reordering and spacing do not change it.
class KeyValueFile {
public:
    static KeyValueFile parse_file(const std::filesystem::path& file);
    static KeyValueFile parse_text(const std::string& text, const std::string& origin);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;
    uint32_t get_u32(const std::string& key, uint32_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    std::string canonical() const;
    uint64_t digest() const;

    // Every key must have been consumed by a getter; otherwise throws a
    // ConfigError naming the strays. Catches typos early.
    void require_consumed() const;

private:
    std::string origin_;
    std::map<std::string, std::string> entries_;
    mutable std::map<std::string, bool> consumed_;

    const std::string* lookup(const std::string& key) const;
};

// Full-pipeline run configuration with dotted section prefixes.
struct RunConfig {
    std::filesystem::path corpus;
    std::filesystem::path workdir;
    std::string tokenizer_spec;
    std::string backend_a;  // empty: the trained best checkpoint
    std::string backend_b;  // empty: the trained init checkpoint
    std::string label_a = "adapted";
    std::string label_b = "baseline";

    uint64_t ingest_shard_size = 1000;
    SplitRatios ratios;
    uint64_t split_seed = 7;

    uint32_t chunk_len = 256;
    bool insert_delimiter = true;

    MaskPolicy policy;
    uint64_t mask_seed = 42;

    TrainConfig train;
    TinyEncoderConfig model;  // vocab_size/pad_id filled in from the tokenizer
    EvalConfig eval;

    uint64_t digest = 0;  // of the canonical config text

    // Set by the CLI, never read from the file; forwarded to the train stage.
    bool train_resume = false;
    bool train_force = false;

    static RunConfig load(const std::filesystem::path& file);
    static RunConfig from_kv(const KeyValueFile& kv);
    void validate() const;
};

// `train --config` document: bare TrainConfig field names, plus optional
// mask.* and model.* sections for the policy and encoder shape.
struct TrainFileConfig {
    TrainConfig train;
    MaskPolicy policy;
    TinyEncoderConfig model;
};

TrainFileConfig parse_train_config(const std::filesystem::path& file);

// Reads TrainConfig fields addressed by `prefix` ("" for bare names).
TrainConfig train_config_from_kv(const KeyValueFile& kv, const std::string& prefix);
MaskPolicy mask_policy_from_kv(const KeyValueFile& kv, const std::string& prefix);
TinyEncoderConfig model_config_from_kv(const KeyValueFile& kv, const std::string& prefix);
EvalConfig eval_config_from_kv(const KeyValueFile& kv, const std::string& prefix);

}  // namespace mlmadapt
