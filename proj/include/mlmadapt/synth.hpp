#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mlmadapt/common.hpp"

namespace mlmadapt {

struct SynthConfig {
    uint64_t seed = 1;
    uint64_t sentences = 1000;  // >= 1
    uint32_t vocab = 50;        // total word count (function + content), >= 10

    void validate() const;
};

struct SynthStats {
    uint64_t sentences = 0;
    uint64_t tokens = 0;
    uint32_t vocab_words = 0;
};

// The word list: a handful of fixed connective words followed by generated
// content words. Deterministic in cfg.vocab alone.
std::vector<std::string> synth_vocabulary(const SynthConfig& cfg);

// Sentence `index` of the corpus; templated, formulaic text with a skewed
// content-word distribution so the corpus is learnable at desk scale.
std::string synth_sentence(const SynthConfig& cfg, const std::vector<std::string>& words,
                           uint64_t index);

// Writes out_dir/corpus.jsonl and out_dir/vocab.txt. Byte-identical output
// for identical configs.
SynthStats gen_synthetic_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace mlmadapt
