#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mlmadapt/chunks.hpp"
#include "mlmadapt/common.hpp"
#include "mlmadapt/tokenizer.hpp"

namespace mlmadapt {

// Dynamic-masking policy: each eligible position is selected independently
// with select_prob; a selected position is replaced by the mask token, a
// uniform random non-special token, or kept, per the sub-policy fractions.
struct MaskPolicy {
    double select_prob = 0.15;
    double mask_frac = 0.8;
    double random_frac = 0.1;
    double keep_frac = 0.1;

    void validate() const {
        if (!(select_prob > 0.0 && select_prob <= 1.0)) {
            throw ConfigError("select_prob must be in (0,1]");
        }
        for (double v : {mask_frac, random_frac, keep_frac}) {
            if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("mask sub-policy fractions must be in [0,1]");
        }
        if (std::abs(mask_frac + random_frac + keep_frac - 1.0) > 1e-9) {
            throw ConfigError("mask sub-policy fractions must sum to 1");
        }
    }
};

// -1 marks positions that carry no label. On disk the same value appears as
// the out-of-vocabulary sentinel 0xFFFFFFFF.
inline constexpr int32_t kIgnoreLabel = -1;
inline constexpr uint32_t kIgnoreSentinel = 0xFFFFFFFFU;

struct MaskedExample {
    ChunkOrigin origin;
    std::vector<uint32_t> input_ids;
    std::vector<int32_t> labels;  // original id at selected positions, else kIgnoreLabel

    uint32_t length() const { return static_cast<uint32_t>(input_ids.size()); }
    uint64_t labeled_count() const {
        uint64_t n = 0;
        for (int32_t l : labels) {
            if (l != kIgnoreLabel) n++;
        }
        return n;
    }
};

// A position is eligible iff it is attended (non-padding) and does not hold a
// special token.
bool mask_eligible(const TokenChunk& chunk, size_t pos, const SpecialIds& specials);

// All randomness is a pure function of (seed, chunk origin, position), so the
// result is independent of batching, iteration order, and worker scheduling.
MaskedExample mask_chunk(const TokenChunk& chunk, const MaskPolicy& policy,
                         const TokenizerInfo& tok, uint64_t seed);

std::vector<MaskedExample> mask_stream(std::span<const TokenChunk> chunks,
                                       const MaskPolicy& policy, const TokenizerInfo& tok,
                                       uint64_t seed);

// Masked-example file: the chunk layout with a parallel labels array.
//   u32 magic 'MLMK'  u32 version=1  u32 chunk_len  u32 pad_id
//   u32 ignore_sentinel  u32 shard_entry_count  u64 example_count
//   shard_entry_count x { u32 shard_index, u32 example_count }
//   example_count x ( chunk_len x u32 input ids, chunk_len x u32 labels )
inline constexpr uint32_t kMaskedMagic = 0x4B4D4C4DU;  // "MLMK"
inline constexpr uint32_t kMaskedVersion = 1;

void write_masked(std::span<const MaskedExample> examples, uint32_t pad_id,
                  const std::filesystem::path& path);
std::vector<MaskedExample> read_masked(const std::filesystem::path& path, uint32_t* pad_id = nullptr);

}  // namespace mlmadapt
