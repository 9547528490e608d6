#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "mlmadapt/common.hpp"
#include "mlmadapt/corpus.hpp"
#include "mlmadapt/tokenizer.hpp"

namespace mlmadapt {

struct EncodeStats {
    uint64_t encoded = 0;
    uint64_t dropped_empty = 0;
    uint64_t failed = 0;
};

// Encodes records in order, one id sequence per record. Records that encode
// to nothing are dropped and counted; adapter failures are skipped and the
// offending id is reported on `warn` when given.
void encode_stream(RecordStream& records, const TokenizerAdapter& tok,
                   const std::function<void(std::vector<uint32_t>)>& sink,
                   EncodeStats* stats = nullptr, std::ostream* warn = nullptr);

std::vector<std::vector<uint32_t>> encode_records(std::span<const SentenceRecord> records,
                                                  const TokenizerAdapter& tok,
                                                  EncodeStats* stats = nullptr,
                                                  std::ostream* warn = nullptr);

struct PackConfig {
    uint32_t chunk_len = 256;
    uint32_t pad_id = 0;
    bool insert_delimiter = false;
    uint32_t delimiter_id = 0;  // consulted only when insert_delimiter

    void validate() const {
        if (chunk_len < 2) throw ConfigError("chunk_len must be >= 2");
        if (insert_delimiter && delimiter_id == pad_id) {
            throw ConfigError("delimiter id must differ from pad id");
        }
    }
};

struct ChunkOrigin {
    uint32_t shard = 0;
    uint32_t chunk = 0;

    bool operator==(const ChunkOrigin&) const = default;
};

// Fixed-length row of token ids. Attention is derived, not stored: a position
// is attended iff its id differs from pad_id, and padding is always a
// contiguous suffix.
struct TokenChunk {
    ChunkOrigin origin;
    uint32_t pad_id = 0;
    std::vector<uint32_t> ids;

    uint32_t length() const { return static_cast<uint32_t>(ids.size()); }
    bool attended(size_t i) const { return ids[i] != pad_id; }
    uint32_t pad_count() const {
        uint32_t n = 0;
        for (size_t i = ids.size(); i > 0 && ids[i - 1] == pad_id; --i) n++;
        return n;
    }
    uint32_t content_len() const { return length() - pad_count(); }
};

// Concatenates id sequences (optionally delimiter-separated) and slices them
// into chunk_len windows. Only the final chunk of a shard carries padding.
class ChunkPacker {
public:
    explicit ChunkPacker(const PackConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

    void begin_shard(uint32_t shard_index);
    // Appends one sequence and moves any completed chunks into `out`.
    void add_sequence(std::span<const uint32_t> ids, std::vector<TokenChunk>& out);
    // Pads and emits the trailing partial chunk, if any.
    std::optional<TokenChunk> finish_shard();

private:
    TokenChunk take_chunk(size_t len);

    PackConfig cfg_;
    std::vector<uint32_t> buffer_;
    uint32_t shard_ = 0;
    uint32_t next_chunk_ = 0;
    bool any_sequence_ = false;
};

// Single-shard convenience: packs all sequences as shard `shard_index`.
std::vector<TokenChunk> pack(std::span<const std::vector<uint32_t>> sequences,
                             const PackConfig& cfg, uint32_t shard_index = 0);

// Chunk file layout (all integers little-endian):
//   u32 magic 'MLCK'  u32 version=1  u32 chunk_len  u32 pad_id
//   u64 chunk_count   u32 shard_entry_count  u32 reserved
//   shard_entry_count x { u32 shard_index, u32 chunk_count }
//   chunk_count x chunk_len x u32 token ids
// Chunks are grouped by shard in table order; chunk indices count from 0
// within each shard.
inline constexpr uint32_t kChunkMagic = 0x4B434C4DU;  // "MLCK"
inline constexpr uint32_t kChunkVersion = 1;

struct ChunkFileHeader {
    uint32_t chunk_len = 0;
    uint32_t pad_id = 0;
    uint64_t chunk_count = 0;
    std::vector<std::pair<uint32_t, uint32_t>> shard_table;

    uint64_t header_bytes() const { return 32 + 8ULL * shard_table.size(); }
    uint64_t file_bytes() const { return header_bytes() + chunk_count * chunk_len * 4ULL; }
};

ChunkFileHeader write_chunks(std::span<const TokenChunk> chunks,
                             const std::filesystem::path& path);
ChunkFileHeader read_chunk_header(const std::filesystem::path& path);
std::vector<TokenChunk> read_chunks(const std::filesystem::path& path);

// Streaming reader for batch-at-a-time consumption.
class ChunkReader {
public:
    explicit ChunkReader(const std::filesystem::path& path);
    ~ChunkReader();
    ChunkReader(const ChunkReader&) = delete;
    ChunkReader& operator=(const ChunkReader&) = delete;

    const ChunkFileHeader& header() const { return header_; }
    std::optional<TokenChunk> next();

private:
    struct Impl;
    Impl* impl_;
    ChunkFileHeader header_;
};

}  // namespace mlmadapt
