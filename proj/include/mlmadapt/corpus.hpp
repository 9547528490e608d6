#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mlmadapt/common.hpp"

namespace mlmadapt {

struct SentenceRecord {
    std::string id;
    std::string text;
    std::string source_tag;
};

// Pull-based source of records; malformed inputs are skipped and tallied.
class RecordStream {
public:
    virtual ~RecordStream() = default;
    virtual std::optional<SentenceRecord> next() = 0;
    virtual uint64_t skipped_malformed() const { return 0; }
};

// Reads newline-delimited JSON records with fields id/text/source_tag.
// Lines that fail to parse or lack a usable id are skipped and counted.
class JsonlRecordStream : public RecordStream {
public:
    explicit JsonlRecordStream(std::istream& in) : in_(in) {}

    std::optional<SentenceRecord> next() override;
    uint64_t skipped_malformed() const override { return skipped_; }

private:
    std::istream& in_;
    uint64_t skipped_ = 0;
    uint64_t line_no_ = 0;
};

class VectorRecordStream : public RecordStream {
public:
    explicit VectorRecordStream(std::vector<SentenceRecord> records)
        : records_(std::move(records)) {}

    std::optional<SentenceRecord> next() override {
        if (pos_ >= records_.size()) return std::nullopt;
        return records_[pos_++];
    }

private:
    std::vector<SentenceRecord> records_;
    size_t pos_ = 0;
};

struct ShardInfo {
    uint32_t index = 0;
    std::string file;
    uint64_t records = 0;
    uint64_t bytes = 0;
    uint64_t digest = 0;
};

struct ShardManifest {
    uint32_t format_version = 1;
    uint64_t shard_size = 0;
    uint64_t total_records = 0;
    uint64_t skipped_empty_text = 0;
    uint64_t skipped_malformed = 0;
    std::vector<ShardInfo> shards;

    uint64_t skipped_total() const { return skipped_empty_text + skipped_malformed; }
    uint64_t digest() const;

    void save(const std::filesystem::path& path) const;
    static ShardManifest load(const std::filesystem::path& path);
};

// Serialized shard line for one record: {"id":...,"source_tag":...,"text":...}.
std::string record_to_line(const SentenceRecord& rec);
std::optional<SentenceRecord> record_from_line(const std::string& line);

// Streams records into shard-%05u.jsonl files under out_dir, shard_size per
// shard (the last may be short), and returns the manifest. Empty-text records
// are skipped and counted; a duplicate id aborts with DataError.
ShardManifest ingest(RecordStream& stream, uint64_t shard_size,
                     const std::filesystem::path& out_dir);

// Reads every shard back in order. Throws DataError on missing files or
// digest mismatch when verify_digests is set.
void read_shards(const ShardManifest& manifest, const std::filesystem::path& shard_dir,
                 const std::function<void(const SentenceRecord&)>& fn,
                 bool verify_digests = false);

// Reads a single shard's records in file order.
std::vector<SentenceRecord> read_shard_file(const std::filesystem::path& path);

enum class Split : uint8_t { kTrain = 0, kValidation = 1, kTest = 2 };

const char* split_name(Split s);
Split split_from_name(std::string_view name);

struct SplitRatios {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;

    void validate() const;
};

// The split rule: FNV-1a 64 over the 8 little-endian bytes of the seed
// followed by the UTF-8 bytes of the record id, finalized with mix64 (plain
// FNV barely moves the high bits when only an id's trailing byte changes, so
// sequential ids would cluster), mapped to [0,1) by taking the top 53 bits,
// then bucketed by cumulative ratios. Pure in (id, seed), so membership
// never depends on which other records exist.
double split_unit_value(std::string_view record_id, uint64_t seed);
Split split_of(std::string_view record_id, uint64_t seed, const SplitRatios& ratios);

struct SplitAssignment {
    uint64_t seed = 0;
    SplitRatios ratios;
    uint64_t manifest_digest = 0;
    std::unordered_map<std::string, Split> mapping;
    uint64_t counts[3] = {0, 0, 0};

    uint64_t total() const { return counts[0] + counts[1] + counts[2]; }

    void save(const std::filesystem::path& path) const;
    static SplitAssignment load_summary(const std::filesystem::path& path);  // no mapping
};

// Materializes the assignment for every record in the manifest's shards.
SplitAssignment split(const ShardManifest& manifest, const std::filesystem::path& shard_dir,
                      const SplitRatios& ratios, uint64_t seed);

struct CorpusStats {
    uint64_t records = 0;
    uint64_t shards = 0;
    uint64_t bytes = 0;
    uint64_t skipped = 0;
};

// Validates shard files against the manifest (existence and size; digests
// when verify_digests) and returns totals.
CorpusStats corpus_stats(const ShardManifest& manifest, const std::filesystem::path& shard_dir,
                         bool verify_digests = false);

}  // namespace mlmadapt
