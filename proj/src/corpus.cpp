#include "mlmadapt/corpus.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <unordered_set>

#include "json.hpp"

namespace mlmadapt {

namespace {

std::string shard_file_name(uint32_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "shard-%05u.jsonl", index);
    return buf;
}

// Minimal key=value reader shared by the text metadata files.
std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos) throw FormatError("bad line in " + path.string() + ": " + t);
        kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return kv;
}

const std::string& kv_get(const std::map<std::string, std::string>& kv, const std::string& key,
                          const std::filesystem::path& path) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("missing key '" + key + "' in " + path.string());
    return it->second;
}

uint64_t kv_u64(const std::map<std::string, std::string>& kv, const std::string& key,
                const std::filesystem::path& path) {
    return std::stoull(kv_get(kv, key, path));
}

}  // namespace

std::optional<SentenceRecord> JsonlRecordStream::next() {
    std::string line;
    while (std::getline(in_, line)) {
        line_no_++;
        if (trim(line).empty()) continue;
        auto rec = record_from_line(line);
        if (!rec) {
            skipped_++;
            continue;
        }
        return rec;
    }
    return std::nullopt;
}

std::string record_to_line(const SentenceRecord& rec) {
    nlohmann::json j;
    j["id"] = rec.id;
    j["source_tag"] = rec.source_tag;
    j["text"] = rec.text;
    return j.dump();
}

std::optional<SentenceRecord> record_from_line(const std::string& line) {
    auto j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    if (!j.contains("id") || !j["id"].is_string()) return std::nullopt;
    SentenceRecord rec;
    rec.id = j["id"].get<std::string>();
    if (rec.id.empty()) return std::nullopt;
    if (j.contains("text") && j["text"].is_string()) rec.text = j["text"].get<std::string>();
    if (j.contains("source_tag") && j["source_tag"].is_string()) {
        rec.source_tag = j["source_tag"].get<std::string>();
    }
    return rec;
}

uint64_t ShardManifest::digest() const {
    uint64_t h = kFnvOffset;
    h = fnv1a64(&shard_size, sizeof(shard_size), h);
    h = fnv1a64(&total_records, sizeof(total_records), h);
    for (const auto& s : shards) {
        h = fnv1a64(&s.records, sizeof(s.records), h);
        h = fnv1a64(&s.digest, sizeof(s.digest), h);
    }
    return h;
}

void ShardManifest::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest: " + path.string());
    out << "format_version = " << format_version << "\n";
    out << "shard_size = " << shard_size << "\n";
    out << "total_records = " << total_records << "\n";
    out << "skipped_empty_text = " << skipped_empty_text << "\n";
    out << "skipped_malformed = " << skipped_malformed << "\n";
    out << "shard_count = " << shards.size() << "\n";
    for (const auto& s : shards) {
        char prefix[32];
        std::snprintf(prefix, sizeof(prefix), "shard.%05u.", s.index);
        out << prefix << "file = " << s.file << "\n";
        out << prefix << "records = " << s.records << "\n";
        out << prefix << "bytes = " << s.bytes << "\n";
        out << prefix << "digest = " << to_hex(s.digest) << "\n";
    }
    if (!out) throw DataError("failed writing manifest: " + path.string());
}

ShardManifest ShardManifest::load(const std::filesystem::path& path) {
    auto kv = read_kv_file(path);
    ShardManifest m;
    m.format_version = static_cast<uint32_t>(kv_u64(kv, "format_version", path));
    if (m.format_version != 1) throw FormatError("unsupported manifest version in " + path.string());
    m.shard_size = kv_u64(kv, "shard_size", path);
    m.total_records = kv_u64(kv, "total_records", path);
    m.skipped_empty_text = kv_u64(kv, "skipped_empty_text", path);
    m.skipped_malformed = kv_u64(kv, "skipped_malformed", path);
    uint64_t n = kv_u64(kv, "shard_count", path);
    uint64_t sum = 0;
    for (uint64_t i = 0; i < n; ++i) {
        char prefix[32];
        std::snprintf(prefix, sizeof(prefix), "shard.%05" PRIu64 ".", i);
        ShardInfo s;
        s.index = static_cast<uint32_t>(i);
        s.file = kv_get(kv, std::string(prefix) + "file", path);
        s.records = kv_u64(kv, std::string(prefix) + "records", path);
        s.bytes = kv_u64(kv, std::string(prefix) + "bytes", path);
        s.digest = hex_to_u64(kv_get(kv, std::string(prefix) + "digest", path));
        sum += s.records;
        m.shards.push_back(std::move(s));
    }
    if (sum != m.total_records) {
        throw FormatError("manifest shard counts do not sum to total_records in " + path.string());
    }
    return m;
}

ShardManifest ingest(RecordStream& stream, uint64_t shard_size,
                     const std::filesystem::path& out_dir) {
    if (shard_size < 1) throw ConfigError("shard_size must be >= 1");
    std::filesystem::create_directories(out_dir);

    ShardManifest manifest;
    manifest.shard_size = shard_size;

    std::unordered_set<std::string> seen_ids;
    std::ofstream out;
    uint64_t in_shard = 0;
    uint64_t shard_bytes = 0;
    uint64_t shard_hash = kFnvOffset;
    uint32_t shard_index = 0;

    auto close_shard = [&]() {
        if (in_shard == 0) return;
        out.close();
        if (!out) throw DataError("failed writing shard " + shard_file_name(shard_index));
        ShardInfo info;
        info.index = shard_index;
        info.file = shard_file_name(shard_index);
        info.records = in_shard;
        info.bytes = shard_bytes;
        info.digest = shard_hash;
        manifest.shards.push_back(std::move(info));
        shard_index++;
        in_shard = 0;
        shard_bytes = 0;
        shard_hash = kFnvOffset;
    };

    while (auto rec = stream.next()) {
        if (trim(rec->text).empty()) {
            manifest.skipped_empty_text++;
            continue;
        }
        if (!seen_ids.insert(rec->id).second) {
            throw DataError("duplicate record id: '" + rec->id + "'");
        }
        if (in_shard == 0) {
            out.open(out_dir / shard_file_name(shard_index), std::ios::binary);
            if (!out) throw DataError("cannot create shard " + shard_file_name(shard_index));
        }
        std::string line = record_to_line(*rec);
        line.push_back('\n');
        out.write(line.data(), static_cast<std::streamsize>(line.size()));
        shard_hash = fnv1a64(line.data(), line.size(), shard_hash);
        shard_bytes += line.size();
        in_shard++;
        manifest.total_records++;
        if (in_shard == shard_size) close_shard();
    }
    close_shard();
    manifest.skipped_malformed = stream.skipped_malformed();
    return manifest;
}

std::vector<SentenceRecord> read_shard_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("missing shard file: " + path.string());
    std::vector<SentenceRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto rec = record_from_line(line);
        if (!rec) throw DataError("malformed record in shard file: " + path.string());
        records.push_back(std::move(*rec));
    }
    return records;
}

void read_shards(const ShardManifest& manifest, const std::filesystem::path& shard_dir,
                 const std::function<void(const SentenceRecord&)>& fn, bool verify_digests) {
    for (const auto& s : manifest.shards) {
        auto path = shard_dir / s.file;
        if (verify_digests && file_digest(path) != s.digest) {
            throw DataError("shard digest mismatch: " + s.file);
        }
        auto records = read_shard_file(path);
        if (records.size() != s.records) {
            throw DataError("shard record count mismatch: " + s.file);
        }
        for (const auto& r : records) fn(r);
    }
}

const char* split_name(Split s) {
    switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
    }
    return "?";
}

Split split_from_name(std::string_view name) {
    if (name == "train") return Split::kTrain;
    if (name == "validation" || name == "val") return Split::kValidation;
    if (name == "test") return Split::kTest;
    throw ConfigError("unknown split name: '" + std::string(name) + "'");
}

void SplitRatios::validate() const {
    for (double v : {train, validation, test}) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("split ratios must be in [0,1]");
    }
    if (std::abs(train + validation + test - 1.0) > 1e-9) {
        throw ConfigError("split ratios must sum to 1");
    }
}

double split_unit_value(std::string_view record_id, uint64_t seed) {
    unsigned char seed_bytes[8];
    for (int i = 0; i < 8; ++i) seed_bytes[i] = static_cast<unsigned char>(seed >> (8 * i));
    uint64_t h = fnv1a64(seed_bytes, sizeof(seed_bytes));
    h = fnv1a64(record_id, h);
    return unit_double(mix64(h));
}

Split split_of(std::string_view record_id, uint64_t seed, const SplitRatios& ratios) {
    double u = split_unit_value(record_id, seed);
    if (u < ratios.train) return Split::kTrain;
    if (u < ratios.train + ratios.validation) return Split::kValidation;
    return Split::kTest;
}

void SplitAssignment::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write split summary: " + path.string());
    out << "format_version = 1\n";
    out << "hash = mix64(fnv1a64(seed_le8 || id)), top 53 bits -> [0,1)\n";
    out << "seed = " << seed << "\n";
    out << "ratio.train = " << ratios.train << "\n";
    out << "ratio.validation = " << ratios.validation << "\n";
    out << "ratio.test = " << ratios.test << "\n";
    out << "manifest_digest = " << to_hex(manifest_digest) << "\n";
    out << "count.train = " << counts[0] << "\n";
    out << "count.validation = " << counts[1] << "\n";
    out << "count.test = " << counts[2] << "\n";
    out << "total = " << total() << "\n";
}

SplitAssignment SplitAssignment::load_summary(const std::filesystem::path& path) {
    auto kv = read_kv_file(path);
    SplitAssignment a;
    a.seed = kv_u64(kv, "seed", path);
    a.ratios.train = std::stod(kv_get(kv, "ratio.train", path));
    a.ratios.validation = std::stod(kv_get(kv, "ratio.validation", path));
    a.ratios.test = std::stod(kv_get(kv, "ratio.test", path));
    a.manifest_digest = hex_to_u64(kv_get(kv, "manifest_digest", path));
    a.counts[0] = kv_u64(kv, "count.train", path);
    a.counts[1] = kv_u64(kv, "count.validation", path);
    a.counts[2] = kv_u64(kv, "count.test", path);
    a.ratios.validate();
    return a;
}

SplitAssignment split(const ShardManifest& manifest, const std::filesystem::path& shard_dir,
                      const SplitRatios& ratios, uint64_t seed) {
    ratios.validate();
    if (manifest.total_records == 0) throw ConfigError("cannot split an empty manifest");
    SplitAssignment a;
    a.seed = seed;
    a.ratios = ratios;
    a.manifest_digest = manifest.digest();
    a.mapping.reserve(manifest.total_records);
    read_shards(manifest, shard_dir, [&](const SentenceRecord& rec) {
        Split s = split_of(rec.id, seed, ratios);
        a.mapping.emplace(rec.id, s);
        a.counts[static_cast<size_t>(s)]++;
    });
    if (a.total() != manifest.total_records) {
        throw DataError("split covered fewer ids than the manifest records (duplicate ids?)");
    }
    return a;
}

CorpusStats corpus_stats(const ShardManifest& manifest, const std::filesystem::path& shard_dir,
                         bool verify_digests) {
    CorpusStats st;
    st.records = manifest.total_records;
    st.shards = manifest.shards.size();
    st.skipped = manifest.skipped_total();
    for (const auto& s : manifest.shards) {
        auto path = shard_dir / s.file;
        if (!std::filesystem::exists(path)) {
            throw DataError("missing shard file: " + s.file);
        }
        auto size = file_size_or_throw(path);
        if (size != s.bytes) {
            throw DataError("shard size mismatch: " + s.file);
        }
        if (verify_digests && file_digest(path) != s.digest) {
            throw DataError("shard digest mismatch: " + s.file);
        }
        st.bytes += size;
    }
    return st;
}

}  // namespace mlmadapt
