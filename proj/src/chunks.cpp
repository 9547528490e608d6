#include "mlmadapt/chunks.hpp"

#include <cstring>
#include <fstream>

namespace mlmadapt {

namespace {

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
public:
    ByteReader(std::istream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

    uint32_t u32() {
        unsigned char b[4];
        read(b, 4);
        return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
               static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
    }

    uint64_t u64() {
        uint64_t lo = u32();
        uint64_t hi = u32();
        return lo | (hi << 32);
    }

    void read(void* dst, size_t n) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in_.gcount()) != n) {
            throw FormatError("truncated chunk file " + path_.string() + " at byte offset " +
                              std::to_string(offset_ + static_cast<uint64_t>(in_.gcount())));
        }
        offset_ += n;
    }

    uint64_t offset() const { return offset_; }

private:
    std::istream& in_;
    std::filesystem::path path_;
    uint64_t offset_ = 0;
};

ChunkFileHeader read_header_impl(ByteReader& r, const std::filesystem::path& path) {
    uint32_t magic = r.u32();
    if (magic != kChunkMagic) {
        throw FormatError("bad magic in chunk file " + path.string() + " at byte offset 0");
    }
    uint32_t version = r.u32();
    if (version != kChunkVersion) {
        throw FormatError("unsupported chunk file version " + std::to_string(version) + " in " +
                          path.string() + " at byte offset 4");
    }
    ChunkFileHeader h;
    h.chunk_len = r.u32();
    h.pad_id = r.u32();
    h.chunk_count = r.u64();
    uint32_t entries = r.u32();
    r.u32();  // reserved
    uint64_t sum = 0;
    for (uint32_t i = 0; i < entries; ++i) {
        uint32_t shard = r.u32();
        uint32_t count = r.u32();
        h.shard_table.emplace_back(shard, count);
        sum += count;
    }
    if (h.chunk_len < 2) throw FormatError("chunk_len < 2 in " + path.string());
    if (sum != h.chunk_count) {
        throw FormatError("shard table does not sum to chunk_count in " + path.string());
    }
    return h;
}

}  // namespace

void encode_stream(RecordStream& records, const TokenizerAdapter& tok,
                   const std::function<void(std::vector<uint32_t>)>& sink,
                   EncodeStats* stats, std::ostream* warn) {
    EncodeStats local;
    EncodeStats& st = stats ? *stats : local;
    while (auto rec = records.next()) {
        std::vector<uint32_t> ids;
        try {
            ids = tok.encode(rec->text);
        } catch (const std::exception& e) {
            st.failed++;
            if (warn) *warn << "encode failed for record '" << rec->id << "': " << e.what() << "\n";
            continue;
        }
        if (ids.empty()) {
            st.dropped_empty++;
            continue;
        }
        st.encoded++;
        sink(std::move(ids));
    }
}

std::vector<std::vector<uint32_t>> encode_records(std::span<const SentenceRecord> records,
                                                  const TokenizerAdapter& tok, EncodeStats* stats,
                                                  std::ostream* warn) {
    VectorRecordStream stream(std::vector<SentenceRecord>(records.begin(), records.end()));
    std::vector<std::vector<uint32_t>> out;
    encode_stream(
        stream, tok, [&](std::vector<uint32_t> ids) { out.push_back(std::move(ids)); }, stats,
        warn);
    return out;
}

void ChunkPacker::begin_shard(uint32_t shard_index) {
    if (!buffer_.empty()) throw DataError("begin_shard with unfinished shard buffer");
    shard_ = shard_index;
    next_chunk_ = 0;
    any_sequence_ = false;
}

TokenChunk ChunkPacker::take_chunk(size_t len) {
    TokenChunk c;
    c.origin = {shard_, next_chunk_++};
    c.pad_id = cfg_.pad_id;
    c.ids.assign(buffer_.begin(), buffer_.begin() + static_cast<ptrdiff_t>(len));
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<ptrdiff_t>(len));
    return c;
}

void ChunkPacker::add_sequence(std::span<const uint32_t> ids, std::vector<TokenChunk>& out) {
    if (ids.empty()) return;
    if (cfg_.insert_delimiter && any_sequence_) buffer_.push_back(cfg_.delimiter_id);
    buffer_.insert(buffer_.end(), ids.begin(), ids.end());
    any_sequence_ = true;
    while (buffer_.size() >= cfg_.chunk_len) out.push_back(take_chunk(cfg_.chunk_len));
}

std::optional<TokenChunk> ChunkPacker::finish_shard() {
    if (buffer_.empty()) return std::nullopt;
    size_t len = buffer_.size();
    TokenChunk c = take_chunk(len);
    c.ids.resize(cfg_.chunk_len, cfg_.pad_id);
    any_sequence_ = false;
    return c;
}

std::vector<TokenChunk> pack(std::span<const std::vector<uint32_t>> sequences,
                             const PackConfig& cfg, uint32_t shard_index) {
    ChunkPacker packer(cfg);
    packer.begin_shard(shard_index);
    std::vector<TokenChunk> out;
    for (const auto& seq : sequences) packer.add_sequence(seq, out);
    if (auto last = packer.finish_shard()) out.push_back(std::move(*last));
    return out;
}

ChunkFileHeader write_chunks(std::span<const TokenChunk> chunks,
                             const std::filesystem::path& path) {
    ChunkFileHeader h;
    if (!chunks.empty()) {
        h.chunk_len = chunks[0].length();
        h.pad_id = chunks[0].pad_id;
    } else {
        h.chunk_len = 256;
        h.pad_id = 0;
    }
    h.chunk_count = chunks.size();

    for (const auto& c : chunks) {
        if (c.length() != h.chunk_len) throw DataError("chunks do not share chunk_len");
        if (c.pad_id != h.pad_id) throw DataError("chunks do not share pad_id");
        if (h.shard_table.empty() || h.shard_table.back().first != c.origin.shard) {
            if (c.origin.chunk != 0) {
                throw DataError("chunk indices must start at 0 within each shard");
            }
            h.shard_table.emplace_back(c.origin.shard, 0);
        } else if (c.origin.chunk != h.shard_table.back().second) {
            throw DataError("chunk indices must be consecutive within a shard");
        }
        h.shard_table.back().second++;
    }

    std::string bytes;
    bytes.reserve(h.file_bytes());
    put_u32(bytes, kChunkMagic);
    put_u32(bytes, kChunkVersion);
    put_u32(bytes, h.chunk_len);
    put_u32(bytes, h.pad_id);
    put_u64(bytes, h.chunk_count);
    put_u32(bytes, static_cast<uint32_t>(h.shard_table.size()));
    put_u32(bytes, 0);
    for (auto [shard, count] : h.shard_table) {
        put_u32(bytes, shard);
        put_u32(bytes, count);
    }
    for (const auto& c : chunks) {
        for (uint32_t id : c.ids) put_u32(bytes, id);
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write chunk file: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing chunk file: " + path.string());
    return h;
}

struct ChunkReader::Impl {
    std::ifstream in;
    ByteReader reader;
    size_t table_pos = 0;
    uint32_t in_shard = 0;
    uint64_t remaining = 0;
    std::filesystem::path path;

    Impl(const std::filesystem::path& p, std::ifstream&& stream)
        : in(std::move(stream)), reader(in, p), path(p) {}
};

ChunkReader::ChunkReader(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open chunk file: " + path.string());
    impl_ = new Impl(path, std::move(in));
    header_ = read_header_impl(impl_->reader, path);
    impl_->remaining = header_.chunk_count;
}

ChunkReader::~ChunkReader() { delete impl_; }

std::optional<TokenChunk> ChunkReader::next() {
    if (impl_->remaining == 0) return std::nullopt;
    // Advance the shard table to the entry owning the next chunk.
    while (impl_->table_pos < header_.shard_table.size() &&
           impl_->in_shard == header_.shard_table[impl_->table_pos].second) {
        impl_->table_pos++;
        impl_->in_shard = 0;
    }
    TokenChunk c;
    c.origin = {header_.shard_table[impl_->table_pos].first, impl_->in_shard};
    c.pad_id = header_.pad_id;
    c.ids.resize(header_.chunk_len);
    for (auto& id : c.ids) id = impl_->reader.u32();
    impl_->in_shard++;
    impl_->remaining--;

    // Padding must be a contiguous suffix.
    bool in_pad = false;
    for (uint32_t id : c.ids) {
        if (id == header_.pad_id) {
            in_pad = true;
        } else if (in_pad) {
            throw FormatError("non-contiguous padding in chunk file " + impl_->path.string());
        }
    }
    return c;
}

ChunkFileHeader read_chunk_header(const std::filesystem::path& path) {
    ChunkReader r(path);
    return r.header();
}

std::vector<TokenChunk> read_chunks(const std::filesystem::path& path) {
    ChunkReader r(path);
    std::vector<TokenChunk> out;
    out.reserve(r.header().chunk_count);
    while (auto c = r.next()) out.push_back(std::move(*c));
    return out;
}

}  // namespace mlmadapt
