#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "mlmadapt/chunks.hpp"

using namespace mlmadapt;

namespace {

std::filesystem::path fresh_dir(const char* name) {
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::vector<char> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<uint32_t, uint64_t> histogram(std::span<const TokenChunk> chunks, uint32_t pad_id,
                                       uint32_t delimiter_id, bool drop_delimiter) {
    std::map<uint32_t, uint64_t> h;
    for (const auto& c : chunks)
        for (uint32_t id : c.ids) {
            if (id == pad_id) continue;
            if (drop_delimiter && id == delimiter_id) continue;
            h[id]++;
        }
    return h;
}

}  // namespace

TEST_CASE("packer slices an exact multiple into unpadded chunks") {
    PackConfig cfg;
    cfg.chunk_len = 4;
    cfg.pad_id = 0;
    // 8 tokens -> exactly two chunks, no padding anywhere.
    std::vector<std::vector<uint32_t>> seqs{{5, 6, 7, 8}, {9, 10, 11, 12}};
    const auto chunks = pack(seqs, cfg, 3);
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[0].ids == std::vector<uint32_t>{5, 6, 7, 8});
    CHECK(chunks[1].ids == std::vector<uint32_t>{9, 10, 11, 12});
    CHECK(chunks[0].origin.shard == 3);
    CHECK(chunks[0].origin.chunk == 0);
    CHECK(chunks[1].origin.chunk == 1);
    CHECK(chunks[0].pad_count() == 0);
    CHECK(chunks[1].pad_count() == 0);
}

TEST_CASE("packer pads only the final chunk of a shard") {
    PackConfig cfg;
    cfg.chunk_len = 4;
    std::vector<std::vector<uint32_t>> seqs{{5, 6, 7}, {8, 9, 10}};  // 6 tokens -> 1.5 chunks
    const auto chunks = pack(seqs, cfg);
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[0].ids == std::vector<uint32_t>{5, 6, 7, 8});
    CHECK(chunks[1].ids == std::vector<uint32_t>{9, 10, 0, 0});
    CHECK(chunks[0].pad_count() == 0);
    CHECK(chunks[1].pad_count() == 2);
    CHECK(chunks[1].content_len() == 2);
    CHECK_FALSE(chunks[1].attended(3));
    CHECK(chunks[1].attended(1));
}

TEST_CASE("packer inserts delimiters between sequences when configured") {
    PackConfig cfg;
    cfg.chunk_len = 4;
    cfg.insert_delimiter = true;
    cfg.delimiter_id = 3;
    std::vector<std::vector<uint32_t>> seqs{{5, 6}, {7, 8}, {9}};
    // Delimiters separate consecutive sequences; none trails the last one.
    // Stream: 5 6 3 7 8 3 9 -> [5 6 3 7] [8 3 9 0].
    const auto chunks = pack(seqs, cfg);
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[0].ids == std::vector<uint32_t>{5, 6, 3, 7});
    CHECK(chunks[1].ids == std::vector<uint32_t>{8, 3, 9, 0});
}

TEST_CASE("packing conserves every non-pad token over random sequences") {
    PackConfig cfg;
    cfg.chunk_len = 256;
    cfg.pad_id = 0;

    RngStream rng(2024);
    std::vector<std::vector<uint32_t>> seqs;
    std::map<uint32_t, uint64_t> expected;
    for (int s = 0; s < 1000; ++s) {
        const size_t len = 1 + rng.next_below(40);
        std::vector<uint32_t> seq;
        seq.reserve(len);
        for (size_t i = 0; i < len; ++i) {
            const auto id = static_cast<uint32_t>(4 + rng.next_below(500));
            seq.push_back(id);
            expected[id]++;
        }
        seqs.push_back(std::move(seq));
    }

    SUBCASE("without delimiters the multisets match exactly") {
        const auto chunks = pack(seqs, cfg);
        CHECK(histogram(chunks, cfg.pad_id, 0, false) == expected);
        for (const auto& c : chunks) CHECK(c.ids.size() == 256);
        for (size_t i = 0; i + 1 < chunks.size(); ++i) CHECK(chunks[i].pad_count() == 0);
    }

    SUBCASE("with delimiters, exactly one per sequence boundary is added") {
        cfg.insert_delimiter = true;
        cfg.delimiter_id = 3;
        const auto chunks = pack(seqs, cfg);
        CHECK(histogram(chunks, cfg.pad_id, 3, true) == expected);
        uint64_t delims = 0;
        for (const auto& c : chunks)
            for (uint32_t id : c.ids)
                if (id == 3) delims++;
        CHECK(delims == seqs.size() - 1);
    }
}

TEST_CASE("packer resets per shard and numbers chunks within each shard") {
    PackConfig cfg;
    cfg.chunk_len = 3;
    ChunkPacker packer(cfg);
    std::vector<TokenChunk> chunks;

    packer.begin_shard(7);
    packer.add_sequence(std::vector<uint32_t>{4, 5, 6, 7}, chunks);
    if (auto tail = packer.finish_shard()) chunks.push_back(std::move(*tail));
    packer.begin_shard(9);
    packer.add_sequence(std::vector<uint32_t>{8, 9}, chunks);
    if (auto tail = packer.finish_shard()) chunks.push_back(std::move(*tail));

    REQUIRE(chunks.size() == 3);
    CHECK(chunks[0].origin.shard == 7);
    CHECK(chunks[0].origin.chunk == 0);
    CHECK(chunks[1].origin.shard == 7);
    CHECK(chunks[1].origin.chunk == 1);
    CHECK(chunks[1].ids == std::vector<uint32_t>{7, 0, 0});  // padded shard tail
    CHECK(chunks[2].origin.shard == 9);
    CHECK(chunks[2].origin.chunk == 0);
}

TEST_CASE("empty-shard finish emits nothing") {
    PackConfig cfg;
    cfg.chunk_len = 4;
    ChunkPacker packer(cfg);
    packer.begin_shard(0);
    CHECK_FALSE(packer.finish_shard().has_value());
}

TEST_CASE("pack config guards") {
    PackConfig cfg;
    cfg.chunk_len = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.chunk_len = 8;
    cfg.insert_delimiter = true;
    cfg.delimiter_id = cfg.pad_id;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("chunk file round-trip is bit-exact and the header adds up") {
    const auto dir = fresh_dir("mlmadapt-chunkio-test");
    PackConfig cfg;
    cfg.chunk_len = 16;

    RngStream rng(5);
    std::vector<TokenChunk> chunks;
    ChunkPacker packer(cfg);
    for (uint32_t shard : {0u, 1u, 5u}) {
        packer.begin_shard(shard);
        for (int s = 0; s < 20; ++s) {
            std::vector<uint32_t> seq(1 + rng.next_below(9));
            for (auto& id : seq) id = static_cast<uint32_t>(4 + rng.next_below(90));
            packer.add_sequence(seq, chunks);
        }
        if (auto tail = packer.finish_shard()) chunks.push_back(std::move(*tail));
    }

    const auto file_a = dir / "a.chunks";
    const ChunkFileHeader header = write_chunks(chunks, file_a);
    CHECK(header.chunk_count == chunks.size());
    CHECK(header.chunk_len == 16);
    CHECK(header.shard_table.size() == 3);
    // Documented size arithmetic: 32-byte fixed header + 8 bytes per shard
    // entry + 4 bytes per token id.
    CHECK(file_size_or_throw(file_a) == header.file_bytes());
    CHECK(header.header_bytes() == 32 + 8 * 3);

    const auto back = read_chunks(file_a);
    REQUIRE(back.size() == chunks.size());
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].ids == chunks[i].ids);
        CHECK(back[i].origin == chunks[i].origin);
        CHECK(back[i].pad_id == chunks[i].pad_id);
    }

    const auto file_b = dir / "b.chunks";
    write_chunks(back, file_b);
    CHECK(slurp(file_a) == slurp(file_b));  // bit-exact round trip

    // Header-only read agrees with the full read.
    const ChunkFileHeader h2 = read_chunk_header(file_a);
    CHECK(h2.chunk_count == header.chunk_count);
    CHECK(h2.shard_table == header.shard_table);
    std::filesystem::remove_all(dir);
}

TEST_CASE("chunk reader streams the same chunks as the bulk reader") {
    const auto dir = fresh_dir("mlmadapt-chunkreader-test");
    PackConfig cfg;
    cfg.chunk_len = 8;
    std::vector<std::vector<uint32_t>> seqs;
    RngStream rng(77);
    for (int i = 0; i < 50; ++i) {
        std::vector<uint32_t> s(1 + rng.next_below(12));
        for (auto& id : s) id = static_cast<uint32_t>(4 + rng.next_below(30));
        seqs.push_back(std::move(s));
    }
    const auto chunks = pack(seqs, cfg, 2);
    const auto file = dir / "stream.chunks";
    write_chunks(chunks, file);

    ChunkReader reader(file);
    size_t i = 0;
    while (auto c = reader.next()) {
        REQUIRE(i < chunks.size());
        CHECK(c->ids == chunks[i].ids);
        CHECK(c->origin == chunks[i].origin);
        ++i;
    }
    CHECK(i == chunks.size());
    std::filesystem::remove_all(dir);
}

TEST_CASE("corrupt chunk files are rejected") {
    const auto dir = fresh_dir("mlmadapt-chunkbad-test");
    const auto file = dir / "bad.chunks";
    {
        std::ofstream out(file, std::ios::binary);
        out << "this is not a chunk file at all";
    }
    CHECK_THROWS_AS((void)read_chunks(file), FormatError);
    CHECK_THROWS_AS((void)read_chunk_header(dir / "missing.chunks"), DataError);

    // Truncated payload: valid header, missing ids.
    PackConfig cfg;
    cfg.chunk_len = 4;
    std::vector<std::vector<uint32_t>> seqs{{4, 5, 6, 7}, {8, 9, 10, 11}};
    const auto chunks = pack(seqs, cfg);
    const auto good = dir / "good.chunks";
    write_chunks(chunks, good);
    const auto bytes = slurp(good);
    const auto truncated = dir / "trunc.chunks";
    {
        std::ofstream out(truncated, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 6));
    }
    CHECK_THROWS_AS((void)read_chunks(truncated), FormatError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("encode_stream drops empty encodings and reports stats") {
    ToyTokenizer tok({"cat", "sat"});
    std::vector<SentenceRecord> recs(3);
    recs[0] = {"a", "cat sat", "t"};
    recs[1] = {"b", "   ", "t"};  // encodes to nothing
    recs[2] = {"c", "sat", "t"};
    VectorRecordStream stream(recs);
    EncodeStats stats;
    std::vector<std::vector<uint32_t>> seqs;
    encode_stream(stream, tok, [&](std::vector<uint32_t> ids) { seqs.push_back(std::move(ids)); },
                  &stats);
    REQUIRE(seqs.size() == 2);
    CHECK(seqs[0] == std::vector<uint32_t>{4, 5});
    CHECK(seqs[1] == std::vector<uint32_t>{5});
    CHECK(stats.encoded == 2);
    CHECK(stats.dropped_empty == 1);
}
