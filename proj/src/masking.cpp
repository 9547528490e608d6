#include "mlmadapt/masking.hpp"

#include <fstream>

namespace mlmadapt {

namespace {

uint64_t position_key(uint64_t seed, ChunkOrigin origin, uint32_t pos) {
    uint64_t h = mix64(seed);
    h = mix_chain(h, origin.shard);
    h = mix_chain(h, origin.chunk);
    h = mix_chain(h, pos);
    return h;
}

uint32_t draw_random_replacement(RngStream& rng, const TokenizerInfo& tok) {
    // Specials are a handful of ids, so rejection terminates almost at once;
    // the scan fallback keeps tiny vocabularies safe.
    for (int tries = 0; tries < 256; ++tries) {
        auto id = static_cast<uint32_t>(rng.next_below(tok.vocab_size));
        if (!tok.specials.is_special(id)) return id;
    }
    for (uint32_t id = 0; id < tok.vocab_size; ++id) {
        if (!tok.specials.is_special(id)) return id;
    }
    throw ConfigError("vocabulary contains only special tokens");
}

}  // namespace

bool mask_eligible(const TokenChunk& chunk, size_t pos, const SpecialIds& specials) {
    return chunk.attended(pos) && !specials.is_special(chunk.ids[pos]);
}

MaskedExample mask_chunk(const TokenChunk& chunk, const MaskPolicy& policy,
                         const TokenizerInfo& tok, uint64_t seed) {
    policy.validate();
    MaskedExample ex;
    ex.origin = chunk.origin;
    ex.input_ids = chunk.ids;
    ex.labels.assign(chunk.ids.size(), kIgnoreLabel);

    for (uint32_t pos = 0; pos < chunk.length(); ++pos) {
        if (!mask_eligible(chunk, pos, tok.specials)) continue;
        RngStream rng(position_key(seed, chunk.origin, pos));
        if (rng.next_unit() >= policy.select_prob) continue;

        ex.labels[pos] = static_cast<int32_t>(chunk.ids[pos]);
        double u = rng.next_unit();
        if (u < policy.mask_frac) {
            ex.input_ids[pos] = tok.specials.mask;
        } else if (u < policy.mask_frac + policy.random_frac) {
            ex.input_ids[pos] = draw_random_replacement(rng, tok);
        }
        // else: keep the original token, labeled.
    }
    return ex;
}

std::vector<MaskedExample> mask_stream(std::span<const TokenChunk> chunks,
                                       const MaskPolicy& policy, const TokenizerInfo& tok,
                                       uint64_t seed) {
    std::vector<MaskedExample> out;
    out.reserve(chunks.size());
    for (const auto& c : chunks) out.push_back(mask_chunk(c, policy, tok, seed));
    return out;
}

namespace {

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, uint64_t v) {
    put_u32(buf, static_cast<uint32_t>(v));
    put_u32(buf, static_cast<uint32_t>(v >> 32));
}

uint32_t get_u32(std::istream& in, const std::filesystem::path& path, uint64_t& offset) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) {
        throw FormatError("truncated masked file " + path.string() + " at byte offset " +
                          std::to_string(offset + static_cast<uint64_t>(in.gcount())));
    }
    offset += 4;
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

}  // namespace

void write_masked(std::span<const MaskedExample> examples, uint32_t pad_id,
                  const std::filesystem::path& path) {
    uint32_t chunk_len = examples.empty() ? 256 : examples[0].length();
    std::vector<std::pair<uint32_t, uint32_t>> table;
    for (const auto& ex : examples) {
        if (ex.length() != chunk_len) throw DataError("masked examples do not share chunk_len");
        if (table.empty() || table.back().first != ex.origin.shard) {
            if (ex.origin.chunk != 0) {
                throw DataError("example chunk indices must start at 0 within each shard");
            }
            table.emplace_back(ex.origin.shard, 0);
        } else if (ex.origin.chunk != table.back().second) {
            throw DataError("example chunk indices must be consecutive within a shard");
        }
        table.back().second++;
    }

    std::string bytes;
    put_u32(bytes, kMaskedMagic);
    put_u32(bytes, kMaskedVersion);
    put_u32(bytes, chunk_len);
    put_u32(bytes, pad_id);
    put_u32(bytes, kIgnoreSentinel);
    put_u32(bytes, static_cast<uint32_t>(table.size()));
    put_u64(bytes, examples.size());
    for (auto [shard, count] : table) {
        put_u32(bytes, shard);
        put_u32(bytes, count);
    }
    for (const auto& ex : examples) {
        for (uint32_t id : ex.input_ids) put_u32(bytes, id);
        for (int32_t l : ex.labels) {
            put_u32(bytes, l == kIgnoreLabel ? kIgnoreSentinel : static_cast<uint32_t>(l));
        }
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write masked file: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing masked file: " + path.string());
}

std::vector<MaskedExample> read_masked(const std::filesystem::path& path, uint32_t* pad_id_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open masked file: " + path.string());
    uint64_t off = 0;
    uint32_t magic = get_u32(in, path, off);
    if (magic != kMaskedMagic) {
        throw FormatError("bad magic in masked file " + path.string() + " at byte offset 0");
    }
    uint32_t version = get_u32(in, path, off);
    if (version != kMaskedVersion) {
        throw FormatError("unsupported masked file version in " + path.string());
    }
    uint32_t chunk_len = get_u32(in, path, off);
    uint32_t pad_id = get_u32(in, path, off);
    uint32_t sentinel = get_u32(in, path, off);
    if (sentinel != kIgnoreSentinel) {
        throw FormatError("unexpected ignore sentinel in " + path.string());
    }
    uint32_t entries = get_u32(in, path, off);
    uint64_t count = get_u32(in, path, off);
    count |= static_cast<uint64_t>(get_u32(in, path, off)) << 32;

    std::vector<std::pair<uint32_t, uint32_t>> table;
    uint64_t sum = 0;
    for (uint32_t i = 0; i < entries; ++i) {
        uint32_t shard = get_u32(in, path, off);
        uint32_t n = get_u32(in, path, off);
        table.emplace_back(shard, n);
        sum += n;
    }
    if (sum != count) throw FormatError("shard table does not sum to example count in " + path.string());

    std::vector<MaskedExample> out;
    out.reserve(count);
    for (auto [shard, n] : table) {
        for (uint32_t i = 0; i < n; ++i) {
            MaskedExample ex;
            ex.origin = {shard, i};
            ex.input_ids.resize(chunk_len);
            ex.labels.resize(chunk_len);
            for (auto& id : ex.input_ids) id = get_u32(in, path, off);
            for (auto& l : ex.labels) {
                uint32_t v = get_u32(in, path, off);
                l = v == kIgnoreSentinel ? kIgnoreLabel : static_cast<int32_t>(v);
            }
            out.push_back(std::move(ex));
        }
    }
    if (pad_id_out) *pad_id_out = pad_id;
    return out;
}

}  // namespace mlmadapt
