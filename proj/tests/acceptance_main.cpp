// Acceptance suite: end-to-end checks of the toolkit's contract, one
// numbered criterion per line of output. Each criterion prints
//
//   [NN] PASS <what was verified> (<elapsed>)
//   [NN] FAIL <first violated expectation>
//
// and the process exits nonzero if any criterion fails. Tolerances and time
// budgets are stated inline next to each check.

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mlmadapt/backend.hpp"
#include "mlmadapt/chunks.hpp"
#include "mlmadapt/common.hpp"
#include "mlmadapt/corpus.hpp"
#include "mlmadapt/eval.hpp"
#include "mlmadapt/masking.hpp"
#include "mlmadapt/report.hpp"
#include "mlmadapt/synth.hpp"
#include "mlmadapt/tiny_encoder.hpp"
#include "mlmadapt/tokenizer.hpp"
#include "mlmadapt/train.hpp"

namespace ma = mlmadapt;
namespace fs = std::filesystem;

namespace {

#ifndef FIXTURES_DIR
#error "FIXTURES_DIR must point at the test fixtures"
#endif

fs::path g_scratch;

struct CheckFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void expect(bool ok, const std::string& what) {
    if (!ok) throw CheckFailure(what);
}

std::string fmt(const char* pattern, ...) {
    va_list args;
    va_start(args, pattern);
    char buf[512];
    std::vsnprintf(buf, sizeof buf, pattern, args);
    va_end(args);
    return buf;
}

// ---------------------------------------------------------------------------
// Shared synthetic dataset: a small generated corpus tokenized and packed
// into one shard of fixed-length chunks, plus one masked rendering of it.
// ---------------------------------------------------------------------------

struct SynthDataset {
    ma::ToyTokenizer tok;
    std::vector<ma::TokenChunk> chunks;
    std::vector<ma::MaskedExample> masked;
    uint64_t mask_seed = 0;
};

SynthDataset build_synth_dataset(uint64_t synth_seed, uint64_t sentences, uint32_t vocab,
                                 uint32_t chunk_len, uint64_t mask_seed) {
    const fs::path dir = g_scratch / ("synth-" + std::to_string(synth_seed));
    ma::SynthConfig cfg;
    cfg.seed = synth_seed;
    cfg.sentences = sentences;
    cfg.vocab = vocab;
    ma::gen_synthetic_corpus(cfg, dir);

    ma::ToyTokenizer tok = ma::ToyTokenizer::load(dir / "vocab.txt");
    std::ifstream in(dir / "corpus.jsonl", std::ios::binary);
    expect(static_cast<bool>(in), "generated corpus is readable");
    ma::JsonlRecordStream records(in);

    ma::PackConfig pack_cfg;
    pack_cfg.chunk_len = chunk_len;
    pack_cfg.pad_id = tok.specials().pad;
    pack_cfg.insert_delimiter = tok.specials().delimiter.has_value();
    pack_cfg.delimiter_id = tok.specials().delimiter.value_or(0);
    ma::ChunkPacker packer(pack_cfg);
    std::vector<ma::TokenChunk> chunks;
    packer.begin_shard(0);
    ma::encode_stream(records, tok,
                      [&](std::vector<uint32_t> ids) { packer.add_sequence(ids, chunks); });
    if (auto tail = packer.finish_shard()) chunks.push_back(std::move(*tail));
    expect(!chunks.empty(), "synthetic corpus packs into at least one chunk");

    std::vector<ma::MaskedExample> masked =
        ma::mask_stream(chunks, ma::MaskPolicy{}, tok.info(), mask_seed);
    return SynthDataset{std::move(tok), std::move(chunks), std::move(masked), mask_seed};
}

// Fixed-logits stub backends used by the metric-oracle criteria. The tables
// are regenerated identically by the brute-force recomputation below.
std::vector<Eigen::RowVectorXf> stub_table(uint32_t vocab, size_t rows, uint64_t key) {
    std::vector<Eigen::RowVectorXf> table(rows);
    for (size_t r = 0; r < rows; ++r) {
        ma::RngStream rng(ma::mix_chain(ma::mix64(key), r));
        table[r].resize(static_cast<Eigen::Index>(vocab));
        for (Eigen::Index c = 0; c < table[r].size(); ++c)
            table[r](c) = static_cast<float>(rng.next_gaussian());
    }
    return table;
}

constexpr uint64_t kStubAKey = 0xA11CE;
constexpr uint64_t kStubBKey = 0xB0B;
constexpr size_t kStubARows = 5;
constexpr size_t kStubBRows = 7;

std::unique_ptr<ma::StubBackend> make_stub_a(uint32_t vocab) {
    return std::make_unique<ma::StubBackend>(vocab, ma::StubBackend::KeyBy::kPosition,
                                             stub_table(vocab, kStubARows, kStubAKey));
}

std::unique_ptr<ma::StubBackend> make_stub_b(uint32_t vocab) {
    return std::make_unique<ma::StubBackend>(vocab, ma::StubBackend::KeyBy::kLabel,
                                             stub_table(vocab, kStubBRows, kStubBKey));
}

// ---------------------------------------------------------------------------
// Independent metric recomputation: its own log-sum-exp, its own rank rule,
// its own counters. Shares nothing with src/eval.cpp beyond the inputs.
// ---------------------------------------------------------------------------

double brute_nll(const Eigen::RowVectorXf& row, uint32_t label) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < row.size(); ++i)
        mx = std::max(mx, static_cast<double>(row(i)));
    double sum = 0.0;
    for (Eigen::Index i = 0; i < row.size(); ++i)
        sum += std::exp(static_cast<double>(row(i)) - mx);
    return mx + std::log(sum) - static_cast<double>(row(static_cast<Eigen::Index>(label)));
}

uint64_t brute_rank(const Eigen::RowVectorXf& row, uint32_t label) {
    const float score = row(static_cast<Eigen::Index>(label));
    uint64_t ahead = 0;
    for (Eigen::Index i = 0; i < row.size(); ++i) {
        if (row(i) > score) ahead++;
        else if (row(i) == score && static_cast<uint32_t>(i) < label) ahead++;
    }
    return ahead + 1;
}

struct BruteMetrics {
    uint64_t labeled = 0;
    double nll_sum = 0.0;
    std::vector<uint64_t> hits;  // parallel to ks
};

// Recomputes what a stub backend should score on `masked`, consulting the
// regenerated score tables directly instead of Backend::forward.
BruteMetrics brute_force_stub(const std::vector<Eigen::RowVectorXf>& table, bool by_label,
                              const std::vector<ma::MaskedExample>& masked,
                              const std::vector<uint32_t>& ks) {
    BruteMetrics out;
    out.hits.assign(ks.size(), 0);
    Eigen::RowVectorXf zero;
    for (const ma::MaskedExample& ex : masked) {
        for (size_t t = 0; t < ex.labels.size(); ++t) {
            if (ex.labels[t] == ma::kIgnoreLabel) continue;
            const auto label = static_cast<uint32_t>(ex.labels[t]);
            const Eigen::RowVectorXf& row =
                by_label ? table[label % table.size()] : table[t % table.size()];
            out.labeled++;
            out.nll_sum += brute_nll(row, label);
            const uint64_t rank = brute_rank(row, label);
            for (size_t i = 0; i < ks.size(); ++i)
                if (rank <= ks[i]) out.hits[i]++;
        }
    }
    return out;
}

double rel_diff(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / denom;
}

// ---------------------------------------------------------------------------
// [01] Scale statement: full-scale corpora and pretrained weights are
// external inputs this artifact cannot carry, so acceptance rests on the
// stored-log replay, the oracles, and the property checks below.
// ---------------------------------------------------------------------------

std::string criterion_01() {
    const fs::path log_a = fs::path(FIXTURES_DIR) / "paired_log_a.txt";
    const fs::path log_b = fs::path(FIXTURES_DIR) / "paired_log_b.txt";
    expect(fs::exists(log_a) && fs::exists(log_b),
           "stored per-position evaluation logs are present under tests/fixtures");
    return "full-scale corpora/pretrained weights are external inputs; acceptance rests on "
           "the stored-log replay, oracle, and property criteria below";
}

// ---------------------------------------------------------------------------
// [02] Stored-log replay reproduces the published comparison figures exactly
// after two-decimal formatting: perplexity 6.60 vs 22.87 and top-1/2/5
// accuracy 52.55/63.07/73.59 vs 48.02/58.60/68.98.
// ---------------------------------------------------------------------------

std::string criterion_02() {
    const ma::EvalReport a =
        ma::report_from(ma::replay_position_log(fs::path(FIXTURES_DIR) / "paired_log_a.txt"));
    const ma::EvalReport b =
        ma::report_from(ma::replay_position_log(fs::path(FIXTURES_DIR) / "paired_log_b.txt"));

    const auto check_cell = [](const std::string& got, const char* want, const char* what) {
        expect(got == want, std::string(what) + ": expected " + want + ", got " + got);
    };
    check_cell(ma::format_fixed2(a.perplexity()), "6.60", "perplexity A");
    check_cell(ma::format_fixed2(b.perplexity()), "22.87", "perplexity B");
    check_cell(ma::format_percent2(a.accuracy(1)), "52.55%", "top-1 A");
    check_cell(ma::format_percent2(a.accuracy(2)), "63.07%", "top-2 A");
    check_cell(ma::format_percent2(a.accuracy(5)), "73.59%", "top-5 A");
    check_cell(ma::format_percent2(b.accuracy(1)), "48.02%", "top-1 B");
    check_cell(ma::format_percent2(b.accuracy(2)), "58.60%", "top-2 B");
    check_cell(ma::format_percent2(b.accuracy(5)), "68.98%", "top-5 B");

    const std::string table = ma::render_report(a, b, "adapted", "baseline");
    for (const char* cell : {"6.60 *", "52.55% *", "63.07% *", "73.59% *"})
        expect(table.find(cell) != std::string::npos,
               std::string("rendered table marks the winner cell ") + cell);
    for (const char* cell : {"22.87 *", "48.02% *", "58.60% *", "68.98% *"})
        expect(table.find(cell) == std::string::npos,
               std::string("rendered table must not mark the losing cell ") + cell);
    return fmt("replayed %" PRIu64 "+%" PRIu64
               " stored positions; 6.60/22.87 and 52.55/63.07/73.59 vs 48.02/58.60/68.98 "
               "reproduced exactly at 2 decimals",
               a.labeled, b.labeled);
}

// ---------------------------------------------------------------------------
// [03] Metric oracle equivalence: evaluate() and compare() agree with an
// independent brute-force recomputation on a synthetic corpus with <= 1e4
// labeled positions — counts exactly, NLL sums within 1e-9 relative.
// ---------------------------------------------------------------------------

std::string criterion_03(const SynthDataset& data) {
    const uint32_t vocab = data.tok.vocab_size();
    ma::EvalConfig cfg;
    cfg.ks = {1, 2, 5};
    cfg.mask_seed = data.mask_seed;

    uint64_t labeled_total = 0;
    for (const auto& ex : data.masked) labeled_total += ex.labeled_count();
    expect(labeled_total >= 500 && labeled_total <= 10000,
           fmt("oracle corpus must stay desk-sized: %" PRIu64 " labeled positions",
               labeled_total));

    const auto backend_a = make_stub_a(vocab);
    const auto backend_b = make_stub_b(vocab);
    const auto table_a = stub_table(vocab, kStubARows, kStubAKey);
    const auto table_b = stub_table(vocab, kStubBRows, kStubBKey);

    // evaluate() vs the brute force, per backend.
    const ma::EvalReport report_a =
        ma::evaluate(*backend_a, data.chunks, ma::MaskPolicy{}, data.tok.info(), cfg);
    const ma::EvalReport report_b =
        ma::evaluate(*backend_b, data.chunks, ma::MaskPolicy{}, data.tok.info(), cfg);
    const BruteMetrics brute_a = brute_force_stub(table_a, false, data.masked, cfg.ks);
    const BruteMetrics brute_b = brute_force_stub(table_b, true, data.masked, cfg.ks);

    const auto check_report = [&](const ma::EvalReport& got, const BruteMetrics& want,
                                  const char* tag) {
        expect(got.labeled == want.labeled, fmt("%s: labeled %" PRIu64 " vs brute %" PRIu64,
                                                tag, got.labeled, want.labeled));
        for (size_t i = 0; i < cfg.ks.size(); ++i)
            expect(got.hits[i] == want.hits[i],
                   fmt("%s: hits@%u %" PRIu64 " vs brute %" PRIu64, tag, cfg.ks[i],
                       got.hits[i], want.hits[i]));
        expect(rel_diff(got.nll_sum, want.nll_sum) <= 1e-9,
               fmt("%s: NLL sum %.17g vs brute %.17g exceeds 1e-9 relative", tag,
                   got.nll_sum, want.nll_sum));
    };
    check_report(report_a, brute_a, "evaluate A");
    check_report(report_b, brute_b, "evaluate B");

    // compare() vs the brute force: embedded reports and the 2x2 tally.
    const ma::ComparisonResult cmp = ma::compare(*backend_a, *backend_b, data.chunks,
                                                 ma::MaskPolicy{}, data.tok.info(), cfg);
    check_report(cmp.a, brute_a, "compare A");
    check_report(cmp.b, brute_b, "compare B");
    expect(cmp.tally.labeled == labeled_total, "tally covers every labeled position");
    for (size_t i = 0; i < cfg.ks.size(); ++i) {
        ma::TallyCells want;
        for (const ma::MaskedExample& ex : data.masked) {
            for (size_t t = 0; t < ex.labels.size(); ++t) {
                if (ex.labels[t] == ma::kIgnoreLabel) continue;
                const auto label = static_cast<uint32_t>(ex.labels[t]);
                const bool hit_a =
                    brute_rank(table_a[t % table_a.size()], label) <= cfg.ks[i];
                const bool hit_b =
                    brute_rank(table_b[label % table_b.size()], label) <= cfg.ks[i];
                if (hit_a && hit_b) want.both_hit++;
                else if (hit_a) want.a_only++;
                else if (hit_b) want.b_only++;
                else want.both_miss++;
            }
        }
        const ma::TallyCells& got = cmp.tally.at_k(cfg.ks[i]);
        expect(got.both_hit == want.both_hit && got.a_only == want.a_only &&
                   got.b_only == want.b_only && got.both_miss == want.both_miss,
               fmt("tally cells at k=%u differ from the brute force", cfg.ks[i]));
    }
    return fmt("evaluate+compare match the independent recomputation on %" PRIu64
               " labeled positions: counts exact, NLL within 1e-9 relative",
               labeled_total);
}

// ---------------------------------------------------------------------------
// [04] Uniform-logits analytic check: a uniform backend over vocab 50 scores
// masked-token perplexity 50.0 within 1e-6 relative.
// ---------------------------------------------------------------------------

std::string criterion_04(const SynthDataset& data) {
    expect(data.tok.vocab_size() <= 50, "tokenizer ids must fit the vocab-50 uniform model");
    const auto uniform = ma::StubBackend::uniform(50);
    ma::EvalConfig cfg;
    cfg.mask_seed = data.mask_seed;
    const ma::EvalReport report =
        ma::evaluate(*uniform, data.chunks, ma::MaskPolicy{}, data.tok.info(), cfg);
    const double ppl = report.perplexity();
    expect(rel_diff(ppl, 50.0) <= 1e-6,
           fmt("uniform vocab-50 perplexity %.9f deviates from 50.0 beyond 1e-6", ppl));
    return fmt("uniform vocab-50 backend scores perplexity %.9f over %" PRIu64
               " positions (|rel err| <= 1e-6)",
               ppl, report.labeled);
}

// ---------------------------------------------------------------------------
// [05] Masking statistics over >= 1e6 eligible positions: selection within
// 15% +- 0.5pp, mask/random/keep within +-2pp of 80/10/10, and identical
// seeds produce bit-identical masked corpora.
// ---------------------------------------------------------------------------

std::string criterion_05() {
    constexpr uint32_t kVocab = 5004;
    constexpr uint32_t kChunkLen = 256;
    constexpr uint32_t kChunks = 4096;  // 1,048,576 eligible positions
    ma::TokenizerInfo info;
    info.vocab_size = kVocab;
    info.specials = ma::SpecialIds{0, 1, 2, 3};

    std::vector<ma::TokenChunk> chunks(kChunks);
    ma::RngStream rng(ma::mix64(0xFEED5EED));
    for (uint32_t i = 0; i < kChunks; ++i) {
        chunks[i].origin = {i / 256, i % 256};
        chunks[i].pad_id = 0;
        chunks[i].ids.resize(kChunkLen);
        for (auto& id : chunks[i].ids)
            id = 4 + static_cast<uint32_t>(rng.next_below(kVocab - 4));
    }
    const uint64_t eligible = uint64_t{kChunks} * kChunkLen;

    const ma::MaskPolicy policy;  // 15%, 80/10/10
    const uint64_t seed = 20250815;
    const auto masked = ma::mask_stream(chunks, policy, info, seed);
    const auto masked_again = ma::mask_stream(chunks, policy, info, seed);
    expect(masked.size() == masked_again.size(), "same seed: same example count");
    for (size_t i = 0; i < masked.size(); ++i) {
        expect(masked[i].input_ids == masked_again[i].input_ids &&
                   masked[i].labels == masked_again[i].labels &&
                   masked[i].origin == masked_again[i].origin,
               fmt("same seed must give a bit-identical masked corpus (example %zu)", i));
    }

    uint64_t selected = 0, mask_outcome = 0, keep_outcome = 0, random_outcome = 0;
    for (size_t i = 0; i < masked.size(); ++i) {
        const ma::MaskedExample& ex = masked[i];
        for (size_t t = 0; t < ex.labels.size(); ++t) {
            if (ex.labels[t] == ma::kIgnoreLabel) continue;
            selected++;
            const auto original = static_cast<uint32_t>(ex.labels[t]);
            if (ex.input_ids[t] == info.specials.mask) mask_outcome++;
            else if (ex.input_ids[t] == original) keep_outcome++;
            else random_outcome++;
        }
    }
    const double sel_rate = static_cast<double>(selected) / static_cast<double>(eligible);
    expect(std::abs(sel_rate - policy.select_prob) <= 0.005,
           fmt("selection rate %.4f outside 0.15 +- 0.005", sel_rate));
    const double denom = static_cast<double>(selected);
    const double mask_share = static_cast<double>(mask_outcome) / denom;
    const double random_share = static_cast<double>(random_outcome) / denom;
    const double keep_share = static_cast<double>(keep_outcome) / denom;
    expect(std::abs(mask_share - 0.80) <= 0.02,
           fmt("mask share %.4f outside 0.80 +- 0.02", mask_share));
    expect(std::abs(random_share - 0.10) <= 0.02,
           fmt("random share %.4f outside 0.10 +- 0.02", random_share));
    expect(std::abs(keep_share - 0.10) <= 0.02,
           fmt("keep share %.4f outside 0.10 +- 0.02", keep_share));
    return fmt("over %" PRIu64 " eligible positions: select %.4f, mask/random/keep "
               "%.4f/%.4f/%.4f, reruns bit-identical",
               eligible, sel_rate, mask_share, random_share, keep_share);
}

// ---------------------------------------------------------------------------
// [06] Packing conservation: 1,000 random sequences pack into chunk-length
// 256 windows with exact non-pad token conservation, padding only in the
// final chunk, and a bit-exact chunk-file round trip.
// ---------------------------------------------------------------------------

std::string criterion_06() {
    ma::PackConfig cfg;
    cfg.chunk_len = 256;
    cfg.pad_id = 0;
    cfg.insert_delimiter = true;
    cfg.delimiter_id = 3;

    ma::RngStream rng(ma::mix64(0xC0DE));
    std::vector<std::vector<uint32_t>> seqs(1000);
    std::unordered_map<uint32_t, uint64_t> want_counts;
    uint64_t input_tokens = 0;
    for (auto& seq : seqs) {
        seq.resize(1 + rng.next_below(300));
        for (auto& id : seq) {
            id = 4 + static_cast<uint32_t>(rng.next_below(9000));
            want_counts[id]++;
        }
        input_tokens += seq.size();
    }

    const std::vector<ma::TokenChunk> chunks = ma::pack(seqs, cfg, /*shard_index=*/0);
    std::unordered_map<uint32_t, uint64_t> got_counts;
    uint64_t delimiters = 0, pads = 0;
    for (size_t i = 0; i < chunks.size(); ++i) {
        expect(chunks[i].length() == 256,
               fmt("chunk %zu has length %u, want exactly 256", i, chunks[i].length()));
        expect(i + 1 == chunks.size() || chunks[i].pad_count() == 0,
               fmt("padding may only appear in the final chunk, found in chunk %zu", i));
        for (uint32_t id : chunks[i].ids) {
            if (id == cfg.pad_id) pads++;
            else if (id == cfg.delimiter_id) delimiters++;
            else got_counts[id]++;
        }
    }
    expect(delimiters == seqs.size() - 1, "one delimiter between each pair of sequences");
    expect(got_counts == want_counts, "non-pad token multiset is conserved exactly");

    const fs::path file_a = g_scratch / "conservation_a.chunks";
    const fs::path file_b = g_scratch / "conservation_b.chunks";
    ma::write_chunks(chunks, file_a);
    const std::vector<ma::TokenChunk> reread = ma::read_chunks(file_a);
    expect(reread.size() == chunks.size(), "round trip preserves the chunk count");
    for (size_t i = 0; i < chunks.size(); ++i)
        expect(reread[i].ids == chunks[i].ids && reread[i].origin == chunks[i].origin &&
                   reread[i].pad_id == chunks[i].pad_id,
               fmt("round trip altered chunk %zu", i));
    ma::write_chunks(reread, file_b);
    std::ifstream fa(file_a, std::ios::binary), fb(file_b, std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(fa)), {});
    const std::string bytes_b((std::istreambuf_iterator<char>(fb)), {});
    expect(!bytes_a.empty() && bytes_a == bytes_b, "chunk file round trip is bit-exact");
    return fmt("%" PRIu64 " tokens from 1000 sequences packed into %zu chunks of 256; "
               "conservation exact, %" PRIu64 " tail pads, file round trip bit-exact",
               input_tokens, chunks.size(), pads);
}

// ---------------------------------------------------------------------------
// [07] Tally identity: hits_A(k) - hits_B(k) == a_only(k) - b_only(k) as
// exact integers (equivalently accuracy_A - accuracy_B == (a_only -
// b_only)/labeled), and a self-comparison has empty off-diagonal cells.
// ---------------------------------------------------------------------------

std::string criterion_07(const SynthDataset& data) {
    const uint32_t vocab = data.tok.vocab_size();
    ma::EvalConfig cfg;
    cfg.ks = {1, 2, 5};
    cfg.mask_seed = data.mask_seed;

    const auto backend_a = make_stub_a(vocab);
    const auto backend_b = make_stub_b(vocab);
    const ma::ComparisonResult cmp = ma::compare(*backend_a, *backend_b, data.chunks,
                                                 ma::MaskPolicy{}, data.tok.info(), cfg);
    for (uint32_t k : cfg.ks) {
        const ma::TallyCells& cells = cmp.tally.at_k(k);
        expect(cells.total() == cmp.tally.labeled,
               fmt("tally cells at k=%u must partition the labeled positions", k));
        const auto lhs = static_cast<int64_t>(cmp.a.hit_count(k)) -
                         static_cast<int64_t>(cmp.b.hit_count(k));
        const auto rhs =
            static_cast<int64_t>(cells.a_only) - static_cast<int64_t>(cells.b_only);
        expect(lhs == rhs, fmt("hits_A - hits_B is %" PRId64 " but a_only - b_only is %" PRId64
                               " at k=%u",
                               lhs, rhs, k));
    }

    const auto backend_a2 = make_stub_a(vocab);
    const ma::ComparisonResult self = ma::compare(*backend_a, *backend_a2, data.chunks,
                                                  ma::MaskPolicy{}, data.tok.info(), cfg);
    for (uint32_t k : cfg.ks) {
        const ma::TallyCells& cells = self.tally.at_k(k);
        expect(cells.a_only == 0 && cells.b_only == 0,
               fmt("self-comparison must have a_only=b_only=0 at k=%u", k));
    }
    return fmt("hit-difference identity holds exactly at k=1,2,5 over %" PRIu64
               " positions; self-comparison off-diagonals empty",
               cmp.tally.labeled);
}

// ---------------------------------------------------------------------------
// [08] Gradient correctness: analytic fp32 gradients match central finite
// differences of a double-precision mirror of the forward pass within 1e-3
// relative on >= 95% of sampled coordinates.
// ---------------------------------------------------------------------------

// The mirror recomputes the exact forward math in double so the finite
// differences are dominated by the analytic path's fp32 rounding rather than
// by cancellation in the difference quotient.
struct DoubleMirror {
    ma::TinyEncoderConfig cfg;
    std::map<std::string, Eigen::MatrixXd> params;

    explicit DoubleMirror(const ma::TinyEncoder& model) : cfg(model.config()) {
        for (const std::string& name : model.parameter_names())
            params[name] = model.parameter(name).cast<double>();
    }

    static double gelu(double x) {
        return 0.5 * x * (1.0 + std::erf(x * static_cast<double>(0.70710678f)));
    }

    Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::MatrixXd& gamma,
                               const Eigen::MatrixXd& beta) const {
        Eigen::MatrixXd out(x.rows(), x.cols());
        const double eps = static_cast<double>(1e-5f);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double mu = x.row(i).mean();
            const double var = (x.row(i).array() - mu).square().mean();
            const double invstd = 1.0 / std::sqrt(var + eps);
            out.row(i) = (((x.row(i).array() - mu) * invstd).matrix())
                             .cwiseProduct(gamma.row(0)) +
                         beta.row(0);
        }
        return out;
    }

    double example_loss(const ma::MaskedExample& ex) const {
        const auto T = static_cast<Eigen::Index>(ex.input_ids.size());
        const auto H = static_cast<Eigen::Index>(cfg.hidden);
        const auto heads = static_cast<Eigen::Index>(cfg.heads);
        const Eigen::Index dh = H / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

        const Eigen::MatrixXd& tok = params.at("tok_emb");
        const Eigen::MatrixXd& pos = params.at("pos_emb");
        Eigen::MatrixXd x(T, H);
        for (Eigen::Index t = 0; t < T; ++t)
            x.row(t) = tok.row(ex.input_ids[static_cast<size_t>(t)]) + pos.row(t);

        for (uint32_t l = 0; l < cfg.layers; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            const Eigen::MatrixXd a =
                layer_norm(x, params.at(p + "ln1.gamma"), params.at(p + "ln1.beta"));
            const Eigen::MatrixXd q =
                (a * params.at(p + "attn.wq")).rowwise() + params.at(p + "attn.bq").row(0);
            const Eigen::MatrixXd k =
                (a * params.at(p + "attn.wk")).rowwise() + params.at(p + "attn.bk").row(0);
            const Eigen::MatrixXd v =
                (a * params.at(p + "attn.wv")).rowwise() + params.at(p + "attn.bv").row(0);
            Eigen::MatrixXd ctx(T, H);
            for (Eigen::Index h = 0; h < heads; ++h) {
                Eigen::MatrixXd scores = q.middleCols(h * dh, dh) *
                                         k.middleCols(h * dh, dh).transpose() * scale;
                for (Eigen::Index j = 0; j < T; ++j)
                    if (ex.input_ids[static_cast<size_t>(j)] == cfg.pad_id)
                        scores.col(j).setConstant(static_cast<double>(-1e9f));
                for (Eigen::Index i = 0; i < T; ++i) {
                    const double mx = scores.row(i).maxCoeff();
                    Eigen::RowVectorXd e = (scores.row(i).array() - mx).exp();
                    scores.row(i) = e / e.sum();
                }
                ctx.middleCols(h * dh, dh) = scores * v.middleCols(h * dh, dh);
            }
            const Eigen::MatrixXd x_mid =
                x + ((ctx * params.at(p + "attn.wo")).rowwise() +
                     params.at(p + "attn.bo").row(0));
            const Eigen::MatrixXd f =
                layer_norm(x_mid, params.at(p + "ln2.gamma"), params.at(p + "ln2.beta"));
            const Eigen::MatrixXd h_act =
                ((f * params.at(p + "ff.w1")).rowwise() + params.at(p + "ff.b1").row(0))
                    .unaryExpr([](double u) { return gelu(u); });
            x = x_mid + ((h_act * params.at(p + "ff.w2")).rowwise() +
                         params.at(p + "ff.b2").row(0));
        }
        const Eigen::MatrixXd y = layer_norm(x, params.at("lnf.gamma"), params.at("lnf.beta"));
        const Eigen::MatrixXd logits =
            (y * params.at("out.w")).rowwise() + params.at("out.b").row(0);

        double total = 0.0;
        for (size_t t = 0; t < ex.labels.size(); ++t) {
            if (ex.labels[t] == ma::kIgnoreLabel) continue;
            const auto row = logits.row(static_cast<Eigen::Index>(t));
            const double mx = row.maxCoeff();
            const double lse = mx + std::log((row.array() - mx).exp().sum());
            total += lse - row(static_cast<Eigen::Index>(ex.labels[t]));
        }
        return total;
    }

    double loss(const std::vector<ma::MaskedExample>& batch) const {
        double total = 0.0;
        for (const auto& ex : batch) total += example_loss(ex);
        return total;
    }
};

std::string criterion_08() {
    ma::TinyEncoderConfig cfg;
    cfg.vocab_size = 44;
    cfg.max_positions = 16;
    cfg.layers = 2;
    cfg.hidden = 16;
    cfg.heads = 2;
    cfg.ff = 32;
    cfg.pad_id = 0;
    cfg.init_seed = 11;
    ma::TinyEncoder model(cfg);

    // A tiny hand-built batch that exercises mask inputs, keep/random
    // corruptions, and one example with trailing padding.
    std::vector<ma::MaskedExample> batch(4);
    ma::RngStream data_rng(ma::mix64(0xDA7A));
    for (size_t b = 0; b < batch.size(); ++b) {
        ma::MaskedExample& ex = batch[b];
        ex.origin = {0, static_cast<uint32_t>(b)};
        const size_t len = 12;
        ex.input_ids.resize(len);
        ex.labels.assign(len, ma::kIgnoreLabel);
        for (size_t t = 0; t < len; ++t)
            ex.input_ids[t] = 4 + static_cast<uint32_t>(data_rng.next_below(40));
        for (size_t t = 2; t < len; t += 4) {
            ex.labels[t] = static_cast<int32_t>(4 + data_rng.next_below(40));
            if (t % 8 == 2) ex.input_ids[t] = 2;  // visible mask token
        }
        if (b == 3) {  // trailing pads, never labeled
            ex.input_ids[10] = ex.input_ids[11] = cfg.pad_id;
            ex.labels[10] = ex.labels[11] = ma::kIgnoreLabel;
        }
    }

    model.begin_accumulation();
    for (const auto& ex : batch) model.accumulate(ex);
    const double analytic_loss = model.accumulation_stats().nll_sum;

    DoubleMirror mirror(model);
    const double mirror_loss = mirror.loss(batch);
    expect(rel_diff(analytic_loss, mirror_loss) <= 1e-5,
           fmt("double mirror drifts from the fp32 forward: %.12g vs %.12g", mirror_loss,
               analytic_loss));

    uint64_t total = 0, ok = 0, nontrivial = 0;
    double worst = 0.0;
    for (const std::string& name : model.parameter_names()) {
        const Eigen::MatrixXf& analytic = model.gradient(name);
        Eigen::MatrixXd& theta = mirror.params.at(name);
        ma::RngStream coords(ma::mix_chain(ma::mix64(0x5A5A), ma::fnv1a64(name)));
        const auto samples =
            std::min<uint64_t>(12, static_cast<uint64_t>(theta.size()));
        for (uint64_t s = 0; s < samples; ++s) {
            const auto flat = static_cast<Eigen::Index>(
                coords.next_below(static_cast<uint64_t>(theta.size())));
            const Eigen::Index r = flat % theta.rows();
            const Eigen::Index c = flat / theta.rows();
            const double saved = theta(r, c);
            const double h = std::max(1e-4, 1e-3 * std::abs(saved));
            theta(r, c) = saved + h;
            const double up = mirror.loss(batch);
            theta(r, c) = saved - h;
            const double down = mirror.loss(batch);
            theta(r, c) = saved;
            const double fd = (up - down) / (2.0 * h);
            const double ga = static_cast<double>(analytic(r, c));
            const double rel = std::abs(ga - fd) / std::max({std::abs(ga), std::abs(fd), 1e-6});
            total++;
            if (std::abs(fd) > 1e-4) nontrivial++;
            if (rel <= 1e-3) ok++;
            worst = std::max(worst, rel);
        }
    }
    const double frac = static_cast<double>(ok) / static_cast<double>(total);
    expect(frac >= 0.95, fmt("only %.1f%% of %" PRIu64
                             " sampled coordinates matched within 1e-3 (worst rel %.2e)",
                             100.0 * frac, total, worst));
    return fmt("%" PRIu64 "/%" PRIu64 " sampled coordinates within 1e-3 relative "
               "(%" PRIu64 " with |grad| > 1e-4; worst rel %.2e)",
               ok, total, nontrivial, worst);
}

// ---------------------------------------------------------------------------
// [09] Desk-scale adaptation effect: two epochs of fine-tuning on a ~50K
// token synthetic corpus at least halve validation perplexity relative to
// random init, strictly improve top-1/2/5 accuracy, and every report keeps
// top-k accuracy monotone in k.
// ---------------------------------------------------------------------------

std::string criterion_09() {
    const fs::path dir = g_scratch / "adaptation";
    ma::SynthConfig synth;
    synth.seed = 33;
    synth.sentences = 8000;
    synth.vocab = 50;
    const ma::SynthStats stats = ma::gen_synthetic_corpus(synth, dir / "data");
    expect(stats.tokens >= 40000, fmt("corpus too small: %" PRIu64 " tokens", stats.tokens));

    const ma::ToyTokenizer tok = ma::ToyTokenizer::load(dir / "data" / "vocab.txt");
    ma::PackConfig pack_cfg;
    pack_cfg.chunk_len = 64;
    pack_cfg.pad_id = tok.specials().pad;
    pack_cfg.insert_delimiter = true;
    pack_cfg.delimiter_id = tok.specials().delimiter.value();
    const ma::SplitRatios ratios{0.9, 0.1, 0.0};

    ma::ChunkPacker train_packer(pack_cfg), val_packer(pack_cfg);
    std::vector<ma::TokenChunk> train_chunks, val_chunks;
    train_packer.begin_shard(0);
    val_packer.begin_shard(0);
    std::ifstream in(dir / "data" / "corpus.jsonl", std::ios::binary);
    ma::JsonlRecordStream records(in);
    while (auto rec = records.next()) {
        const std::vector<uint32_t> ids = tok.encode(rec->text);
        if (ids.empty()) continue;
        if (ma::split_of(rec->id, 7, ratios) == ma::Split::kTrain)
            train_packer.add_sequence(ids, train_chunks);
        else
            val_packer.add_sequence(ids, val_chunks);
    }
    if (auto tail = train_packer.finish_shard()) train_chunks.push_back(std::move(*tail));
    if (auto tail = val_packer.finish_shard()) val_chunks.push_back(std::move(*tail));
    expect(train_chunks.size() >= 100 && val_chunks.size() >= 10,
           "both splits must be non-trivial");

    ma::TinyEncoderConfig model_cfg;
    model_cfg.vocab_size = tok.vocab_size();
    model_cfg.max_positions = 64;
    model_cfg.layers = 2;
    model_cfg.hidden = 64;
    model_cfg.heads = 4;
    model_cfg.ff = 128;
    model_cfg.pad_id = tok.specials().pad;
    model_cfg.init_seed = 9;
    ma::TinyEncoder model(model_cfg);

    ma::TrainConfig train_cfg;  // the stock regime, scaled to desk size
    train_cfg.per_device_batch = 8;
    train_cfg.accumulation_steps = 1;
    train_cfg.learning_rate = 3e-3;
    train_cfg.weight_decay = 0.01;
    train_cfg.epochs = 2;
    train_cfg.mixed_precision = false;
    train_cfg.eval_interval_steps = 0;  // a tenth of an epoch
    train_cfg.seed = 13;
    const ma::TrainResult result =
        ma::train(model, {train_chunks, val_chunks}, tok.info(), ma::MaskPolicy{}, train_cfg,
                  dir / "run");

    const auto init = ma::TinyEncoder::load(dir / "run" / "init");
    const auto best = ma::TinyEncoder::load(dir / "run" / result.best.path);
    ma::EvalConfig eval_cfg;
    eval_cfg.ks = {1, 2, 5};
    eval_cfg.mask_seed = 424242;
    eval_cfg.batch_size = 16;
    const ma::EvalReport before =
        ma::evaluate(*init, val_chunks, ma::MaskPolicy{}, tok.info(), eval_cfg);
    const ma::EvalReport after =
        ma::evaluate(*best, val_chunks, ma::MaskPolicy{}, tok.info(), eval_cfg);

    for (const ma::EvalReport* report : {&before, &after}) {
        expect(report->accuracy(1) <= report->accuracy(2) &&
                   report->accuracy(2) <= report->accuracy(5),
               "top-k accuracy must be monotone in k on every report");
    }
    expect(after.perplexity() <= 0.5 * before.perplexity(),
           fmt("fine-tuning must at least halve perplexity: %.2f -> %.2f",
               before.perplexity(), after.perplexity()));
    for (uint32_t k : eval_cfg.ks)
        expect(after.accuracy(k) > before.accuracy(k),
               fmt("top-%u accuracy must strictly improve: %.4f -> %.4f", k,
                   before.accuracy(k), after.accuracy(k)));
    return fmt("%" PRIu64 " tokens, %" PRIu64 " steps: val perplexity %.2f -> %.2f, "
               "top-1 %.1f%% -> %.1f%%, monotone top-k on both reports",
               stats.tokens, result.steps, before.perplexity(), after.perplexity(),
               100.0 * before.accuracy(1), 100.0 * after.accuracy(1));
}

// ---------------------------------------------------------------------------
// [10] Accumulation equivalence: (batch 8, accumulation 4) and (batch 32,
// accumulation 1) produce the same per-step losses within 1e-4 relative over
// 50 full-precision steps with fixed seeds.
// ---------------------------------------------------------------------------

std::vector<ma::TokenChunk> rule_chunks(uint32_t count, uint32_t shard, uint64_t key) {
    std::vector<ma::TokenChunk> chunks(count);
    for (uint32_t i = 0; i < count; ++i) {
        chunks[i].origin = {shard, i};
        chunks[i].pad_id = 0;
        chunks[i].ids.resize(16);
        ma::RngStream rng(ma::mix_chain(ma::mix64(key), i));
        for (size_t t = 0; t < 16; t += 2) {
            const auto a = 4 + static_cast<uint32_t>(rng.next_below(12));
            chunks[i].ids[t] = a;
            chunks[i].ids[t + 1] = a + 12;
        }
    }
    return chunks;
}

std::string criterion_10() {
    ma::TokenizerInfo info;
    info.vocab_size = 30;
    info.specials = ma::SpecialIds{0, 1, 2, 3};
    const ma::TrainData data{rule_chunks(1600, 0, 0xAB), rule_chunks(8, 1, 0xCD)};

    const auto run_with = [&](uint32_t batch, uint32_t accum, const fs::path& dir) {
        ma::TinyEncoderConfig model_cfg;
        model_cfg.vocab_size = 30;
        model_cfg.max_positions = 16;
        model_cfg.layers = 1;
        model_cfg.hidden = 16;
        model_cfg.heads = 2;
        model_cfg.ff = 32;
        model_cfg.pad_id = 0;
        model_cfg.init_seed = 15;
        ma::TinyEncoder model(model_cfg);
        ma::TrainConfig cfg;
        cfg.per_device_batch = batch;
        cfg.accumulation_steps = accum;
        cfg.learning_rate = 1e-3;
        cfg.epochs = 1;
        cfg.mixed_precision = false;
        cfg.eval_interval_steps = 1;  // a loss record at every optimizer step
        cfg.seed = 19;
        return ma::train(model, data, info, ma::MaskPolicy{}, cfg, dir);
    };
    const ma::TrainResult small = run_with(8, 4, g_scratch / "accum-8x4");
    const ma::TrainResult large = run_with(32, 1, g_scratch / "accum-32x1");

    expect(small.steps == 50 && large.steps == 50,
           fmt("both regimes must take 50 steps, got %" PRIu64 " and %" PRIu64, small.steps,
               large.steps));
    expect(small.checkpoints.size() == large.checkpoints.size(),
           "both regimes must record the same number of steps");
    double worst = 0.0;
    for (size_t i = 0; i < small.checkpoints.size(); ++i) {
        expect(small.checkpoints[i].step == large.checkpoints[i].step,
               "step numbering must agree");
        const double rel = rel_diff(small.checkpoints[i].train_loss,
                                    large.checkpoints[i].train_loss);
        worst = std::max(worst, rel);
        expect(rel <= 1e-4, fmt("per-step loss diverges at step %" PRIu64
                                ": %.9f vs %.9f (rel %.2e)",
                                small.checkpoints[i].step, small.checkpoints[i].train_loss,
                                large.checkpoints[i].train_loss, rel));
    }
    return fmt("50 steps of (8x4) vs (32x1): per-step losses agree within 1e-4 relative "
               "(worst %.2e)",
               worst);
}

// ---------------------------------------------------------------------------
// [11] Best-checkpoint selection: on randomized validation-loss sequences,
// the selector always returns the argmin, with ties resolved to the
// earliest step.
// ---------------------------------------------------------------------------

std::string criterion_11() {
    ma::RngStream rng(ma::mix64(0xBE57));
    uint64_t ties_seen = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const size_t n = 1 + rng.next_below(20);
        std::vector<ma::CheckpointRecord> records(n);
        for (size_t i = 0; i < n; ++i) {
            records[i].step = (i + 1) * 10;
            records[i].train_loss = rng.next_unit();
            // Coarse quantization forces frequent exact ties.
            records[i].val_loss = 0.1 * static_cast<double>(1 + rng.next_below(8));
            records[i].path = "step-" + std::to_string(records[i].step);
        }
        size_t want = 0;
        for (size_t i = 1; i < n; ++i)
            if (records[i].val_loss < records[want].val_loss) want = i;
        for (size_t i = 0; i < n; ++i)
            if (i != want && records[i].val_loss == records[want].val_loss) ties_seen++;

        const ma::CheckpointRecord got = ma::select_best(records);
        expect(got.step == records[want].step && got.val_loss == records[want].val_loss,
               fmt("trial %d: selector picked step %" PRIu64 ", brute force wants step %" PRIu64,
                   trial, got.step, records[want].step));
    }
    return fmt("100 randomized sequences: selector matches the brute-force argmin with "
               "earliest-step ties (%" PRIu64 " tied records exercised)",
               ties_seen);
}

// ---------------------------------------------------------------------------

int run_criterion(int id, double budget_seconds, const std::function<std::string()>& body) {
    const auto start = std::chrono::steady_clock::now();
    std::string detail;
    bool pass = true;
    try {
        detail = body();
    } catch (const std::exception& e) {
        pass = false;
        detail = e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (pass && budget_seconds > 0.0 && elapsed > budget_seconds) {
        pass = false;
        detail = fmt("finished correct but took %.1fs, over the %.0fs budget", elapsed,
                     budget_seconds);
    }
    std::printf("[%02d] %s %s (%.1fs)\n", id, pass ? "PASS" : "FAIL", detail.c_str(), elapsed);
    std::fflush(stdout);
    return pass ? 0 : 1;
}

}  // namespace

int main() {
    g_scratch = fs::temp_directory_path() / "mlmadapt-acceptance";
    std::error_code ec;
    fs::remove_all(g_scratch, ec);
    fs::create_directories(g_scratch);

    // Shared desk-scale dataset for the oracle criteria (3, 4, 7).
    std::optional<SynthDataset> oracle_data;
    const auto oracle = [&]() -> const SynthDataset& {
        if (!oracle_data)
            oracle_data = build_synth_dataset(/*synth_seed=*/21, /*sentences=*/1200,
                                              /*vocab=*/40, /*chunk_len=*/64,
                                              /*mask_seed=*/77);
        return *oracle_data;
    };

    int failures = 0;
    failures += run_criterion(1, 0.0, criterion_01);
    failures += run_criterion(2, 10.0, criterion_02);
    failures += run_criterion(3, 30.0, [&] { return criterion_03(oracle()); });
    failures += run_criterion(4, 0.0, [&] { return criterion_04(oracle()); });
    failures += run_criterion(5, 60.0, criterion_05);
    failures += run_criterion(6, 0.0, criterion_06);
    failures += run_criterion(7, 0.0, [&] { return criterion_07(oracle()); });
    failures += run_criterion(8, 120.0, criterion_08);
    failures += run_criterion(9, 600.0, criterion_09);
    failures += run_criterion(10, 0.0, criterion_10);
    failures += run_criterion(11, 0.0, criterion_11);

    std::printf("acceptance: %d/11 criteria passed\n", 11 - failures);
    fs::remove_all(g_scratch, ec);
    return failures == 0 ? 0 : 1;
}
