#include "mlmadapt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace mlmadapt {
namespace {

std::string ks_to_string(const std::vector<uint32_t>& ks) {
    std::ostringstream out;
    for (size_t i = 0; i < ks.size(); ++i) {
        if (i) out << ',';
        out << ks[i];
    }
    return out.str();
}

std::vector<uint32_t> ks_from_string(const std::string& text) {
    std::vector<uint32_t> ks;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ','))
        ks.push_back(static_cast<uint32_t>(std::stoul(trim(item))));
    return ks;
}

std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::map<std::string, std::string> read_kv_file(const std::filesystem::path& file,
                                                const std::string& expect_format) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cannot open " + file.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("bad line in " + file.string() + ": " + line);
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    const auto it = kv.find("format");
    if (it == kv.end() || it->second != expect_format)
        throw FormatError(file.string() + " is not a " + expect_format + " file");
    return kv;
}

const std::string& require_key(const std::map<std::string, std::string>& kv,
                               const std::string& key, const std::filesystem::path& file) {
    const auto it = kv.find(key);
    if (it == kv.end())
        throw FormatError("missing key '" + key + "' in " + file.string());
    return it->second;
}

// Shared inner loop: score one example's labeled positions and feed every
// consumer (accumulator, tally callback, log writer).
template <typename PerPosition>
void scan_example(const MaskedExample& ex, const LogitsMatrix& logits, const EvalConfig& cfg,
                  uint32_t mask_token_id, PerPosition&& per_position) {
    if (static_cast<size_t>(logits.rows()) != ex.input_ids.size())
        throw DataError("logits rows do not match sequence length");
    for (size_t t = 0; t < ex.labels.size(); ++t) {
        if (ex.labels[t] == kIgnoreLabel) continue;
        if (cfg.restrict_to_mask_token && ex.input_ids[t] != mask_token_id) continue;
        const auto row = logits.row(static_cast<Eigen::Index>(t));
        const uint32_t label = static_cast<uint32_t>(ex.labels[t]);
        per_position(t, label, row_nll(row, label), rank_of_label(row, label));
    }
}

}  // namespace

void EvalConfig::validate() const {
    if (ks.empty()) throw ConfigError("eval needs at least one k");
    for (size_t i = 0; i < ks.size(); ++i) {
        if (ks[i] == 0) throw ConfigError("k values must be positive");
        if (i > 0 && ks[i] <= ks[i - 1])
            throw ConfigError("k values must be strictly ascending");
    }
    if (!(subsample_rate > 0.0) || subsample_rate > 1.0)
        throw ConfigError("subsample rate must lie in (0, 1]");
    if (batch_size == 0) throw ConfigError("eval batch size must be positive");
}

std::string EvalConfig::canonical() const {
    std::ostringstream out;
    out << "ks=" << ks_to_string(ks) << "\n"
        << "mask_seed=" << mask_seed << "\n"
        << "restrict_to_mask_token=" << (restrict_to_mask_token ? 1 : 0) << "\n"
        << "subsample_rate=" << format_g17(subsample_rate) << "\n"
        << "subsample_seed=" << subsample_seed << "\n";
    return out.str();
}

uint64_t EvalConfig::digest() const {
    const std::string s = canonical();
    return fnv1a64(s.data(), s.size());
}

uint64_t rank_of_label(const Eigen::Ref<const Eigen::RowVectorXf>& row, uint32_t label) {
    if (label >= static_cast<uint32_t>(row.size()))
        throw DataError("label " + std::to_string(label) + " outside vocabulary");
    const float s = row[static_cast<Eigen::Index>(label)];
    if (!std::isfinite(s)) throw NumericalError("non-finite score at label");
    uint64_t rank = 1;
    for (Eigen::Index v = 0; v < row.size(); ++v) {
        const float sv = row[v];
        if (sv > s) ++rank;
        else if (sv == s && static_cast<uint32_t>(v) < label) ++rank;
    }
    return rank;
}

MetricAccumulator::MetricAccumulator(std::vector<uint32_t> ks_in, uint64_t digest)
    : ks(std::move(ks_in)), config_digest(digest), hits(ks.size(), 0) {}

void MetricAccumulator::add(double nll, uint64_t rank) {
    if (nll < 0.0) throw DataError("negative NLL fed to accumulator");
    labeled += 1;
    nll_sum += nll;
    for (size_t i = 0; i < ks.size(); ++i)
        if (rank <= ks[i]) hits[i] += 1;
}

void MetricAccumulator::merge(const MetricAccumulator& other) {
    if (config_digest != other.config_digest)
        throw ConfigError("cannot merge accumulators with different config digests");
    if (ks != other.ks) throw ConfigError("cannot merge accumulators with different k lists");
    labeled += other.labeled;
    nll_sum += other.nll_sum;
    for (size_t i = 0; i < hits.size(); ++i) hits[i] += other.hits[i];
}

EvalReport report_from(const MetricAccumulator& acc) {
    if (acc.labeled == 0) throw DataError("no labeled positions were evaluated");
    EvalReport rep;
    rep.ks = acc.ks;
    rep.config_digest = acc.config_digest;
    rep.labeled = acc.labeled;
    rep.nll_sum = acc.nll_sum;
    rep.hits = acc.hits;
    return rep;
}

double EvalReport::perplexity() const {
    if (labeled == 0) throw DataError("empty report has no perplexity");
    return std::exp(nll_sum / static_cast<double>(labeled));
}

uint64_t EvalReport::hit_count(uint32_t k) const {
    for (size_t i = 0; i < ks.size(); ++i)
        if (ks[i] == k) return hits[i];
    throw ConfigError("report has no k=" + std::to_string(k));
}

double EvalReport::accuracy(uint32_t k) const {
    if (labeled == 0) throw DataError("empty report has no accuracy");
    return static_cast<double>(hit_count(k)) / static_cast<double>(labeled);
}

void EvalReport::save(const std::filesystem::path& file) const {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError("cannot write " + file.string());
    out << "format=eval-report.v1\n"
        << "config=" << to_hex(config_digest) << "\n"
        << "ks=" << ks_to_string(ks) << "\n"
        << "labeled=" << labeled << "\n"
        << "nll_sum=" << format_g17(nll_sum) << "\n";
    for (size_t i = 0; i < ks.size(); ++i)
        out << "hits." << ks[i] << "=" << hits[i] << "\n";
}

EvalReport EvalReport::load(const std::filesystem::path& file) {
    const auto kv = read_kv_file(file, "eval-report.v1");
    EvalReport rep;
    rep.config_digest = hex_to_u64(require_key(kv, "config", file));
    rep.ks = ks_from_string(require_key(kv, "ks", file));
    rep.labeled = std::stoull(require_key(kv, "labeled", file));
    rep.nll_sum = std::stod(require_key(kv, "nll_sum", file));
    for (uint32_t k : rep.ks)
        rep.hits.push_back(std::stoull(require_key(kv, "hits." + std::to_string(k), file)));
    return rep;
}

const TallyCells& ComparisonTally::at_k(uint32_t k) const {
    for (size_t i = 0; i < ks.size(); ++i)
        if (ks[i] == k) return cells[i];
    throw ConfigError("tally has no k=" + std::to_string(k));
}

void ComparisonTally::save(const std::filesystem::path& file) const {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError("cannot write " + file.string());
    out << "format=comparison-tally.v1\n"
        << "ks=" << ks_to_string(ks) << "\n"
        << "labeled=" << labeled << "\n";
    for (size_t i = 0; i < ks.size(); ++i) {
        const std::string prefix = "k" + std::to_string(ks[i]) + ".";
        out << prefix << "both_hit=" << cells[i].both_hit << "\n"
            << prefix << "a_only=" << cells[i].a_only << "\n"
            << prefix << "b_only=" << cells[i].b_only << "\n"
            << prefix << "both_miss=" << cells[i].both_miss << "\n";
    }
}

ComparisonTally ComparisonTally::load(const std::filesystem::path& file) {
    const auto kv = read_kv_file(file, "comparison-tally.v1");
    ComparisonTally tally;
    tally.ks = ks_from_string(require_key(kv, "ks", file));
    tally.labeled = std::stoull(require_key(kv, "labeled", file));
    for (uint32_t k : tally.ks) {
        const std::string prefix = "k" + std::to_string(k) + ".";
        TallyCells cells;
        cells.both_hit = std::stoull(require_key(kv, prefix + "both_hit", file));
        cells.a_only = std::stoull(require_key(kv, prefix + "a_only", file));
        cells.b_only = std::stoull(require_key(kv, prefix + "b_only", file));
        cells.both_miss = std::stoull(require_key(kv, prefix + "both_miss", file));
        tally.cells.push_back(cells);
    }
    return tally;
}

struct PositionLogWriter::Impl {
    std::ofstream out;
    std::filesystem::path path;
};

PositionLogWriter::PositionLogWriter(const std::filesystem::path& file, const EvalConfig& cfg)
    : impl_(std::make_unique<Impl>()) {
    impl_->path = file;
    impl_->out.open(file, std::ios::binary);
    if (!impl_->out) throw DataError("cannot write " + file.string());
    impl_->out << "# eval-log v1 config=" << to_hex(cfg.digest()) << " ks="
               << ks_to_string(cfg.ks) << "\n";
}

PositionLogWriter::~PositionLogWriter() = default;

void PositionLogWriter::write(const PositionLogEntry& entry) {
    char buf[192];
    std::snprintf(buf, sizeof buf,
                  "shard=%u chunk=%llu pos=%u label=%u nll=%.12f rank=%llu\n", entry.origin.shard,
                  static_cast<unsigned long long>(entry.origin.chunk), entry.pos, entry.label,
                  entry.nll, static_cast<unsigned long long>(entry.rank));
    impl_->out << buf;
    if (!impl_->out) throw DataError("short write to " + impl_->path.string());
}

MetricAccumulator replay_position_log(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cannot open " + file.string());
    std::string header;
    if (!std::getline(in, header) || !header.starts_with("# eval-log v1 "))
        throw FormatError(file.string() + " is not an eval log");
    uint64_t digest = 0;
    std::vector<uint32_t> ks;
    {
        std::istringstream fields(header.substr(2));
        std::string field;
        while (fields >> field) {
            if (field.starts_with("config=")) digest = hex_to_u64(field.substr(7));
            else if (field.starts_with("ks=")) ks = ks_from_string(field.substr(3));
        }
    }
    if (ks.empty()) throw FormatError("eval log header lacks a ks list: " + file.string());

    MetricAccumulator acc(ks, digest);
    std::string line;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        double nll = -1.0;
        uint64_t rank = 0;
        bool have_nll = false, have_rank = false;
        std::istringstream fields(line);
        std::string field;
        while (fields >> field) {
            if (field.starts_with("nll=")) {
                nll = std::stod(field.substr(4));
                have_nll = true;
            } else if (field.starts_with("rank=")) {
                rank = std::stoull(field.substr(5));
                have_rank = true;
            }
        }
        if (!have_nll || !have_rank || rank == 0)
            throw FormatError(file.string() + ":" + std::to_string(line_no) +
                              ": eval log line lacks nll/rank");
        acc.add(nll, rank);
    }
    return acc;
}

bool chunk_subsampled(const ChunkOrigin& origin, const EvalConfig& cfg) {
    if (cfg.subsample_rate >= 1.0) return true;
    const uint64_t h =
        mix_chain(mix_chain(mix64(cfg.subsample_seed), origin.shard), origin.chunk);
    return unit_double(h) < cfg.subsample_rate;
}

EvalReport evaluate_masked(Backend& backend, std::span<const MaskedExample> examples,
                           const EvalConfig& cfg, uint32_t mask_token_id,
                           PositionLogWriter* log) {
    cfg.validate();
    MetricAccumulator acc(cfg.ks, cfg.digest());
    for (size_t start = 0; start < examples.size(); start += cfg.batch_size) {
        const size_t count = std::min<size_t>(cfg.batch_size, examples.size() - start);
        const std::span<const MaskedExample> batch(&examples[start], count);
        const BatchLogits logits = backend.forward(batch);
        for (size_t i = 0; i < count; ++i) {
            const MaskedExample& ex = batch[i];
            scan_example(ex, logits[i], cfg, mask_token_id,
                         [&](size_t t, uint32_t label, double nll, uint64_t rank) {
                             acc.add(nll, rank);
                             if (log)
                                 log->write({ex.origin, static_cast<uint32_t>(t), label, nll,
                                             rank});
                         });
        }
    }
    return report_from(acc);
}

namespace {

std::vector<MaskedExample> mask_for_eval(std::span<const TokenChunk> chunks,
                                         const MaskPolicy& policy, const TokenizerInfo& tok,
                                         const EvalConfig& cfg) {
    std::vector<MaskedExample> masked;
    masked.reserve(chunks.size());
    for (const TokenChunk& chunk : chunks) {
        if (!chunk_subsampled(chunk.origin, cfg)) continue;
        masked.push_back(mask_chunk(chunk, policy, tok, cfg.mask_seed));
    }
    return masked;
}

}  // namespace

EvalReport evaluate(Backend& backend, std::span<const TokenChunk> chunks,
                    const MaskPolicy& policy, const TokenizerInfo& tok, const EvalConfig& cfg,
                    PositionLogWriter* log) {
    cfg.validate();
    policy.validate();
    const std::vector<MaskedExample> masked = mask_for_eval(chunks, policy, tok, cfg);
    return evaluate_masked(backend, masked, cfg, tok.specials.mask, log);
}

ComparisonResult compare_masked(Backend& backend_a, Backend& backend_b,
                                std::span<const MaskedExample> examples, const EvalConfig& cfg,
                                uint32_t mask_token_id, PositionLogWriter* log_a,
                                PositionLogWriter* log_b) {
    cfg.validate();
    if (backend_a.vocab_size() != backend_b.vocab_size())
        throw ConfigError("cannot compare backends with different vocab sizes (" +
                          std::to_string(backend_a.vocab_size()) + " vs " +
                          std::to_string(backend_b.vocab_size()) + ")");

    MetricAccumulator acc_a(cfg.ks, cfg.digest());
    MetricAccumulator acc_b(cfg.ks, cfg.digest());
    ComparisonTally tally;
    tally.ks = cfg.ks;
    tally.cells.assign(cfg.ks.size(), TallyCells{});

    for (size_t start = 0; start < examples.size(); start += cfg.batch_size) {
        const size_t count = std::min<size_t>(cfg.batch_size, examples.size() - start);
        const std::span<const MaskedExample> batch(&examples[start], count);
        const BatchLogits logits_a = backend_a.forward(batch);
        const BatchLogits logits_b = backend_b.forward(batch);
        for (size_t i = 0; i < count; ++i) {
            const MaskedExample& ex = batch[i];
            // Gather B's outcomes first, then walk A's positions in lockstep;
            // both scans visit the identical label set by construction.
            std::vector<std::pair<double, uint64_t>> b_rows;
            scan_example(ex, logits_b[i], cfg, mask_token_id,
                         [&](size_t, uint32_t, double nll, uint64_t rank) {
                             b_rows.emplace_back(nll, rank);
                         });
            size_t bi = 0;
            scan_example(ex, logits_a[i], cfg, mask_token_id,
                         [&](size_t t, uint32_t label, double nll, uint64_t rank) {
                             const auto [nll_b, rank_b] = b_rows[bi++];
                             acc_a.add(nll, rank);
                             acc_b.add(nll_b, rank_b);
                             tally.labeled += 1;
                             for (size_t ki = 0; ki < cfg.ks.size(); ++ki) {
                                 const bool hit_a = rank <= cfg.ks[ki];
                                 const bool hit_b = rank_b <= cfg.ks[ki];
                                 TallyCells& cells = tally.cells[ki];
                                 if (hit_a && hit_b) cells.both_hit += 1;
                                 else if (hit_a) cells.a_only += 1;
                                 else if (hit_b) cells.b_only += 1;
                                 else cells.both_miss += 1;
                             }
                             if (log_a)
                                 log_a->write({ex.origin, static_cast<uint32_t>(t), label, nll,
                                               rank});
                             if (log_b)
                                 log_b->write({ex.origin, static_cast<uint32_t>(t), label, nll_b,
                                               rank_b});
                         });
            if (bi != b_rows.size())
                throw DataError("comparison scans diverged on labeled positions");
        }
    }
    return ComparisonResult{report_from(acc_a), report_from(acc_b), std::move(tally)};
}

ComparisonResult compare(Backend& backend_a, Backend& backend_b,
                         std::span<const TokenChunk> chunks, const MaskPolicy& policy,
                         const TokenizerInfo& tok, const EvalConfig& cfg,
                         PositionLogWriter* log_a, PositionLogWriter* log_b) {
    cfg.validate();
    policy.validate();
    const std::vector<MaskedExample> masked = mask_for_eval(chunks, policy, tok, cfg);
    return compare_masked(backend_a, backend_b, masked, cfg, tok.specials.mask, log_a, log_b);
}

}  // namespace mlmadapt
