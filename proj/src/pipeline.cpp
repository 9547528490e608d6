#include "mlmadapt/pipeline.hpp"

#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mlmadapt/report.hpp"

namespace mlmadapt {
namespace {

const char* const kStageNames[] = {"ingest", "split",   "pack",  "mask",
                                   "train",  "eval", "compare", "report"};

// Exclusive-create lock; removed on scope exit. Refuses to run when another
// pipeline already holds the workdir.
class WorkdirLock {
public:
    explicit WorkdirLock(const std::filesystem::path& workdir)
        : path_(workdir / ".lock") {
        std::filesystem::create_directories(workdir);
        std::FILE* f = std::fopen(path_.string().c_str(), "wx");
        if (!f)
            throw ConfigError("workdir " + workdir.string() +
                              " is locked by another run; remove " + path_.string() +
                              " if that run is gone");
        std::fprintf(f, "pid=%ld\n", static_cast<long>(::getpid()));
        std::fclose(f);
    }

    ~WorkdirLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }

private:
    std::filesystem::path path_;
};

std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Ctx {
    const RunConfig& cfg;
    std::unique_ptr<TokenizerAdapter> tok;
    std::optional<uint64_t> corpus_digest_cache;

    explicit Ctx(const RunConfig& c) : cfg(c) {}

    TokenizerAdapter& tokenizer() {
        if (!tok) tok = resolve_tokenizer(cfg.tokenizer_spec);
        return *tok;
    }

    uint64_t corpus_digest() {
        if (!corpus_digest_cache) {
            if (!std::filesystem::exists(cfg.corpus))
                throw DataError("corpus file " + cfg.corpus.string() + " does not exist");
            corpus_digest_cache = file_digest(cfg.corpus);
        }
        return *corpus_digest_cache;
    }

    std::filesystem::path stamp_path(Stage stage) const {
        return cfg.workdir / "stamps" / (stage_name(stage) + ".stamp");
    }

    std::optional<uint64_t> read_stamp(Stage stage) const {
        std::ifstream in(stamp_path(stage), std::ios::binary);
        if (!in) return std::nullopt;
        std::string line;
        if (!std::getline(in, line)) return std::nullopt;
        return hex_to_u64(trim(line));
    }

    void write_stamp(Stage stage, uint64_t digest) const {
        std::filesystem::create_directories(cfg.workdir / "stamps");
        std::ofstream out(stamp_path(stage), std::ios::binary);
        if (!out) throw DataError("cannot write stamp for stage " + stage_name(stage));
        out << to_hex(digest) << "\n";
    }

    // The digest each stage's stamp ought to hold for the current config and
    // corpus. Upstream digests are folded in, so invalidation is transitive.
    uint64_t expected_digest(Stage stage) {
        std::ostringstream canon;
        canon << "stage=" << stage_name(stage) << "\n";
        switch (stage) {
            case Stage::kIngest:
                canon << "corpus=" << to_hex(corpus_digest()) << "\n"
                      << "shard_size=" << cfg.ingest_shard_size << "\n";
                break;
            case Stage::kSplit:
                canon << "ingest=" << to_hex(expected_digest(Stage::kIngest)) << "\n"
                      << "seed=" << cfg.split_seed << "\n"
                      << "train=" << format_g17(cfg.ratios.train) << "\n"
                      << "validation=" << format_g17(cfg.ratios.validation) << "\n"
                      << "test=" << format_g17(cfg.ratios.test) << "\n";
                break;
            case Stage::kPack:
                canon << "split=" << to_hex(expected_digest(Stage::kSplit)) << "\n"
                      << "tokenizer=" << to_hex(tokenizer().spec_digest()) << "\n"
                      << "chunk_len=" << cfg.chunk_len << "\n"
                      << "insert_delimiter=" << (cfg.insert_delimiter ? 1 : 0) << "\n";
                break;
            case Stage::kMask:
                canon << "pack=" << to_hex(expected_digest(Stage::kPack)) << "\n"
                      << "select_prob=" << format_g17(cfg.policy.select_prob) << "\n"
                      << "mask_frac=" << format_g17(cfg.policy.mask_frac) << "\n"
                      << "random_frac=" << format_g17(cfg.policy.random_frac) << "\n"
                      << "keep_frac=" << format_g17(cfg.policy.keep_frac) << "\n"
                      << "seed=" << cfg.mask_seed << "\n";
                break;
            case Stage::kTrain:
                canon << "pack=" << to_hex(expected_digest(Stage::kPack)) << "\n"
                      << "run=" << to_hex(train_run_digest(cfg.train, cfg.policy)) << "\n"
                      << "model=" << cfg.model.layers << "," << cfg.model.hidden << ","
                      << cfg.model.heads << "," << cfg.model.ff << ","
                      << cfg.model.max_positions << "," << cfg.model.init_seed << "\n";
                break;
            case Stage::kEval:
                canon << "pack=" << to_hex(expected_digest(Stage::kPack)) << "\n"
                      << "backend_a=" << backend_token(cfg.backend_a) << "\n"
                      << "eval=" << to_hex(cfg.eval.digest()) << "\n"
                      << "select_prob=" << format_g17(cfg.policy.select_prob) << "\n"
                      << "mask_frac=" << format_g17(cfg.policy.mask_frac) << "\n"
                      << "random_frac=" << format_g17(cfg.policy.random_frac) << "\n"
                      << "keep_frac=" << format_g17(cfg.policy.keep_frac) << "\n";
                break;
            case Stage::kCompare:
                canon << "eval=" << to_hex(expected_digest(Stage::kEval)) << "\n"
                      << "backend_b=" << backend_token(cfg.backend_b) << "\n";
                break;
            case Stage::kReport:
                canon << "compare=" << to_hex(expected_digest(Stage::kCompare)) << "\n"
                      << "label_a=" << cfg.label_a << "\n"
                      << "label_b=" << cfg.label_b << "\n";
                break;
        }
        const std::string s = canon.str();
        return fnv1a64(s.data(), s.size());
    }

    // Default backends ride on the train stage; explicit specs contribute
    // their string (external weight changes are not tracked).
    std::string backend_token(const std::string& spec) {
        if (!spec.empty()) return "spec:" + spec;
        return "train:" + to_hex(expected_digest(Stage::kTrain));
    }
};

bool outputs_exist(const Ctx& ctx, Stage stage) {
    const RunConfig& cfg = ctx.cfg;
    switch (stage) {
        case Stage::kIngest: return std::filesystem::exists(manifest_path(cfg));
        case Stage::kSplit: return std::filesystem::exists(cfg.workdir / "split" / "summary.txt");
        case Stage::kPack:
            return std::filesystem::exists(chunks_path(cfg, Split::kTrain)) &&
                   std::filesystem::exists(chunks_path(cfg, Split::kValidation)) &&
                   std::filesystem::exists(chunks_path(cfg, Split::kTest));
        case Stage::kMask: return std::filesystem::exists(masked_path(cfg));
        case Stage::kTrain: return std::filesystem::exists(train_dir(cfg) / "best.txt");
        case Stage::kEval:
            return std::filesystem::exists(cfg.workdir / "eval" / "report_a.txt");
        case Stage::kCompare:
            return std::filesystem::exists(cfg.workdir / "compare" / "tally.txt");
        case Stage::kReport: return std::filesystem::exists(report_table_path(cfg));
    }
    return false;
}

void ensure_prerequisite(Ctx& ctx, Stage needed, Stage requested) {
    const auto stamp = ctx.read_stamp(needed);
    if (!stamp || !outputs_exist(ctx, needed))
        throw ConfigError("stage '" + stage_name(requested) + "' needs the artifacts of stage '" +
                          stage_name(needed) + "'; run stage '" + stage_name(needed) +
                          "' first");
    if (*stamp != ctx.expected_digest(needed))
        throw ConfigError("artifacts of stage '" + stage_name(needed) +
                          "' are stale for the current config; rerun stage '" +
                          stage_name(needed) + "'");
}

std::string run_ingest(Ctx& ctx) {
    const RunConfig& cfg = ctx.cfg;
    std::ifstream in(cfg.corpus, std::ios::binary);
    if (!in) throw DataError("cannot open corpus " + cfg.corpus.string());
    std::filesystem::create_directories(shards_dir(cfg));
    JsonlRecordStream stream(in);
    const ShardManifest manifest = ingest(stream, cfg.ingest_shard_size, shards_dir(cfg));
    manifest.save(manifest_path(cfg));
    std::ostringstream detail;
    detail << manifest.total_records << " records in " << manifest.shards.size() << " shards";
    if (manifest.skipped_total() > 0) detail << " (" << manifest.skipped_total() << " skipped)";
    return detail.str();
}

std::string run_split(Ctx& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const ShardManifest manifest = ShardManifest::load(manifest_path(cfg));
    const SplitAssignment assignment = split(manifest, shards_dir(cfg), cfg.ratios,
                                             cfg.split_seed);
    std::filesystem::create_directories(cfg.workdir / "split");
    assignment.save(cfg.workdir / "split" / "summary.txt");
    std::ostringstream detail;
    detail << "train=" << assignment.counts[0] << " validation=" << assignment.counts[1]
           << " test=" << assignment.counts[2];
    return detail.str();
}

std::string run_pack(Ctx& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const ShardManifest manifest = ShardManifest::load(manifest_path(cfg));
    TokenizerAdapter& tok = ctx.tokenizer();

    PackConfig pack_cfg;
    pack_cfg.chunk_len = cfg.chunk_len;
    pack_cfg.pad_id = tok.specials().pad;
    pack_cfg.insert_delimiter = cfg.insert_delimiter && tok.specials().delimiter.has_value();
    pack_cfg.delimiter_id = tok.specials().delimiter.value_or(0);

    struct SplitPack {
        ChunkPacker packer;
        std::vector<TokenChunk> chunks;
        explicit SplitPack(const PackConfig& c) : packer(c) {}
    };
    SplitPack packs[3] = {SplitPack(pack_cfg), SplitPack(pack_cfg), SplitPack(pack_cfg)};

    for (const ShardInfo& shard : manifest.shards) {
        for (auto& p : packs) p.packer.begin_shard(shard.index);
        const auto records = read_shard_file(shards_dir(cfg) / shard.file);
        for (const SentenceRecord& rec : records) {
            const Split split = split_of(rec.id, cfg.split_seed, cfg.ratios);
            const std::vector<uint32_t> ids = tok.encode(rec.text);
            if (ids.empty()) continue;
            auto& p = packs[static_cast<size_t>(split)];
            p.packer.add_sequence(ids, p.chunks);
        }
        for (auto& p : packs)
            if (auto tail = p.packer.finish_shard()) p.chunks.push_back(std::move(*tail));
    }

    std::filesystem::create_directories(cfg.workdir / "chunks");
    std::ostringstream detail;
    for (int s = 0; s < 3; ++s) {
        const Split split = static_cast<Split>(s);
        write_chunks(packs[s].chunks, chunks_path(cfg, split));
        if (s) detail << " ";
        detail << split_name(split) << "=" << packs[s].chunks.size();
    }
    return detail.str();
}

std::string run_mask(Ctx& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const std::vector<TokenChunk> chunks = read_chunks(chunks_path(cfg, Split::kTest));
    const TokenizerInfo info = ctx.tokenizer().info();
    const std::vector<MaskedExample> masked =
        mask_stream(chunks, cfg.policy, info, cfg.mask_seed);
    std::filesystem::create_directories(cfg.workdir / "masked");
    write_masked(masked, info.specials.pad, masked_path(cfg));
    uint64_t labeled = 0;
    for (const MaskedExample& ex : masked) labeled += ex.labeled_count();
    std::ostringstream detail;
    detail << masked.size() << " examples, " << labeled << " labeled positions";
    return detail.str();
}

TinyEncoderConfig resolve_model_config(Ctx& ctx) {
    const RunConfig& cfg = ctx.cfg;
    TinyEncoderConfig model = cfg.model;
    model.vocab_size = ctx.tokenizer().vocab_size();
    model.pad_id = ctx.tokenizer().specials().pad;
    if (model.max_positions < cfg.chunk_len) model.max_positions = cfg.chunk_len;
    return model;
}

std::string run_train(Ctx& ctx) {
    const RunConfig& cfg = ctx.cfg;
    TrainData data;
    data.train = read_chunks(chunks_path(cfg, Split::kTrain));
    data.validation = read_chunks(chunks_path(cfg, Split::kValidation));
    TinyEncoder model(resolve_model_config(ctx));
    const TrainResult result =
        train(model, data, ctx.tokenizer().info(), cfg.policy, cfg.train, train_dir(cfg),
              cfg.train_resume, cfg.train_force);
    std::ostringstream detail;
    detail << result.steps << " steps, best " << result.best.path << " (val_loss "
           << result.best.val_loss << ")";
    return detail.str();
}

std::string run_eval(Ctx& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const std::vector<TokenChunk> chunks = read_chunks(chunks_path(cfg, Split::kTest));
    const auto backend = pipeline_backend_a(cfg);
    std::filesystem::create_directories(cfg.workdir / "eval");
    PositionLogWriter log(cfg.workdir / "eval" / "log_a.txt", cfg.eval);
    const EvalReport report = evaluate(*backend, chunks, cfg.policy, ctx.tokenizer().info(),
                                       cfg.eval, &log);
    report.save(cfg.workdir / "eval" / "report_a.txt");
    std::ostringstream detail;
    detail << "perplexity " << format_fixed2(report.perplexity()) << " over " << report.labeled
           << " positions";
    return detail.str();
}

std::string run_compare(Ctx& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const std::vector<TokenChunk> chunks = read_chunks(chunks_path(cfg, Split::kTest));
    const auto backend_a = pipeline_backend_a(cfg);
    const auto backend_b = pipeline_backend_b(cfg);
    std::filesystem::create_directories(cfg.workdir / "compare");
    PositionLogWriter log_a(cfg.workdir / "compare" / "log_a.txt", cfg.eval);
    PositionLogWriter log_b(cfg.workdir / "compare" / "log_b.txt", cfg.eval);
    const ComparisonResult result = compare(*backend_a, *backend_b, chunks, cfg.policy,
                                            ctx.tokenizer().info(), cfg.eval, &log_a, &log_b);
    result.a.save(cfg.workdir / "compare" / "report_a.txt");
    result.b.save(cfg.workdir / "compare" / "report_b.txt");
    result.tally.save(cfg.workdir / "compare" / "tally.txt");
    std::ostringstream detail;
    detail << "perplexity " << format_fixed2(result.a.perplexity()) << " vs "
           << format_fixed2(result.b.perplexity());
    return detail.str();
}

std::string run_report(Ctx& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const EvalReport a = EvalReport::load(cfg.workdir / "compare" / "report_a.txt");
    const EvalReport b = EvalReport::load(cfg.workdir / "compare" / "report_b.txt");
    const ComparisonTally tally = ComparisonTally::load(cfg.workdir / "compare" / "tally.txt");
    const std::string text = render_report(a, b, cfg.label_a, cfg.label_b) + "\n" +
                             render_tally(tally, cfg.label_a, cfg.label_b);
    std::filesystem::create_directories(report_table_path(cfg).parent_path());
    std::ofstream out(report_table_path(cfg), std::ios::binary);
    if (!out) throw DataError("cannot write " + report_table_path(cfg).string());
    out << text;
    return report_table_path(cfg).string();
}

}  // namespace

const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> stages = {Stage::kIngest, Stage::kSplit,   Stage::kPack,
                                              Stage::kMask,   Stage::kTrain,   Stage::kEval,
                                              Stage::kCompare, Stage::kReport};
    return stages;
}

std::string stage_name(Stage stage) { return kStageNames[static_cast<size_t>(stage)]; }

Stage stage_from_name(const std::string& name) {
    for (Stage stage : all_stages())
        if (name == stage_name(stage)) return stage;
    throw ConfigError("unknown stage '" + name + "'");
}

std::filesystem::path shards_dir(const RunConfig& cfg) { return cfg.workdir / "shards"; }
std::filesystem::path manifest_path(const RunConfig& cfg) {
    return shards_dir(cfg) / "manifest.txt";
}
std::filesystem::path chunks_path(const RunConfig& cfg, Split split) {
    return cfg.workdir / "chunks" / (std::string(split_name(split)) + ".chunks");
}
std::filesystem::path masked_path(const RunConfig& cfg) {
    return cfg.workdir / "masked" / "test.masked";
}
std::filesystem::path train_dir(const RunConfig& cfg) { return cfg.workdir / "train"; }
std::filesystem::path report_table_path(const RunConfig& cfg) {
    return cfg.workdir / "report" / "table.txt";
}

std::filesystem::path best_checkpoint_dir(const std::filesystem::path& train_out) {
    const auto best_file = train_out / "best.txt";
    std::ifstream in(best_file, std::ios::binary);
    if (!in)
        throw DataError("no best-checkpoint marker at " + best_file.string() +
                        "; run stage 'train' first");
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.starts_with("path=")) return train_out / line.substr(5);
    }
    throw FormatError(best_file.string() + " lacks a path= line");
}

std::unique_ptr<Backend> pipeline_backend_a(const RunConfig& cfg) {
    if (!cfg.backend_a.empty()) return resolve_backend(cfg.backend_a);
    return TinyEncoder::load(best_checkpoint_dir(train_dir(cfg)));
}

std::unique_ptr<Backend> pipeline_backend_b(const RunConfig& cfg) {
    if (!cfg.backend_b.empty()) return resolve_backend(cfg.backend_b);
    const auto init_dir = train_dir(cfg) / "init";
    if (!std::filesystem::exists(init_dir / "weights.bin"))
        throw DataError("no init checkpoint at " + init_dir.string() +
                        "; run stage 'train' first");
    return TinyEncoder::load(init_dir);
}

std::vector<StageOutcome> run_pipeline(const RunConfig& cfg, const std::vector<Stage>& stages) {
    cfg.validate();
    WorkdirLock lock(cfg.workdir);
    Ctx ctx(cfg);

    // Honor dependency order regardless of how the request was spelled.
    std::vector<Stage> ordered;
    for (Stage stage : all_stages())
        for (Stage requested : stages)
            if (requested == stage && std::find(ordered.begin(), ordered.end(), stage) ==
                                          ordered.end())
                ordered.push_back(stage);
    if (ordered.empty()) throw ConfigError("no stages requested");

    std::vector<StageOutcome> outcomes;
    for (Stage stage : ordered) {
        const uint64_t expected = ctx.expected_digest(stage);
        const auto stamp = ctx.read_stamp(stage);
        if (stamp && *stamp == expected && outputs_exist(ctx, stage)) {
            outcomes.push_back({stage, true, "up to date"});
            continue;
        }

        switch (stage) {
            case Stage::kIngest: break;
            case Stage::kSplit: ensure_prerequisite(ctx, Stage::kIngest, stage); break;
            case Stage::kPack: ensure_prerequisite(ctx, Stage::kSplit, stage); break;
            case Stage::kMask:
            case Stage::kTrain: ensure_prerequisite(ctx, Stage::kPack, stage); break;
            case Stage::kEval:
                ensure_prerequisite(ctx, Stage::kPack, stage);
                if (cfg.backend_a.empty()) ensure_prerequisite(ctx, Stage::kTrain, stage);
                break;
            case Stage::kCompare:
                ensure_prerequisite(ctx, Stage::kPack, stage);
                if (cfg.backend_a.empty() || cfg.backend_b.empty())
                    ensure_prerequisite(ctx, Stage::kTrain, stage);
                break;
            case Stage::kReport: ensure_prerequisite(ctx, Stage::kCompare, stage); break;
        }

        StageOutcome outcome{stage, false, ""};
        switch (stage) {
            case Stage::kIngest: outcome.detail = run_ingest(ctx); break;
            case Stage::kSplit: outcome.detail = run_split(ctx); break;
            case Stage::kPack: outcome.detail = run_pack(ctx); break;
            case Stage::kMask: outcome.detail = run_mask(ctx); break;
            case Stage::kTrain: outcome.detail = run_train(ctx); break;
            case Stage::kEval: outcome.detail = run_eval(ctx); break;
            case Stage::kCompare: outcome.detail = run_compare(ctx); break;
            case Stage::kReport: outcome.detail = run_report(ctx); break;
        }
        ctx.write_stamp(stage, expected);
        outcomes.push_back(std::move(outcome));
    }
    return outcomes;
}

}  // namespace mlmadapt
