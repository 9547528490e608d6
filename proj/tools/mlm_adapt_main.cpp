// mlm-adapt: single entry point for the masked-LM domain-adaptation pipeline.
//
// Every stage subcommand runs in one of two modes:
//   * pipeline mode (--config given): the stage executes inside the config's
//     workdir with digest stamps, so reruns with unchanged inputs are skipped
//     and stale prerequisites are reported with the stage to rerun.
//   * standalone mode (no --config): the stage operates directly on the files
//     named by its flags, with no workdir bookkeeping.
// Flags always override config values.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mlmadapt/pipeline.hpp"
#include "mlmadapt/report.hpp"

namespace ma = mlmadapt;

namespace {

constexpr const char* kWorkdirEnvVar = "MLM_ADAPT_WORKDIR";

struct Triple {
    double a = 0, b = 0, c = 0;
};

Triple parse_triple(const std::string& text, const std::string& what) {
    Triple t;
    char extra;
    if (std::sscanf(text.c_str(), "%lf,%lf,%lf%c", &t.a, &t.b, &t.c, &extra) != 3)
        throw ma::ConfigError(what + " must be three comma-separated numbers, got '" + text +
                              "'");
    return t;
}

std::vector<uint32_t> parse_ks(const std::string& text) {
    std::vector<uint32_t> ks;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            ks.push_back(static_cast<uint32_t>(std::stoul(item)));
        } catch (const std::exception&) {
            throw ma::ConfigError("bad k value '" + item + "' in --ks");
        }
    }
    if (ks.empty()) throw ma::ConfigError("--ks must name at least one cutoff");
    return ks;
}

ma::Split parse_split(const std::string& name) {
    if (name == "val") return ma::Split::kValidation;
    return ma::split_from_name(name);
}

// Flag values shared by the stage subcommands. A string option is "set" when
// CLI11 saw it on the command line (tracked via ->count() on the option).
struct StageFlags {
    std::string config_file;
    std::string workdir;
    std::string input;
    std::string out;

    uint64_t shard_size = 0;
    std::string ratios;
    int64_t split_seed = -1;

    std::string tokenizer;
    std::string split_name;
    uint32_t chunk_len = 0;

    std::string chunks;
    int64_t mask_seed = -1;
    double select_prob = -1.0;
    std::string sub;

    std::string train_config;
    std::string train_chunks;
    std::string val_chunks;
    std::string backend;
    bool resume = false;
    bool force = false;

    std::string backend_a;
    std::string backend_b;
    std::string ks;
    std::string log;
    std::string label_a;
    std::string label_b;
    std::string report_a;
    std::string report_b;
    std::string tally;
    std::string log_a;
    std::string log_b;

    std::string stages;
};

// Builds the effective RunConfig for pipeline mode: file values first, then
// flag overrides, then the workdir-root environment variable.
ma::RunConfig effective_config(const StageFlags& f) {
    ma::RunConfig cfg = ma::RunConfig::load(f.config_file);

    if (!f.input.empty()) cfg.corpus = f.input;
    if (!f.workdir.empty()) cfg.workdir = f.workdir;
    if (f.shard_size) cfg.ingest_shard_size = f.shard_size;
    if (!f.ratios.empty()) {
        const Triple t = parse_triple(f.ratios, "--ratios");
        cfg.ratios = {t.a, t.b, t.c};
    }
    if (f.split_seed >= 0) cfg.split_seed = static_cast<uint64_t>(f.split_seed);
    if (!f.tokenizer.empty()) cfg.tokenizer_spec = f.tokenizer;
    if (f.chunk_len) cfg.chunk_len = f.chunk_len;
    if (f.mask_seed >= 0) cfg.mask_seed = static_cast<uint64_t>(f.mask_seed);
    if (f.select_prob >= 0.0) cfg.policy.select_prob = f.select_prob;
    if (!f.sub.empty()) {
        const Triple t = parse_triple(f.sub, "--sub");
        cfg.policy.mask_frac = t.a;
        cfg.policy.random_frac = t.b;
        cfg.policy.keep_frac = t.c;
    }
    if (!f.train_config.empty()) {
        const ma::TrainFileConfig tf = ma::parse_train_config(f.train_config);
        cfg.train = tf.train;
        cfg.policy = tf.policy;
        cfg.model = tf.model;
    }
    if (!f.backend_a.empty()) cfg.backend_a = f.backend_a;
    if (!f.backend_b.empty()) cfg.backend_b = f.backend_b;
    if (!f.ks.empty()) cfg.eval.ks = parse_ks(f.ks);
    if (!f.label_a.empty()) cfg.label_a = f.label_a;
    if (!f.label_b.empty()) cfg.label_b = f.label_b;
    cfg.train_resume = f.resume;
    cfg.train_force = f.force;

    // The one environment knob: the workdir root. A relative (or absent)
    // workdir is resolved beneath it; an absolute one wins outright.
    if (const char* root = std::getenv(kWorkdirEnvVar); root && *root) {
        if (cfg.workdir.empty())
            cfg.workdir = root;
        else if (cfg.workdir.is_relative())
            cfg.workdir = std::filesystem::path(root) / cfg.workdir;
    }
    if (cfg.workdir.empty())
        throw ma::ConfigError("no workdir: set the workdir config key, --workdir, or " +
                              std::string(kWorkdirEnvVar));
    return cfg;
}

void run_stage_in_pipeline(const StageFlags& f, ma::Stage stage) {
    const ma::RunConfig cfg = effective_config(f);
    for (const ma::StageOutcome& o : ma::run_pipeline(cfg, {stage})) {
        std::printf("[%s] %s\n", ma::stage_name(o.stage).c_str(),
                    o.skipped ? "skipped (up to date)" : o.detail.c_str());
    }
}

void require_flag(const std::string& value, const char* flag, const char* when) {
    if (value.empty())
        throw ma::ConfigError(std::string(flag) + " is required " + when +
                              " (or pass --config for pipeline mode)");
}

ma::MaskPolicy policy_from_flags(const StageFlags& f) {
    ma::MaskPolicy policy;
    if (f.select_prob >= 0.0) policy.select_prob = f.select_prob;
    if (!f.sub.empty()) {
        const Triple t = parse_triple(f.sub, "--sub");
        policy.mask_frac = t.a;
        policy.random_frac = t.b;
        policy.keep_frac = t.c;
    }
    policy.validate();
    return policy;
}

ma::EvalConfig eval_config_from_flags(const StageFlags& f) {
    ma::EvalConfig cfg;
    if (f.mask_seed >= 0) cfg.mask_seed = static_cast<uint64_t>(f.mask_seed);
    if (!f.ks.empty()) cfg.ks = parse_ks(f.ks);
    cfg.validate();
    return cfg;
}

void print_report_summary(const char* tag, const ma::EvalReport& report) {
    std::printf("%s: perplexity=%s labeled=%llu", tag,
                ma::format_fixed2(report.perplexity()).c_str(),
                static_cast<unsigned long long>(report.labeled));
    for (uint32_t k : report.ks)
        std::printf(" top%u=%s", k, ma::format_percent2(report.accuracy(k)).c_str());
    std::printf("\n");
}

// ---- standalone stage implementations ----

void standalone_ingest(const StageFlags& f) {
    require_flag(f.input, "--input", "to ingest a corpus");
    require_flag(f.out, "--out", "to ingest a corpus");
    std::ifstream in(f.input, std::ios::binary);
    if (!in) throw ma::DataError("cannot open corpus " + f.input);
    std::filesystem::create_directories(f.out);
    ma::JsonlRecordStream stream(in);
    const ma::ShardManifest manifest =
        ma::ingest(stream, f.shard_size ? f.shard_size : 1000, f.out);
    manifest.save(std::filesystem::path(f.out) / "manifest.txt");
    std::printf("ingested %llu records into %zu shards under %s\n",
                static_cast<unsigned long long>(manifest.total_records), manifest.shards.size(),
                f.out.c_str());
    if (manifest.skipped_total() > 0)
        std::printf("skipped %llu malformed/empty records\n",
                    static_cast<unsigned long long>(manifest.skipped_total()));
}

void standalone_split(const StageFlags& f) {
    require_flag(f.input, "--manifest", "to split a corpus");
    const std::filesystem::path manifest_file = f.input;
    const ma::ShardManifest manifest = ma::ShardManifest::load(manifest_file);
    ma::SplitRatios ratios;
    if (!f.ratios.empty()) {
        const Triple t = parse_triple(f.ratios, "--ratios");
        ratios = {t.a, t.b, t.c};
    }
    const uint64_t seed = f.split_seed >= 0 ? static_cast<uint64_t>(f.split_seed) : 7;
    const ma::SplitAssignment assignment =
        ma::split(manifest, manifest_file.parent_path(), ratios, seed);
    const std::filesystem::path out =
        f.out.empty() ? manifest_file.parent_path() / "split_summary.txt"
                      : std::filesystem::path(f.out);
    assignment.save(out);
    std::printf("split %llu records: train=%llu validation=%llu test=%llu (summary: %s)\n",
                static_cast<unsigned long long>(assignment.total()),
                static_cast<unsigned long long>(assignment.counts[0]),
                static_cast<unsigned long long>(assignment.counts[1]),
                static_cast<unsigned long long>(assignment.counts[2]), out.string().c_str());
}

void standalone_pack(const StageFlags& f) {
    require_flag(f.input, "--manifest", "to pack chunks");
    require_flag(f.tokenizer, "--tokenizer", "to pack chunks");
    require_flag(f.split_name, "--split", "to pack chunks");
    require_flag(f.out, "--out", "to pack chunks");
    const std::filesystem::path manifest_file = f.input;
    const ma::ShardManifest manifest = ma::ShardManifest::load(manifest_file);
    const auto tok = ma::resolve_tokenizer(f.tokenizer);
    const ma::Split wanted = parse_split(f.split_name);
    ma::SplitRatios ratios;
    if (!f.ratios.empty()) {
        const Triple t = parse_triple(f.ratios, "--ratios");
        ratios = {t.a, t.b, t.c};
    }
    const uint64_t seed = f.split_seed >= 0 ? static_cast<uint64_t>(f.split_seed) : 7;

    ma::PackConfig pack_cfg;
    pack_cfg.chunk_len = f.chunk_len ? f.chunk_len : 256;
    pack_cfg.pad_id = tok->specials().pad;
    pack_cfg.insert_delimiter = tok->specials().delimiter.has_value();
    pack_cfg.delimiter_id = tok->specials().delimiter.value_or(0);

    ma::ChunkPacker packer(pack_cfg);
    std::vector<ma::TokenChunk> chunks;
    for (const ma::ShardInfo& shard : manifest.shards) {
        packer.begin_shard(shard.index);
        for (const ma::SentenceRecord& rec :
             ma::read_shard_file(manifest_file.parent_path() / shard.file)) {
            if (ma::split_of(rec.id, seed, ratios) != wanted) continue;
            const std::vector<uint32_t> ids = tok->encode(rec.text);
            if (!ids.empty()) packer.add_sequence(ids, chunks);
        }
        if (auto tail = packer.finish_shard()) chunks.push_back(std::move(*tail));
    }
    ma::write_chunks(chunks, f.out);
    std::printf("packed %zu chunks of %u tokens for split '%s' into %s\n", chunks.size(),
                pack_cfg.chunk_len, ma::split_name(wanted), f.out.c_str());
}

void standalone_mask(const StageFlags& f) {
    require_flag(f.chunks, "--chunks", "to mask chunks");
    require_flag(f.tokenizer, "--tokenizer", "to mask chunks");
    require_flag(f.out, "--out", "to mask chunks");
    const auto tok = ma::resolve_tokenizer(f.tokenizer);
    const std::vector<ma::TokenChunk> chunks = ma::read_chunks(f.chunks);
    const ma::MaskPolicy policy = policy_from_flags(f);
    const uint64_t seed = f.mask_seed >= 0 ? static_cast<uint64_t>(f.mask_seed) : 42;
    const std::vector<ma::MaskedExample> masked =
        ma::mask_stream(chunks, policy, tok->info(), seed);
    ma::write_masked(masked, tok->specials().pad, f.out);
    uint64_t labeled = 0;
    for (const ma::MaskedExample& ex : masked) labeled += ex.labeled_count();
    std::printf("masked %zu examples (%llu labeled positions) into %s\n", masked.size(),
                static_cast<unsigned long long>(labeled), f.out.c_str());
}

void standalone_train(const StageFlags& f) {
    require_flag(f.train_chunks, "--train", "to train");
    require_flag(f.val_chunks, "--val", "to train");
    require_flag(f.tokenizer, "--tokenizer", "to train");
    require_flag(f.out, "--out", "to train");

    ma::TrainFileConfig file_cfg;
    if (!f.train_config.empty()) file_cfg = ma::parse_train_config(f.train_config);

    const auto tok = ma::resolve_tokenizer(f.tokenizer);
    ma::TrainData data;
    data.train = ma::read_chunks(f.train_chunks);
    data.validation = ma::read_chunks(f.val_chunks);

    std::unique_ptr<ma::TinyEncoder> model;
    if (f.backend.empty() || f.backend == "tiny") {
        ma::TinyEncoderConfig mc = file_cfg.model;
        mc.vocab_size = tok->vocab_size();
        mc.pad_id = tok->specials().pad;
        const uint32_t chunk_len = ma::read_chunk_header(f.train_chunks).chunk_len;
        if (mc.max_positions < chunk_len) mc.max_positions = chunk_len;
        model = std::make_unique<ma::TinyEncoder>(mc);
    } else if (f.backend.starts_with("external:") || f.backend.starts_with("ckpt:")) {
        model = ma::TinyEncoder::load(f.backend.substr(f.backend.find(':') + 1));
    } else {
        throw ma::ConfigError("--backend must be 'tiny' or external:<checkpoint dir>, got '" +
                              f.backend + "'");
    }

    const ma::TrainResult result = ma::train(*model, data, tok->info(), file_cfg.policy,
                                             file_cfg.train, f.out, f.resume, f.force);
    std::printf("trained %llu steps; best checkpoint %s (val_loss %.6f)\n",
                static_cast<unsigned long long>(result.steps), result.best.path.c_str(),
                result.best.val_loss);
}

void standalone_eval(const StageFlags& f) {
    // The eval subcommand stores --backend in backend_a so that, in pipeline
    // mode, the same flag overrides the configured backend_a spec.
    require_flag(f.backend_a, "--backend", "to evaluate");
    require_flag(f.chunks, "--chunks", "to evaluate");
    require_flag(f.tokenizer, "--tokenizer", "to evaluate");
    const auto backend = ma::resolve_backend(f.backend_a);
    const auto tok = ma::resolve_tokenizer(f.tokenizer);
    const std::vector<ma::TokenChunk> chunks = ma::read_chunks(f.chunks);
    const ma::MaskPolicy policy = policy_from_flags(f);
    const ma::EvalConfig eval_cfg = eval_config_from_flags(f);

    std::unique_ptr<ma::PositionLogWriter> log;
    if (!f.log.empty()) log = std::make_unique<ma::PositionLogWriter>(f.log, eval_cfg);
    const ma::EvalReport report =
        ma::evaluate(*backend, chunks, policy, tok->info(), eval_cfg, log.get());
    if (!f.out.empty()) report.save(f.out);
    print_report_summary("eval", report);
}

void standalone_compare(const StageFlags& f) {
    require_flag(f.backend_a, "--backend-a", "to compare");
    require_flag(f.backend_b, "--backend-b", "to compare");
    require_flag(f.chunks, "--chunks", "to compare");
    require_flag(f.tokenizer, "--tokenizer", "to compare");
    require_flag(f.out, "--out", "to compare");
    const auto backend_a = ma::resolve_backend(f.backend_a);
    const auto backend_b = ma::resolve_backend(f.backend_b);
    const auto tok = ma::resolve_tokenizer(f.tokenizer);
    const std::vector<ma::TokenChunk> chunks = ma::read_chunks(f.chunks);
    const ma::MaskPolicy policy = policy_from_flags(f);
    const ma::EvalConfig eval_cfg = eval_config_from_flags(f);

    std::filesystem::create_directories(f.out);
    const std::filesystem::path out = f.out;
    ma::PositionLogWriter log_a(out / "log_a.txt", eval_cfg);
    ma::PositionLogWriter log_b(out / "log_b.txt", eval_cfg);
    const ma::ComparisonResult result = ma::compare(*backend_a, *backend_b, chunks, policy,
                                                    tok->info(), eval_cfg, &log_a, &log_b);
    result.a.save(out / "report_a.txt");
    result.b.save(out / "report_b.txt");
    result.tally.save(out / "tally.txt");
    print_report_summary("A", result.a);
    print_report_summary("B", result.b);
    std::printf("wrote %s\n", (out / "tally.txt").string().c_str());
}

void standalone_report(const StageFlags& f) {
    ma::EvalReport a, b;
    if (!f.log_a.empty() || !f.log_b.empty()) {
        require_flag(f.log_a, "--log-a", "to render from position logs");
        require_flag(f.log_b, "--log-b", "to render from position logs");
        a = ma::report_from(ma::replay_position_log(f.log_a));
        b = ma::report_from(ma::replay_position_log(f.log_b));
    } else {
        require_flag(f.report_a, "--report-a", "to render a report");
        require_flag(f.report_b, "--report-b", "to render a report");
        a = ma::EvalReport::load(f.report_a);
        b = ma::EvalReport::load(f.report_b);
    }
    const std::string label_a = f.label_a.empty() ? "adapted" : f.label_a;
    const std::string label_b = f.label_b.empty() ? "baseline" : f.label_b;
    std::string text = ma::render_report(a, b, label_a, label_b);
    if (!f.tally.empty())
        text += "\n" + ma::render_tally(ma::ComparisonTally::load(f.tally), label_a, label_b);
    if (!f.out.empty()) {
        std::ofstream out(f.out, std::ios::binary);
        if (!out) throw ma::DataError("cannot write " + f.out);
        out << text;
    }
    std::fputs(text.c_str(), stdout);
}

void run_gen_corpus(const StageFlags& f) {
    require_flag(f.out, "--out", "to generate a corpus");
    ma::SynthConfig cfg;
    if (f.split_seed >= 0) cfg.seed = static_cast<uint64_t>(f.split_seed);
    if (f.shard_size) cfg.sentences = f.shard_size;
    if (f.chunk_len) cfg.vocab = f.chunk_len;
    const ma::SynthStats stats = ma::gen_synthetic_corpus(cfg, f.out);
    std::printf("generated %llu sentences (%llu tokens, %u distinct words) under %s\n",
                static_cast<unsigned long long>(stats.sentences),
                static_cast<unsigned long long>(stats.tokens), stats.vocab_words,
                f.out.c_str());
}

void run_full_pipeline(const StageFlags& f) {
    std::vector<ma::Stage> stages;
    if (f.stages.empty()) {
        stages = ma::all_stages();
    } else {
        std::stringstream ss(f.stages);
        std::string item;
        while (std::getline(ss, item, ',')) stages.push_back(ma::stage_from_name(item));
    }
    const ma::RunConfig cfg = effective_config(f);
    for (const ma::StageOutcome& o : ma::run_pipeline(cfg, stages)) {
        std::printf("[%s] %s\n", ma::stage_name(o.stage).c_str(),
                    o.skipped ? "skipped (up to date)" : o.detail.c_str());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked-LM domain adaptation pipeline"};
    app.require_subcommand(1);

    StageFlags f;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", f.config_file, "run config file (enables pipeline mode)");
        cmd->add_option("--workdir", f.workdir, "workdir override for pipeline mode");
        return cmd;
    };

    CLI::App* ingest = add_common(app.add_subcommand("ingest", "shard a JSONL corpus"));
    ingest->add_option("--input", f.input, "corpus JSONL file");
    ingest->add_option("--out", f.out, "output shard directory (standalone mode)");
    ingest->add_option("--shard-size", f.shard_size, "records per shard");

    CLI::App* split = add_common(app.add_subcommand("split", "assign records to splits"));
    split->add_option("--manifest", f.input, "shard manifest file (standalone mode)");
    split->add_option("--ratios", f.ratios, "train,validation,test ratios");
    split->add_option("--seed", f.split_seed, "split hash seed");
    split->add_option("--out", f.out, "summary output file (standalone mode)");

    CLI::App* pack = add_common(app.add_subcommand("pack", "tokenize and pack fixed chunks"));
    pack->add_option("--manifest", f.input, "shard manifest file (standalone mode)");
    pack->add_option("--split", f.split_name, "which split to pack: train|val|test");
    pack->add_option("--tokenizer", f.tokenizer, "tokenizer spec, e.g. toy:vocab.txt");
    pack->add_option("--chunk-len", f.chunk_len, "tokens per chunk");
    pack->add_option("--ratios", f.ratios, "train,validation,test ratios");
    pack->add_option("--seed", f.split_seed, "split hash seed");
    pack->add_option("--out", f.out, "chunk file to write (standalone mode)");

    CLI::App* mask = add_common(app.add_subcommand("mask", "apply the masking policy"));
    mask->add_option("--chunks", f.chunks, "chunk file to mask (standalone mode)");
    mask->add_option("--tokenizer", f.tokenizer, "tokenizer spec");
    mask->add_option("--seed", f.mask_seed, "masking seed");
    mask->add_option("--select-prob", f.select_prob, "fraction of positions to select");
    mask->add_option("--sub", f.sub, "mask,random,keep fractions");
    mask->add_option("--out", f.out, "masked file to write (standalone mode)");

    CLI::App* train = add_common(app.add_subcommand("train", "fine-tune the tiny encoder"));
    train->add_option("--train-config", f.train_config, "train config file (flat key=value)");
    train->add_option("--train", f.train_chunks, "training chunk file (standalone mode)");
    train->add_option("--val", f.val_chunks, "validation chunk file (standalone mode)");
    train->add_option("--tokenizer", f.tokenizer, "tokenizer spec");
    train->add_option("--backend", f.backend, "tiny | external:<checkpoint dir>");
    train->add_option("--out", f.out, "checkpoint output directory (standalone mode)");
    train->add_flag("--resume", f.resume, "resume from the newest checkpoint");
    train->add_flag("--force", f.force, "resume even if the config digest changed");

    CLI::App* eval = add_common(app.add_subcommand("eval", "score a backend on masked data"));
    eval->add_option("--backend", f.backend_a, "backend spec (standalone mode)");
    eval->add_option("--chunks", f.chunks, "chunk file to score (standalone mode)");
    eval->add_option("--tokenizer", f.tokenizer, "tokenizer spec");
    eval->add_option("--seed", f.mask_seed, "evaluation masking seed");
    eval->add_option("--ks", f.ks, "top-k cutoffs, e.g. 1,2,5");
    eval->add_option("--select-prob", f.select_prob, "fraction of positions to select");
    eval->add_option("--sub", f.sub, "mask,random,keep fractions");
    eval->add_option("--log", f.log, "per-position log file to write");
    eval->add_option("--out", f.out, "report file to write");

    CLI::App* compare = add_common(app.add_subcommand("compare", "paired A/B evaluation"));
    compare->add_option("--backend-a", f.backend_a, "backend A spec");
    compare->add_option("--backend-b", f.backend_b, "backend B spec");
    compare->add_option("--chunks", f.chunks, "chunk file to score (standalone mode)");
    compare->add_option("--tokenizer", f.tokenizer, "tokenizer spec");
    compare->add_option("--seed", f.mask_seed, "evaluation masking seed");
    compare->add_option("--ks", f.ks, "top-k cutoffs, e.g. 1,2,5");
    compare->add_option("--select-prob", f.select_prob, "fraction of positions to select");
    compare->add_option("--sub", f.sub, "mask,random,keep fractions");
    compare->add_option("--out", f.out, "output directory (standalone mode)");

    CLI::App* report = add_common(app.add_subcommand("report", "render the comparison table"));
    report->add_option("--report-a", f.report_a, "saved eval report for A");
    report->add_option("--report-b", f.report_b, "saved eval report for B");
    report->add_option("--log-a", f.log_a, "replay a per-position log for A instead");
    report->add_option("--log-b", f.log_b, "replay a per-position log for B instead");
    report->add_option("--tally", f.tally, "comparison tally to append");
    report->add_option("--label-a", f.label_a, "column label for A");
    report->add_option("--label-b", f.label_b, "column label for B");
    report->add_option("--out", f.out, "table file to write");

    CLI::App* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
    gen->add_option("--out", f.out, "output directory")->required();
    gen->add_option("--seed", f.split_seed, "generator seed");
    gen->add_option("--sentences", f.shard_size, "sentence count");
    gen->add_option("--vocab", f.chunk_len, "vocabulary size (>= 10)");

    CLI::App* run = add_common(app.add_subcommand("run", "run pipeline stages in order"));
    run->add_option("--stages", f.stages, "comma-separated stage subset (default: all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const bool pipeline_mode = !f.config_file.empty();
    try {
        if (ingest->parsed()) {
            pipeline_mode ? run_stage_in_pipeline(f, ma::Stage::kIngest) : standalone_ingest(f);
        } else if (split->parsed()) {
            pipeline_mode ? run_stage_in_pipeline(f, ma::Stage::kSplit) : standalone_split(f);
        } else if (pack->parsed()) {
            pipeline_mode ? run_stage_in_pipeline(f, ma::Stage::kPack) : standalone_pack(f);
        } else if (mask->parsed()) {
            pipeline_mode ? run_stage_in_pipeline(f, ma::Stage::kMask) : standalone_mask(f);
        } else if (train->parsed()) {
            pipeline_mode ? run_stage_in_pipeline(f, ma::Stage::kTrain) : standalone_train(f);
        } else if (eval->parsed()) {
            pipeline_mode ? run_stage_in_pipeline(f, ma::Stage::kEval) : standalone_eval(f);
        } else if (compare->parsed()) {
            pipeline_mode ? run_stage_in_pipeline(f, ma::Stage::kCompare)
                          : standalone_compare(f);
        } else if (report->parsed()) {
            pipeline_mode ? run_stage_in_pipeline(f, ma::Stage::kReport) : standalone_report(f);
        } else if (gen->parsed()) {
            run_gen_corpus(f);
        } else if (run->parsed()) {
            run_full_pipeline(f);
        }
    } catch (const ma::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const ma::NumericalError& e) {
        std::fprintf(stderr, "numerical abort: %s\n", e.what());
        return 4;
    } catch (const ma::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const ma::FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
