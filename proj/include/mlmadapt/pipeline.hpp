#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mlmadapt/config.hpp"

namespace mlmadapt {

enum class Stage { kIngest, kSplit, kPack, kMask, kTrain, kEval, kCompare, kReport };

const std::vector<Stage>& all_stages();
std::string stage_name(Stage stage);
Stage stage_from_name(const std::string& name);

struct StageOutcome {
    Stage stage;
    bool skipped = false;   // inputs unchanged, outputs already present
    std::string detail;
};

// Executes the requested stages in dependency order. Each stage writes its
// artifacts under cfg.workdir plus a stamp recording the digest of its
// inputs; a rerun with unchanged inputs is skipped. A requested stage whose
// prerequisite stamp is missing or stale fails with an error naming the
// stage to run. The workdir is guarded by a lock file for the duration.
std::vector<StageOutcome> run_pipeline(const RunConfig& cfg, const std::vector<Stage>& stages);

// Workdir layout helpers shared with the CLI.
std::filesystem::path shards_dir(const RunConfig& cfg);
std::filesystem::path manifest_path(const RunConfig& cfg);
std::filesystem::path chunks_path(const RunConfig& cfg, Split split);
std::filesystem::path masked_path(const RunConfig& cfg);
std::filesystem::path train_dir(const RunConfig& cfg);
std::filesystem::path report_table_path(const RunConfig& cfg);

// Resolves the pipeline's A/B backends: explicit specs win, otherwise the
// trained best checkpoint (A) and the saved init (B).
std::unique_ptr<Backend> pipeline_backend_a(const RunConfig& cfg);
std::unique_ptr<Backend> pipeline_backend_b(const RunConfig& cfg);

// Reads best.txt inside a training directory and returns the checkpoint dir.
std::filesystem::path best_checkpoint_dir(const std::filesystem::path& train_out);

}  // namespace mlmadapt
