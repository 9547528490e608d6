#include "mlmadapt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace mlmadapt {
namespace {

constexpr uint64_t kTrainMaskTag = 0x6d61736b2e747261ULL;
constexpr uint64_t kValMaskTag = 0x6d61736b2e76616cULL;
constexpr uint64_t kShuffleTag = 0x73687566666c6500ULL;

std::string step_dir_name(uint64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step-%06llu", static_cast<unsigned long long>(step));
    return buf;
}

std::string format_loss(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

struct TrainerState {
    uint32_t epoch = 0;
    uint64_t example_offset = 0;
    uint64_t config_digest = 0;
};

void save_trainer_state(const std::filesystem::path& dir, const TrainerState& st) {
    std::ofstream out(dir / "trainer_state.txt", std::ios::binary);
    if (!out) throw DataError("cannot write trainer state in " + dir.string());
    out << "config_digest=" << to_hex(st.config_digest) << "\n"
        << "epoch=" << st.epoch << "\n"
        << "example_offset=" << st.example_offset << "\n";
}

TrainerState load_trainer_state(const std::filesystem::path& dir) {
    std::ifstream in(dir / "trainer_state.txt", std::ios::binary);
    if (!in) throw DataError("cannot open trainer state in " + dir.string());
    TrainerState st;
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("bad trainer state line: " + line);
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "config_digest")
            st.config_digest = hex_to_u64(val);
        else if (key == "epoch")
            st.epoch = static_cast<uint32_t>(std::stoul(val));
        else if (key == "example_offset")
            st.example_offset = std::stoull(val);
    }
    return st;
}

void append_checkpoint_row(const std::filesystem::path& out_dir, const CheckpointRecord& rec) {
    std::ofstream out(out_dir / "checkpoints.txt", std::ios::binary | std::ios::app);
    if (!out) throw DataError("cannot append to checkpoints.txt in " + out_dir.string());
    out << "step=" << rec.step << " path=" << rec.path
        << " train_loss=" << format_loss(rec.train_loss)
        << " val_loss=" << format_loss(rec.val_loss) << "\n";
}

std::vector<CheckpointRecord> load_checkpoint_rows(const std::filesystem::path& out_dir) {
    std::vector<CheckpointRecord> rows;
    std::ifstream in(out_dir / "checkpoints.txt", std::ios::binary);
    if (!in) return rows;
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty()) continue;
        CheckpointRecord rec;
        std::istringstream fields(line);
        std::string field;
        while (fields >> field) {
            const auto eq = field.find('=');
            if (eq == std::string::npos) throw FormatError("bad checkpoint row: " + line);
            const std::string key = field.substr(0, eq), val = field.substr(eq + 1);
            if (key == "step")
                rec.step = std::stoull(val);
            else if (key == "path")
                rec.path = val;
            else if (key == "train_loss")
                rec.train_loss = std::stod(val);
            else if (key == "val_loss")
                rec.val_loss = std::stod(val);
        }
        rows.push_back(std::move(rec));
    }
    return rows;
}

void write_best_marker(const std::filesystem::path& out_dir, const CheckpointRecord& best) {
    std::ofstream out(out_dir / "best.txt", std::ios::binary);
    if (!out) throw DataError("cannot write best.txt in " + out_dir.string());
    out << "path=" << best.path << "\n"
        << "step=" << best.step << "\n"
        << "val_loss=" << format_loss(best.val_loss) << "\n";
}

double scheduled_lr(const TrainConfig& cfg, uint64_t step, uint64_t total_steps) {
    if (cfg.lr_schedule == "constant") return cfg.learning_rate;
    // linear_decay: full rate on the first update, zero after the last.
    const double frac =
        total_steps <= 1 ? 0.0
                         : static_cast<double>(step - 1) / static_cast<double>(total_steps - 1);
    return cfg.learning_rate * std::max(0.0, 1.0 - frac);
}

}  // namespace

void TrainConfig::validate() const {
    if (per_device_batch == 0) throw ConfigError("per-device batch size must be positive");
    if (accumulation_steps == 0) throw ConfigError("accumulation steps must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    if (epochs == 0) throw ConfigError("epoch count must be positive");
    if (lr_schedule != "constant" && lr_schedule != "linear_decay")
        throw ConfigError("unknown lr schedule '" + lr_schedule + "'");
}

uint64_t TrainConfig::digest() const {
    std::ostringstream canon;
    char buf[64];
    const auto num = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    canon << "accumulation_steps=" << accumulation_steps << "\n"
          << "beta1=" << num(beta1) << "\n"
          << "beta2=" << num(beta2) << "\n"
          << "epochs=" << epochs << "\n"
          << "epsilon=" << num(epsilon) << "\n"
          << "eval_interval_steps=" << eval_interval_steps << "\n"
          << "learning_rate=" << num(learning_rate) << "\n"
          << "lr_schedule=" << lr_schedule << "\n"
          << "mixed_precision=" << (mixed_precision ? 1 : 0) << "\n"
          << "per_device_batch=" << per_device_batch << "\n"
          << "seed=" << seed << "\n"
          << "weight_decay=" << num(weight_decay) << "\n";
    const std::string s = canon.str();
    return fnv1a64(s.data(), s.size());
}

uint64_t train_run_digest(const TrainConfig& cfg, const MaskPolicy& policy) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "select_prob=%.17g\nmask_frac=%.17g\nrandom_frac=%.17g\nkeep_frac=%.17g\n",
                  policy.select_prob, policy.mask_frac, policy.random_frac, policy.keep_frac);
    return fnv1a64(buf, std::strlen(buf), cfg.digest());
}

CheckpointRecord select_best(const std::vector<CheckpointRecord>& records) {
    if (records.empty()) throw ConfigError("no checkpoints to select from");
    const CheckpointRecord* best = &records[0];
    for (const CheckpointRecord& rec : records) {
        if (rec.val_loss < best->val_loss ||
            (rec.val_loss == best->val_loss && rec.step < best->step))
            best = &rec;
    }
    return *best;
}

uint64_t epoch_mask_seed(uint64_t seed, uint32_t epoch) {
    return mix_chain(mix_chain(mix64(seed), kTrainMaskTag), epoch);
}

uint64_t val_mask_seed(uint64_t seed) { return mix_chain(mix64(seed), kValMaskTag); }

uint64_t shuffle_seed(uint64_t seed, uint32_t epoch) {
    return mix_chain(mix_chain(mix64(seed), kShuffleTag), epoch);
}

std::vector<size_t> shuffled_order(size_t n, uint64_t key) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    RngStream rng(key);
    for (size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[rng.next_below(i)]);
    return order;
}

double validation_loss(Backend& model, const std::vector<MaskedExample>& examples,
                       uint32_t batch_size) {
    if (examples.empty()) throw ConfigError("validation set is empty");
    if (batch_size == 0) throw ConfigError("validation batch size must be positive");
    double nll_sum = 0.0;
    uint64_t labeled = 0;
    for (size_t start = 0; start < examples.size(); start += batch_size) {
        const size_t count = std::min<size_t>(batch_size, examples.size() - start);
        const std::span<const MaskedExample> batch(&examples[start], count);
        const BatchLogits logits = model.forward(batch);
        for (size_t i = 0; i < count; ++i) {
            const MaskedExample& ex = batch[i];
            for (size_t t = 0; t < ex.labels.size(); ++t) {
                if (ex.labels[t] == kIgnoreLabel) continue;
                nll_sum += row_nll(logits[i].row(static_cast<Eigen::Index>(t)),
                                   static_cast<uint32_t>(ex.labels[t]));
                ++labeled;
            }
        }
    }
    if (labeled == 0) throw DataError("validation set has no supervised positions");
    return nll_sum / static_cast<double>(labeled);
}

TrainResult train(TinyEncoder& model, const TrainData& data, const TokenizerInfo& tok,
                  const MaskPolicy& policy, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir, bool resume, bool force) {
    cfg.validate();
    policy.validate();
    if (data.train.empty()) throw ConfigError("training set is empty");
    if (data.validation.empty()) throw ConfigError("validation set is empty");
    std::filesystem::create_directories(out_dir);

    const uint64_t examples_per_update =
        static_cast<uint64_t>(cfg.per_device_batch) * cfg.accumulation_steps;
    const uint64_t n = data.train.size();
    const uint64_t updates_per_epoch = (n + examples_per_update - 1) / examples_per_update;
    const uint64_t total_steps = updates_per_epoch * cfg.epochs;
    const uint32_t eval_interval =
        cfg.eval_interval_steps > 0
            ? cfg.eval_interval_steps
            : static_cast<uint32_t>(std::max<uint64_t>(1, updates_per_epoch / 10));

    // The validation set is masked once with a run-fixed seed so every
    // validation pass scores the same prediction problem.
    std::vector<MaskedExample> val_masked;
    val_masked.reserve(data.validation.size());
    const uint64_t vseed = val_mask_seed(cfg.seed);
    for (const TokenChunk& chunk : data.validation)
        val_masked.push_back(mask_chunk(chunk, policy, tok, vseed));

    TrainResult result;
    TrainerState state;
    state.config_digest = train_run_digest(cfg, policy);

    if (resume) {
        uint64_t last_step = 0;
        std::filesystem::path last_dir;
        for (const auto& entry : std::filesystem::directory_iterator(out_dir)) {
            if (!entry.is_directory()) continue;
            const std::string name = entry.path().filename().string();
            if (!name.starts_with("step-")) continue;
            if (!std::filesystem::exists(entry.path() / "trainer_state.txt")) continue;
            const uint64_t step = std::stoull(name.substr(5));
            if (step >= last_step) {
                last_step = step;
                last_dir = entry.path();
            }
        }
        if (last_dir.empty()) throw ConfigError("no resumable checkpoint under " + out_dir.string());
        const TrainerState saved = load_trainer_state(last_dir);
        if (saved.config_digest != state.config_digest && !force)
            throw ConfigError("run config digest changed since checkpoint " + last_dir.string() +
                              "; pass force to override");
        auto restored = TinyEncoder::load(last_dir);
        // Transplant the saved weights into the caller's model.
        for (const std::string& name : restored->parameter_names())
            model.mutable_parameter(name) = restored->parameter(name);
        model.load_optimizer(last_dir / "optimizer.bin");
        state.epoch = saved.epoch;
        state.example_offset = saved.example_offset;
        result.checkpoints = load_checkpoint_rows(out_dir);
        result.steps = model.adam_step();
    } else {
        model.save(out_dir / "init");
    }

    model.set_mixed_precision(cfg.mixed_precision);
    std::ofstream log(out_dir / "train_log.txt", std::ios::binary | std::ios::app);
    if (!log) throw DataError("cannot open train log in " + out_dir.string());

    const OptimizerConfig base_opt{cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2,
                                   cfg.epsilon};
    double last_train_loss = 0.0;
    uint64_t last_evaluated_step = resume && !result.checkpoints.empty()
                                       ? result.checkpoints.back().step
                                       : 0;

    const auto run_validation = [&](uint64_t step, double train_loss) {
        const double vloss = validation_loss(model, val_masked, cfg.per_device_batch);
        CheckpointRecord rec;
        rec.step = step;
        rec.train_loss = train_loss;
        rec.val_loss = vloss;
        rec.path = step_dir_name(step);
        const std::filesystem::path ckpt = out_dir / rec.path;
        model.save(ckpt);
        model.save_optimizer(ckpt / "optimizer.bin");
        save_trainer_state(ckpt, state);
        result.checkpoints.push_back(rec);
        append_checkpoint_row(out_dir, rec);
        log << "step=" << step << " train_loss=" << format_loss(train_loss)
            << " val_loss=" << format_loss(vloss) << "\n";
        log.flush();
        last_evaluated_step = step;
    };

    for (uint32_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
        const std::vector<size_t> order = shuffled_order(n, shuffle_seed(cfg.seed, epoch));
        const uint64_t mseed = epoch_mask_seed(cfg.seed, epoch);
        uint64_t offset = (epoch == state.epoch) ? state.example_offset : 0;
        while (offset < n) {
            const uint64_t take = std::min<uint64_t>(examples_per_update, n - offset);
            model.begin_accumulation();
            for (uint64_t i = 0; i < take; ++i) {
                const TokenChunk& chunk = data.train[order[offset + i]];
                model.accumulate(mask_chunk(chunk, policy, tok, mseed));
            }
            offset += take;
            const AccumStats stats = model.accumulation_stats();
            if (stats.labeled == 0) continue;  // nothing supervised in this batch
            const double train_loss = stats.mean_loss();
            if (!std::isfinite(train_loss))
                throw NumericalError("non-finite training loss at step " +
                                     std::to_string(result.steps + 1));
            OptimizerConfig opt = base_opt;
            opt.learning_rate = scheduled_lr(cfg, result.steps + 1, total_steps);
            model.apply_update(opt);
            result.steps += 1;
            last_train_loss = train_loss;

            state.epoch = epoch;
            state.example_offset = offset;
            if (offset >= n) {  // next resume point is the following epoch
                state.epoch = epoch + 1;
                state.example_offset = 0;
            }
            if (result.steps % eval_interval == 0) run_validation(result.steps, train_loss);
        }
    }

    if (result.steps > last_evaluated_step) run_validation(result.steps, last_train_loss);
    if (result.checkpoints.empty())
        throw DataError("training produced no checkpoints (no supervised positions)");

    result.best = select_best(result.checkpoints);
    write_best_marker(out_dir, result.best);
    result.final_train_loss = last_train_loss;
    return result;
}

}  // namespace mlmadapt
