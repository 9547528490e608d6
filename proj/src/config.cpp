#include "mlmadapt/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace mlmadapt {
namespace {

std::vector<uint32_t> parse_ks(const std::string& text, const std::string& key) {
    std::vector<uint32_t> ks;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        uint32_t v = 0;
        const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
        if (res.ec != std::errc{} || res.ptr != item.data() + item.size())
            throw ConfigError("bad integer '" + item + "' in key '" + key + "'");
        ks.push_back(v);
    }
    if (ks.empty()) throw ConfigError("key '" + key + "' needs at least one value");
    return ks;
}

}  // namespace

KeyValueFile KeyValueFile::parse_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + file.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_text(buffer.str(), file.string());
}

KeyValueFile KeyValueFile::parse_text(const std::string& text, const std::string& origin) {
    KeyValueFile kv;
    kv.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) +
                              ": expected key=value, got '" + stripped + "'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
        if (!kv.entries_.emplace(key, value).second)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" +
                              key + "'");
    }
    return kv;
}

const std::string* KeyValueFile::lookup(const std::string& key) const {
    consumed_[key] = true;
    const auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
}

bool KeyValueFile::has(const std::string& key) const {
    return entries_.find(key) != entries_.end();
}

std::string KeyValueFile::get_string(const std::string& key, const std::string& fallback) const {
    const std::string* v = lookup(key);
    return v ? *v : fallback;
}

uint64_t KeyValueFile::get_u64(const std::string& key, uint64_t fallback) const {
    const std::string* v = lookup(key);
    if (!v) return fallback;
    uint64_t out = 0;
    const auto res = std::from_chars(v->data(), v->data() + v->size(), out);
    if (res.ec != std::errc{} || res.ptr != v->data() + v->size())
        throw ConfigError("key '" + key + "' in " + origin_ + " is not an integer: '" + *v +
                          "'");
    return out;
}

uint32_t KeyValueFile::get_u32(const std::string& key, uint32_t fallback) const {
    const uint64_t v = get_u64(key, fallback);
    if (v > 0xFFFFFFFFULL)
        throw ConfigError("key '" + key + "' in " + origin_ + " exceeds 32 bits");
    return static_cast<uint32_t>(v);
}

double KeyValueFile::get_double(const std::string& key, double fallback) const {
    const std::string* v = lookup(key);
    if (!v) return fallback;
    try {
        size_t pos = 0;
        const double out = std::stod(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument(*v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' in " + origin_ + " is not a number: '" + *v + "'");
    }
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) const {
    const std::string* v = lookup(key);
    if (!v) return fallback;
    if (*v == "1" || *v == "true" || *v == "on" || *v == "yes") return true;
    if (*v == "0" || *v == "false" || *v == "off" || *v == "no") return false;
    throw ConfigError("key '" + key + "' in " + origin_ + " is not a boolean: '" + *v + "'");
}

std::string KeyValueFile::canonical() const {
    std::ostringstream out;
    for (const auto& [key, value] : entries_) out << key << "=" << value << "\n";
    return out.str();
}

uint64_t KeyValueFile::digest() const {
    const std::string s = canonical();
    return fnv1a64(s.data(), s.size());
}

void KeyValueFile::require_consumed() const {
    std::string strays;
    for (const auto& [key, value] : entries_) {
        const auto it = consumed_.find(key);
        if (it == consumed_.end() || !it->second) {
            if (!strays.empty()) strays += ", ";
            strays += "'" + key + "'";
        }
    }
    if (!strays.empty())
        throw ConfigError("unknown key(s) in " + origin_ + ": " + strays);
}

TrainConfig train_config_from_kv(const KeyValueFile& kv, const std::string& prefix) {
    TrainConfig cfg;
    cfg.per_device_batch = kv.get_u32(prefix + "per_device_batch", cfg.per_device_batch);
    cfg.accumulation_steps = kv.get_u32(prefix + "accumulation_steps", cfg.accumulation_steps);
    cfg.learning_rate = kv.get_double(prefix + "learning_rate", cfg.learning_rate);
    cfg.weight_decay = kv.get_double(prefix + "weight_decay", cfg.weight_decay);
    cfg.beta1 = kv.get_double(prefix + "beta1", cfg.beta1);
    cfg.beta2 = kv.get_double(prefix + "beta2", cfg.beta2);
    cfg.epsilon = kv.get_double(prefix + "epsilon", cfg.epsilon);
    cfg.epochs = kv.get_u32(prefix + "epochs", cfg.epochs);
    cfg.mixed_precision = kv.get_bool(prefix + "mixed_precision", cfg.mixed_precision);
    cfg.eval_interval_steps = kv.get_u32(prefix + "eval_interval_steps", cfg.eval_interval_steps);
    cfg.seed = kv.get_u64(prefix + "seed", cfg.seed);
    cfg.lr_schedule = kv.get_string(prefix + "lr_schedule", cfg.lr_schedule);
    cfg.validate();
    return cfg;
}

MaskPolicy mask_policy_from_kv(const KeyValueFile& kv, const std::string& prefix) {
    MaskPolicy policy;
    policy.select_prob = kv.get_double(prefix + "select_prob", policy.select_prob);
    policy.mask_frac = kv.get_double(prefix + "mask_frac", policy.mask_frac);
    policy.random_frac = kv.get_double(prefix + "random_frac", policy.random_frac);
    policy.keep_frac = kv.get_double(prefix + "keep_frac", policy.keep_frac);
    policy.validate();
    return policy;
}

TinyEncoderConfig model_config_from_kv(const KeyValueFile& kv, const std::string& prefix) {
    TinyEncoderConfig cfg;
    cfg.max_positions = kv.get_u32(prefix + "max_positions", cfg.max_positions);
    cfg.layers = kv.get_u32(prefix + "layers", cfg.layers);
    cfg.hidden = kv.get_u32(prefix + "hidden", cfg.hidden);
    cfg.heads = kv.get_u32(prefix + "heads", cfg.heads);
    cfg.ff = kv.get_u32(prefix + "ff", cfg.ff);
    cfg.init_seed = kv.get_u64(prefix + "init_seed", cfg.init_seed);
    // vocab_size and pad_id come from the tokenizer; validated at build time.
    return cfg;
}

EvalConfig eval_config_from_kv(const KeyValueFile& kv, const std::string& prefix) {
    EvalConfig cfg;
    if (kv.has(prefix + "ks")) cfg.ks = parse_ks(kv.get_string(prefix + "ks", ""), prefix + "ks");
    cfg.mask_seed = kv.get_u64(prefix + "mask_seed", cfg.mask_seed);
    cfg.restrict_to_mask_token =
        kv.get_bool(prefix + "restrict_to_mask_token", cfg.restrict_to_mask_token);
    cfg.subsample_rate = kv.get_double(prefix + "subsample_rate", cfg.subsample_rate);
    cfg.subsample_seed = kv.get_u64(prefix + "subsample_seed", cfg.subsample_seed);
    cfg.batch_size = kv.get_u32(prefix + "batch_size", cfg.batch_size);
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_kv(const KeyValueFile& kv) {
    RunConfig cfg;
    cfg.corpus = kv.get_string("corpus", "");
    cfg.workdir = kv.get_string("workdir", "");
    cfg.tokenizer_spec = kv.get_string("tokenizer", "");
    cfg.backend_a = kv.get_string("backend.a", "");
    cfg.backend_b = kv.get_string("backend.b", "");
    cfg.label_a = kv.get_string("report.label_a", cfg.label_a);
    cfg.label_b = kv.get_string("report.label_b", cfg.label_b);

    cfg.ingest_shard_size = kv.get_u64("ingest.shard_size", cfg.ingest_shard_size);
    cfg.ratios.train = kv.get_double("split.train", cfg.ratios.train);
    cfg.ratios.validation = kv.get_double("split.validation", cfg.ratios.validation);
    cfg.ratios.test = kv.get_double("split.test", cfg.ratios.test);
    cfg.split_seed = kv.get_u64("split.seed", cfg.split_seed);

    cfg.chunk_len = kv.get_u32("pack.chunk_len", cfg.chunk_len);
    cfg.insert_delimiter = kv.get_bool("pack.insert_delimiter", cfg.insert_delimiter);

    cfg.policy = mask_policy_from_kv(kv, "mask.");
    cfg.mask_seed = kv.get_u64("mask.seed", cfg.mask_seed);

    cfg.train = train_config_from_kv(kv, "train.");
    cfg.model = model_config_from_kv(kv, "model.");
    cfg.eval = eval_config_from_kv(kv, "eval.");
    cfg.digest = kv.digest();
    kv.require_consumed();
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& file) {
    return from_kv(KeyValueFile::parse_file(file));
}

void RunConfig::validate() const {
    if (corpus.empty()) throw ConfigError("run config needs a 'corpus' path");
    if (workdir.empty()) throw ConfigError("run config needs a 'workdir' path");
    if (tokenizer_spec.empty()) throw ConfigError("run config needs a 'tokenizer' spec");
    if (ingest_shard_size == 0) throw ConfigError("ingest.shard_size must be positive");
    ratios.validate();
    if (chunk_len < 2) throw ConfigError("pack.chunk_len must be at least 2");
    policy.validate();
    train.validate();
    eval.validate();
}

TrainFileConfig parse_train_config(const std::filesystem::path& file) {
    const KeyValueFile kv = KeyValueFile::parse_file(file);
    TrainFileConfig cfg;
    cfg.train = train_config_from_kv(kv, "");
    cfg.policy = mask_policy_from_kv(kv, "mask.");
    cfg.model = model_config_from_kv(kv, "model.");
    kv.require_consumed();
    return cfg;
}

}  // namespace mlmadapt
