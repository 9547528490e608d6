#include "mlmadapt/backend.hpp"

#include <algorithm>
#include <cmath>

#include "mlmadapt/tiny_encoder.hpp"

namespace mlmadapt {

double row_nll(const Eigen::Ref<const Eigen::RowVectorXf>& row, uint32_t label) {
    if (label >= static_cast<uint32_t>(row.size()))
        throw DataError("label " + std::to_string(label) + " outside vocabulary");
    // log-sum-exp in double; the max subtraction keeps exp() in range.
    const double m = static_cast<double>(row.maxCoeff());
    double sum = 0.0;
    for (Eigen::Index v = 0; v < row.size(); ++v)
        sum += std::exp(static_cast<double>(row[v]) - m);
    const double lse = m + std::log(sum);
    const double nll = lse - static_cast<double>(row[label]);
    if (!std::isfinite(nll)) throw NumericalError("non-finite loss at labeled position");
    return nll;
}

double masked_cross_entropy(const BatchLogits& logits, std::span<const MaskedExample> batch) {
    if (logits.size() != batch.size())
        throw DataError("logits batch size does not match example batch size");
    double nll_sum = 0.0;
    uint64_t labeled = 0;
    for (size_t i = 0; i < batch.size(); ++i) {
        const MaskedExample& ex = batch[i];
        const LogitsMatrix& mat = logits[i];
        if (static_cast<size_t>(mat.rows()) != ex.input_ids.size())
            throw DataError("logits rows do not match sequence length");
        for (size_t t = 0; t < ex.labels.size(); ++t) {
            if (ex.labels[t] == kIgnoreLabel) continue;
            nll_sum += row_nll(mat.row(static_cast<Eigen::Index>(t)),
                               static_cast<uint32_t>(ex.labels[t]));
            ++labeled;
        }
    }
    if (labeled == 0) throw DataError("no supervised positions in batch");
    return nll_sum / static_cast<double>(labeled);
}

double Backend::train_step(std::span<const MaskedExample> batch, const OptimizerConfig& opt) {
    begin_accumulation();
    for (const MaskedExample& ex : batch) accumulate(ex);
    const double loss = accumulation_stats().mean_loss();
    apply_update(opt);
    return loss;
}

StubBackend::StubBackend(uint32_t vocab_size, KeyBy key_by, std::vector<Eigen::RowVectorXf> table)
    : vocab_size_(vocab_size), key_by_(key_by), table_(std::move(table)) {
    if (table_.empty()) throw ConfigError("stub backend needs a non-empty score table");
    for (const auto& row : table_)
        if (row.size() != static_cast<Eigen::Index>(vocab_size_))
            throw ConfigError("stub score row width does not match vocab size");
}

std::unique_ptr<StubBackend> StubBackend::uniform(uint32_t vocab_size) {
    if (vocab_size == 0) throw ConfigError("vocab size must be positive");
    std::vector<Eigen::RowVectorXf> table{Eigen::RowVectorXf::Zero(vocab_size)};
    return std::make_unique<StubBackend>(vocab_size, KeyBy::kPosition, std::move(table));
}

BatchLogits StubBackend::forward(std::span<const MaskedExample> batch) {
    BatchLogits out;
    out.reserve(batch.size());
    for (const MaskedExample& ex : batch) {
        const Eigen::Index rows = static_cast<Eigen::Index>(ex.input_ids.size());
        LogitsMatrix mat(rows, static_cast<Eigen::Index>(vocab_size_));
        for (Eigen::Index t = 0; t < rows; ++t) {
            size_t key;
            if (key_by_ == KeyBy::kPosition) {
                key = static_cast<size_t>(t) % table_.size();
            } else {
                const int32_t label = ex.labels[static_cast<size_t>(t)];
                key = label == kIgnoreLabel
                          ? 0
                          : static_cast<size_t>(label) % table_.size();
            }
            mat.row(t) = table_[key];
        }
        out.push_back(std::move(mat));
    }
    return out;
}

std::unique_ptr<Backend> load_backend(const std::filesystem::path& dir) {
    return TinyEncoder::load(dir);
}

std::unique_ptr<Backend> resolve_backend(const std::string& spec) {
    const auto colon = spec.find(':');
    if (colon != std::string::npos) {
        const std::string scheme = spec.substr(0, colon);
        const std::string rest = spec.substr(colon + 1);
        if (scheme == "uniform") {
            uint64_t vocab = 0;
            try {
                vocab = std::stoull(rest);
            } catch (const std::exception&) {
                throw ConfigError("bad vocab size in backend spec '" + spec + "'");
            }
            if (vocab == 0 || vocab > (uint64_t{1} << 31))
                throw ConfigError("bad vocab size in backend spec '" + spec + "'");
            return StubBackend::uniform(static_cast<uint32_t>(vocab));
        }
        if (scheme == "ckpt" || scheme == "external") return load_backend(rest);
        throw ConfigError("unknown backend spec scheme '" + scheme + "'");
    }
    return load_backend(spec);
}

}  // namespace mlmadapt
