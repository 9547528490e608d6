#include "mlmadapt/tiny_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace mlmadapt {
namespace {

constexpr float kLnEps = 1e-5f;
constexpr float kMaskScore = -1e9f;
constexpr uint32_t kWeightsMagic = 0x54574C4DU;  // "MLWT"
constexpr uint32_t kWeightsVersion = 1;
constexpr uint32_t kOptimMagic = 0x504F4C4DU;  // "MLOP"

using MatF = Eigen::MatrixXf;
using RowF = Eigen::RowVectorXf;

float gelu(float x) {
    return 0.5f * x * (1.0f + std::erf(x * 0.70710678f));
}

float gelu_grad(float x) {
    const float cdf = 0.5f * (1.0f + std::erf(x * 0.70710678f));
    const float pdf = 0.39894228f * std::exp(-0.5f * x * x);
    return cdf + x * pdf;
}

struct LnCache {
    MatF xhat;
    Eigen::VectorXf invstd;
};

MatF ln_forward(const MatF& x, const MatF& gamma, const MatF& beta, LnCache& cache) {
    const Eigen::Index rows = x.rows(), cols = x.cols();
    cache.xhat.resize(rows, cols);
    cache.invstd.resize(rows);
    MatF out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const float mu = x.row(i).mean();
        const float var = (x.row(i).array() - mu).square().mean();
        const float invstd = 1.0f / std::sqrt(var + kLnEps);
        cache.invstd[i] = invstd;
        cache.xhat.row(i) = (x.row(i).array() - mu) * invstd;
        out.row(i) = cache.xhat.row(i).cwiseProduct(gamma.row(0)) + beta.row(0);
    }
    return out;
}

MatF ln_backward(const MatF& dy, const LnCache& cache, const MatF& gamma, MatF& dgamma,
                 MatF& dbeta) {
    const Eigen::Index rows = dy.rows(), cols = dy.cols();
    MatF dx(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        dgamma.row(0) += dy.row(i).cwiseProduct(cache.xhat.row(i));
        dbeta.row(0) += dy.row(i);
        const RowF dxhat = dy.row(i).cwiseProduct(gamma.row(0));
        const float m1 = dxhat.mean();
        const float m2 = dxhat.cwiseProduct(cache.xhat.row(i)).mean();
        dx.row(i) = (dxhat.array() - m1 - cache.xhat.row(i).array() * m2) * cache.invstd[i];
    }
    return dx;
}

struct LayerCache {
    MatF x_in;  // residual stream entering the layer
    LnCache ln1;
    MatF a;  // ln1 output
    MatF q, k, v;
    std::vector<MatF> probs;  // per-head softmax, each T x T
    MatF ctx;                 // concatenated head outputs
    MatF x_mid;               // after attention residual
    LnCache ln2;
    MatF f;      // ln2 output
    MatF h_pre;  // f * w1 + b1
    MatF h_act;  // gelu(h_pre)
};

struct ForwardCache {
    std::vector<uint32_t> ids;
    MatF x0;
    std::vector<LayerCache> layers;
    MatF x_final;  // residual stream entering the final norm
    LnCache lnf;
    MatF y;  // final norm output
};

void write_u32(std::ofstream& out, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ofstream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t read_u32(std::ifstream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("truncated " + what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t read_u64(std::ifstream& in, const std::string& what) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw FormatError("truncated " + what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_matrix(std::ofstream& out, const std::string& name, const MatF& mat) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<uint32_t>(mat.rows()));
    write_u32(out, static_cast<uint32_t>(mat.cols()));
    for (Eigen::Index r = 0; r < mat.rows(); ++r)
        for (Eigen::Index c = 0; c < mat.cols(); ++c) {
            float f = mat(r, c);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            write_u32(out, bits);
        }
}

std::pair<std::string, MatF> read_matrix(std::ifstream& in, const std::string& what) {
    const uint32_t name_len = read_u32(in, what);
    if (name_len > 4096) throw FormatError("oversized tensor name in " + what);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw FormatError("truncated " + what);
    const uint32_t rows = read_u32(in, what);
    const uint32_t cols = read_u32(in, what);
    MatF mat(rows, cols);
    for (uint32_t r = 0; r < rows; ++r)
        for (uint32_t c = 0; c < cols; ++c) {
            const uint32_t bits = read_u32(in, what);
            float f;
            std::memcpy(&f, &bits, 4);
            mat(r, c) = f;
        }
    return {std::move(name), std::move(mat)};
}

}  // namespace

void TinyEncoderConfig::validate() const {
    if (vocab_size == 0) throw ConfigError("encoder vocab size must be positive");
    if (max_positions == 0) throw ConfigError("encoder max positions must be positive");
    if (layers == 0) throw ConfigError("encoder needs at least one layer");
    if (hidden == 0 || heads == 0 || ff == 0)
        throw ConfigError("encoder dimensions must be positive");
    if (hidden % heads != 0)
        throw ConfigError("hidden size " + std::to_string(hidden) +
                          " is not divisible by head count " + std::to_string(heads));
    if (pad_id >= vocab_size) throw ConfigError("pad id outside encoder vocabulary");
}

struct TinyEncoder::Impl {
    TinyEncoderConfig cfg;

    struct Tensor {
        std::string name;
        MatF value, grad, m, v;
    };
    std::vector<Tensor> params;
    std::map<std::string, size_t> by_name;

    // Half-rounded copies used for compute under mixed precision.
    std::vector<MatF> half_weights;
    bool half_dirty = true;
    bool mixed = false;

    uint64_t adam_t = 0;
    AccumStats stats;
    bool accumulating = false;

    size_t add_param(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                     bool gaussian) {
        Tensor t;
        t.name = name;
        t.value = MatF::Zero(rows, cols);
        if (gaussian) {
            // Keyed by parameter name so the init is independent of
            // registration order.
            RngStream rng(mix_chain(mix64(cfg.init_seed),
                                    fnv1a64(name.data(), name.size())));
            for (Eigen::Index r = 0; r < rows; ++r)
                for (Eigen::Index c = 0; c < cols; ++c)
                    t.value(r, c) = static_cast<float>(rng.next_gaussian() * 0.02);
        }
        t.grad = MatF::Zero(rows, cols);
        t.m = MatF::Zero(rows, cols);
        t.v = MatF::Zero(rows, cols);
        params.push_back(std::move(t));
        by_name[name] = params.size() - 1;
        return params.size() - 1;
    }

    Tensor& at(const std::string& name) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw ConfigError("unknown parameter '" + name + "'");
        return params[it->second];
    }

    const Tensor& at(const std::string& name) const {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw ConfigError("unknown parameter '" + name + "'");
        return params[it->second];
    }

    void build(bool ones_gamma) {
        const auto H = static_cast<Eigen::Index>(cfg.hidden);
        const auto V = static_cast<Eigen::Index>(cfg.vocab_size);
        const auto F = static_cast<Eigen::Index>(cfg.ff);
        add_param("tok_emb", V, H, true);
        add_param("pos_emb", static_cast<Eigen::Index>(cfg.max_positions), H, true);
        for (uint32_t l = 0; l < cfg.layers; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            add_param(p + "ln1.gamma", 1, H, false);
            add_param(p + "ln1.beta", 1, H, false);
            add_param(p + "attn.wq", H, H, true);
            add_param(p + "attn.bq", 1, H, false);
            add_param(p + "attn.wk", H, H, true);
            add_param(p + "attn.bk", 1, H, false);
            add_param(p + "attn.wv", H, H, true);
            add_param(p + "attn.bv", 1, H, false);
            add_param(p + "attn.wo", H, H, true);
            add_param(p + "attn.bo", 1, H, false);
            add_param(p + "ln2.gamma", 1, H, false);
            add_param(p + "ln2.beta", 1, H, false);
            add_param(p + "ff.w1", H, F, true);
            add_param(p + "ff.b1", 1, F, false);
            add_param(p + "ff.w2", F, H, true);
            add_param(p + "ff.b2", 1, H, false);
        }
        add_param("lnf.gamma", 1, H, false);
        add_param("lnf.beta", 1, H, false);
        add_param("out.w", H, V, true);
        add_param("out.b", 1, V, false);
        if (ones_gamma)
            for (auto& t : params)
                if (t.name.ends_with("gamma")) t.value.setOnes();
    }

    void refresh_half() {
        if (!half_dirty) return;
        half_weights.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i)
            half_weights[i] = params[i].value.unaryExpr(
                [](float f) { return round_to_half(f); });
        half_dirty = false;
    }

    const MatF& weight(size_t idx) {
        if (!mixed) return params[idx].value;
        refresh_half();
        return half_weights[idx];
    }

    const MatF& weight(const std::string& name) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw ConfigError("unknown parameter '" + name + "'");
        return weight(it->second);
    }

    // Forward pass over one example; fills the cache for backward.
    MatF forward_one(const std::vector<uint32_t>& ids, ForwardCache& cache) {
        const auto T = static_cast<Eigen::Index>(ids.size());
        const auto H = static_cast<Eigen::Index>(cfg.hidden);
        const auto heads = static_cast<Eigen::Index>(cfg.heads);
        const Eigen::Index dh = H / heads;
        const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
        if (ids.size() > cfg.max_positions)
            throw DataError("sequence length " + std::to_string(ids.size()) +
                            " exceeds position table of " +
                            std::to_string(cfg.max_positions));

        cache.ids.assign(ids.begin(), ids.end());
        const MatF& tok = weight("tok_emb");
        const MatF& pos = weight("pos_emb");
        cache.x0.resize(T, H);
        bool any_valid = false;
        for (Eigen::Index t = 0; t < T; ++t) {
            const uint32_t id = ids[static_cast<size_t>(t)];
            if (id >= cfg.vocab_size)
                throw DataError("token id " + std::to_string(id) + " outside vocabulary");
            if (id != cfg.pad_id) any_valid = true;
            cache.x0.row(t) = tok.row(id) + pos.row(t);
        }
        if (!any_valid) throw DataError("chunk contains only padding");

        MatF x = cache.x0;
        cache.layers.resize(cfg.layers);
        for (uint32_t l = 0; l < cfg.layers; ++l) {
            LayerCache& lc = cache.layers[l];
            const std::string p = "layer" + std::to_string(l) + ".";
            lc.x_in = x;
            lc.a = ln_forward(x, weight(p + "ln1.gamma"), weight(p + "ln1.beta"), lc.ln1);
            lc.q = (lc.a * weight(p + "attn.wq")).rowwise() + weight(p + "attn.bq").row(0);
            lc.k = (lc.a * weight(p + "attn.wk")).rowwise() + weight(p + "attn.bk").row(0);
            lc.v = (lc.a * weight(p + "attn.wv")).rowwise() + weight(p + "attn.bv").row(0);
            lc.probs.assign(static_cast<size_t>(heads), MatF());
            lc.ctx.resize(T, H);
            for (Eigen::Index h = 0; h < heads; ++h) {
                const auto qh = lc.q.middleCols(h * dh, dh);
                const auto kh = lc.k.middleCols(h * dh, dh);
                const auto vh = lc.v.middleCols(h * dh, dh);
                MatF scores = qh * kh.transpose() * scale;
                for (Eigen::Index j = 0; j < T; ++j)
                    if (ids[static_cast<size_t>(j)] == cfg.pad_id)
                        scores.col(j).setConstant(kMaskScore);
                MatF& prob = lc.probs[static_cast<size_t>(h)];
                prob.resize(T, T);
                for (Eigen::Index i = 0; i < T; ++i) {
                    const float mx = scores.row(i).maxCoeff();
                    prob.row(i) = (scores.row(i).array() - mx).exp();
                    prob.row(i) /= prob.row(i).sum();
                }
                lc.ctx.middleCols(h * dh, dh) = prob * vh;
            }
            lc.x_mid = x + ((lc.ctx * weight(p + "attn.wo")).rowwise() +
                            weight(p + "attn.bo").row(0));
            lc.f = ln_forward(lc.x_mid, weight(p + "ln2.gamma"), weight(p + "ln2.beta"),
                              lc.ln2);
            lc.h_pre = (lc.f * weight(p + "ff.w1")).rowwise() + weight(p + "ff.b1").row(0);
            lc.h_act = lc.h_pre.unaryExpr([](float f) { return gelu(f); });
            x = lc.x_mid + ((lc.h_act * weight(p + "ff.w2")).rowwise() +
                            weight(p + "ff.b2").row(0));
        }
        cache.x_final = x;
        cache.y = ln_forward(x, weight("lnf.gamma"), weight("lnf.beta"), cache.lnf);
        return (cache.y * weight("out.w")).rowwise() + weight("out.b").row(0);
    }

    // Backward from unnormalized dlogits; adds into the grad buffers.
    void backward_one(const ForwardCache& cache, const MatF& dlogits) {
        const auto T = dlogits.rows();
        const auto H = static_cast<Eigen::Index>(cfg.hidden);
        const auto heads = static_cast<Eigen::Index>(cfg.heads);
        const Eigen::Index dh = H / heads;
        const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

        at("out.w").grad += cache.y.transpose() * dlogits;
        at("out.b").grad.row(0) += dlogits.colwise().sum();
        MatF dy = dlogits * weight("out.w").transpose();
        MatF dx = ln_backward(dy, cache.lnf, weight("lnf.gamma"), at("lnf.gamma").grad,
                              at("lnf.beta").grad);

        for (uint32_t li = cfg.layers; li-- > 0;) {
            const LayerCache& lc = cache.layers[li];
            const std::string p = "layer" + std::to_string(li) + ".";

            // Feed-forward residual branch.
            MatF dh_act = dx * weight(p + "ff.w2").transpose();
            at(p + "ff.w2").grad += lc.h_act.transpose() * dx;
            at(p + "ff.b2").grad.row(0) += dx.colwise().sum();
            MatF dh_pre =
                dh_act.binaryExpr(lc.h_pre, [](float g, float x) { return g * gelu_grad(x); });
            MatF df = dh_pre * weight(p + "ff.w1").transpose();
            at(p + "ff.w1").grad += lc.f.transpose() * dh_pre;
            at(p + "ff.b1").grad.row(0) += dh_pre.colwise().sum();
            MatF dx_mid = dx + ln_backward(df, lc.ln2, weight(p + "ln2.gamma"),
                                           at(p + "ln2.gamma").grad, at(p + "ln2.beta").grad);

            // Attention residual branch.
            MatF dctx = dx_mid * weight(p + "attn.wo").transpose();
            at(p + "attn.wo").grad += lc.ctx.transpose() * dx_mid;
            at(p + "attn.bo").grad.row(0) += dx_mid.colwise().sum();
            MatF dq = MatF::Zero(T, H), dk = MatF::Zero(T, H), dv = MatF::Zero(T, H);
            for (Eigen::Index h = 0; h < heads; ++h) {
                const auto qh = lc.q.middleCols(h * dh, dh);
                const auto kh = lc.k.middleCols(h * dh, dh);
                const auto vh = lc.v.middleCols(h * dh, dh);
                const MatF& prob = lc.probs[static_cast<size_t>(h)];
                const auto dctx_h = dctx.middleCols(h * dh, dh);
                dv.middleCols(h * dh, dh) = prob.transpose() * dctx_h;
                MatF dprob = dctx_h * vh.transpose();
                MatF dscores(T, T);
                for (Eigen::Index i = 0; i < T; ++i) {
                    const float dot = dprob.row(i).dot(prob.row(i));
                    dscores.row(i) =
                        (dprob.row(i).array() - dot) * prob.row(i).array() * scale;
                }
                dq.middleCols(h * dh, dh) = dscores * kh;
                dk.middleCols(h * dh, dh) = dscores.transpose() * qh;
            }
            MatF da = dq * weight(p + "attn.wq").transpose() +
                      dk * weight(p + "attn.wk").transpose() +
                      dv * weight(p + "attn.wv").transpose();
            at(p + "attn.wq").grad += lc.a.transpose() * dq;
            at(p + "attn.bq").grad.row(0) += dq.colwise().sum();
            at(p + "attn.wk").grad += lc.a.transpose() * dk;
            at(p + "attn.bk").grad.row(0) += dk.colwise().sum();
            at(p + "attn.wv").grad += lc.a.transpose() * dv;
            at(p + "attn.bv").grad.row(0) += dv.colwise().sum();
            dx = dx_mid + ln_backward(da, lc.ln1, weight(p + "ln1.gamma"),
                                      at(p + "ln1.gamma").grad, at(p + "ln1.beta").grad);
        }

        MatF& dtok = at("tok_emb").grad;
        MatF& dpos = at("pos_emb").grad;
        for (Eigen::Index t = 0; t < T; ++t) {
            dtok.row(cache.ids[static_cast<size_t>(t)]) += dx.row(t);
            dpos.row(t) += dx.row(t);
        }
    }
};

TinyEncoder::TinyEncoder(const TinyEncoderConfig& cfg) : impl_(std::make_unique<Impl>()) {
    cfg.validate();
    impl_->cfg = cfg;
    impl_->build(/*ones_gamma=*/true);
}

TinyEncoder::~TinyEncoder() = default;

const TinyEncoderConfig& TinyEncoder::config() const { return impl_->cfg; }

uint32_t TinyEncoder::vocab_size() const { return impl_->cfg.vocab_size; }

uint64_t TinyEncoder::parameter_count() const {
    uint64_t n = 0;
    for (const auto& t : impl_->params)
        n += static_cast<uint64_t>(t.value.rows()) * static_cast<uint64_t>(t.value.cols());
    return n;
}

BatchLogits TinyEncoder::forward(std::span<const MaskedExample> batch) {
    BatchLogits out;
    out.reserve(batch.size());
    ForwardCache cache;
    for (const MaskedExample& ex : batch) out.push_back(impl_->forward_one(ex.input_ids, cache));
    return out;
}

void TinyEncoder::begin_accumulation() {
    for (auto& t : impl_->params) t.grad.setZero();
    impl_->stats = AccumStats{};
    impl_->accumulating = true;
    if (impl_->mixed) impl_->refresh_half();
}

void TinyEncoder::accumulate(const MaskedExample& ex) {
    if (!impl_->accumulating) throw ConfigError("accumulate called outside an accumulation");
    ForwardCache cache;
    const MatF logits = impl_->forward_one(ex.input_ids, cache);
    MatF dlogits = MatF::Zero(logits.rows(), logits.cols());
    uint64_t labeled = 0;
    for (size_t t = 0; t < ex.labels.size(); ++t) {
        if (ex.labels[t] == kIgnoreLabel) continue;
        const auto row = static_cast<Eigen::Index>(t);
        const uint32_t label = static_cast<uint32_t>(ex.labels[t]);
        impl_->stats.nll_sum += row_nll(logits.row(row), label);
        // Softmax minus one-hot, in the sum (unnormalized) form; the division
        // by the total labeled count happens once, inside apply_update.
        const float mx = logits.row(row).maxCoeff();
        Eigen::RowVectorXf p = (logits.row(row).array() - mx).exp();
        p /= p.sum();
        dlogits.row(row) = p;
        dlogits(row, static_cast<Eigen::Index>(label)) -= 1.0f;
        ++labeled;
    }
    impl_->stats.labeled += labeled;
    impl_->stats.examples += 1;
    if (labeled > 0) impl_->backward_one(cache, dlogits);
}

AccumStats TinyEncoder::accumulation_stats() const {
    if (!impl_->accumulating) throw ConfigError("no accumulation in progress");
    return impl_->stats;
}

void TinyEncoder::apply_update(const OptimizerConfig& opt) {
    if (!impl_->accumulating) throw ConfigError("no accumulation in progress");
    if (impl_->stats.labeled == 0) throw DataError("no supervised positions in batch");
    const float norm = 1.0f / static_cast<float>(impl_->stats.labeled);
    impl_->adam_t += 1;
    const double t = static_cast<double>(impl_->adam_t);
    const float bc1 = static_cast<float>(1.0 - std::pow(opt.beta1, t));
    const float bc2 = static_cast<float>(1.0 - std::pow(opt.beta2, t));
    const float lr = static_cast<float>(opt.learning_rate);
    const float wd = static_cast<float>(opt.weight_decay);
    const float b1 = static_cast<float>(opt.beta1);
    const float b2 = static_cast<float>(opt.beta2);
    const float eps = static_cast<float>(opt.epsilon);
    for (auto& tn : impl_->params) {
        const MatF g = tn.grad * norm;
        if (!g.allFinite()) throw NumericalError("non-finite gradient in " + tn.name);
        tn.m = b1 * tn.m + (1.0f - b1) * g;
        tn.v = b2 * tn.v + (1.0f - b2) * g.cwiseProduct(g);
        const MatF mhat = tn.m / bc1;
        const MatF vhat = tn.v / bc2;
        // Decoupled weight decay: applied to the weights directly, not mixed
        // into the gradient moments.
        tn.value -=
            lr * (mhat.array() / (vhat.array().sqrt() + eps) + wd * tn.value.array()).matrix();
        if (!tn.value.allFinite()) throw NumericalError("non-finite weight in " + tn.name);
    }
    impl_->accumulating = false;
    impl_->half_dirty = true;
}

void TinyEncoder::set_mixed_precision(bool on) {
    if (on != impl_->mixed) impl_->half_dirty = true;
    impl_->mixed = on;
}

bool TinyEncoder::mixed_precision() const { return impl_->mixed; }

void TinyEncoder::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    {
        std::ofstream cfgout(dir / "config.txt", std::ios::binary);
        if (!cfgout) throw DataError("cannot write " + (dir / "config.txt").string());
        const TinyEncoderConfig& c = impl_->cfg;
        cfgout << "kind=tiny_encoder\n"
               << "vocab_size=" << c.vocab_size << "\n"
               << "max_positions=" << c.max_positions << "\n"
               << "layers=" << c.layers << "\n"
               << "hidden=" << c.hidden << "\n"
               << "heads=" << c.heads << "\n"
               << "ff=" << c.ff << "\n"
               << "pad_id=" << c.pad_id << "\n"
               << "init_seed=" << c.init_seed << "\n";
    }
    std::ofstream out(dir / "weights.bin", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "weights.bin").string());
    write_u32(out, kWeightsMagic);
    write_u32(out, kWeightsVersion);
    write_u32(out, static_cast<uint32_t>(impl_->params.size()));
    for (const auto& t : impl_->params) write_matrix(out, t.name, t.value);
    if (!out) throw DataError("short write to " + (dir / "weights.bin").string());
}

std::unique_ptr<TinyEncoder> TinyEncoder::load(const std::filesystem::path& dir) {
    const auto cfg_path = dir / "config.txt";
    std::ifstream cfgin(cfg_path, std::ios::binary);
    if (!cfgin) throw DataError("cannot open checkpoint config " + cfg_path.string());
    TinyEncoderConfig cfg;
    std::string line;
    std::map<std::string, std::string> kv;
    while (std::getline(cfgin, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("bad line in " + cfg_path.string() + ": " + line);
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    const auto need = [&](const std::string& key) {
        const auto it = kv.find(key);
        if (it == kv.end())
            throw FormatError("missing key '" + key + "' in " + cfg_path.string());
        return it->second;
    };
    if (need("kind") != "tiny_encoder")
        throw ConfigError("checkpoint kind '" + kv["kind"] + "' is not tiny_encoder");
    try {
        cfg.vocab_size = static_cast<uint32_t>(std::stoul(need("vocab_size")));
        cfg.max_positions = static_cast<uint32_t>(std::stoul(need("max_positions")));
        cfg.layers = static_cast<uint32_t>(std::stoul(need("layers")));
        cfg.hidden = static_cast<uint32_t>(std::stoul(need("hidden")));
        cfg.heads = static_cast<uint32_t>(std::stoul(need("heads")));
        cfg.ff = static_cast<uint32_t>(std::stoul(need("ff")));
        cfg.pad_id = static_cast<uint32_t>(std::stoul(need("pad_id")));
        cfg.init_seed = std::stoull(need("init_seed"));
    } catch (const std::exception&) {
        throw FormatError("non-numeric value in " + cfg_path.string());
    }

    auto model = std::make_unique<TinyEncoder>(cfg);
    const auto weights_path = dir / "weights.bin";
    std::ifstream in(weights_path, std::ios::binary);
    if (!in) throw DataError("cannot open " + weights_path.string());
    if (read_u32(in, weights_path.string()) != kWeightsMagic)
        throw FormatError("bad magic in " + weights_path.string());
    if (read_u32(in, weights_path.string()) != kWeightsVersion)
        throw FormatError("unsupported weights version in " + weights_path.string());
    const uint32_t count = read_u32(in, weights_path.string());
    if (count != model->impl_->params.size())
        throw FormatError("checkpoint has " + std::to_string(count) + " tensors, expected " +
                          std::to_string(model->impl_->params.size()));
    for (uint32_t i = 0; i < count; ++i) {
        auto [name, mat] = read_matrix(in, weights_path.string());
        auto& t = model->impl_->at(name);
        if (t.value.rows() != mat.rows() || t.value.cols() != mat.cols())
            throw FormatError("shape mismatch for tensor '" + name + "' in " +
                              weights_path.string());
        t.value = std::move(mat);
    }
    model->impl_->half_dirty = true;
    return model;
}

void TinyEncoder::save_optimizer(const std::filesystem::path& file) const {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError("cannot write " + file.string());
    write_u32(out, kOptimMagic);
    write_u32(out, kWeightsVersion);
    write_u64(out, impl_->adam_t);
    write_u32(out, static_cast<uint32_t>(impl_->params.size()));
    for (const auto& t : impl_->params) {
        write_matrix(out, t.name + ".m", t.m);
        write_matrix(out, t.name + ".v", t.v);
    }
    if (!out) throw DataError("short write to " + file.string());
}

void TinyEncoder::load_optimizer(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cannot open " + file.string());
    if (read_u32(in, file.string()) != kOptimMagic)
        throw FormatError("bad magic in " + file.string());
    if (read_u32(in, file.string()) != kWeightsVersion)
        throw FormatError("unsupported optimizer state version in " + file.string());
    const uint64_t step = read_u64(in, file.string());
    const uint32_t count = read_u32(in, file.string());
    if (count != impl_->params.size())
        throw FormatError("optimizer state tensor count mismatch in " + file.string());
    for (uint32_t i = 0; i < count; ++i) {
        auto [mname, mmat] = read_matrix(in, file.string());
        auto [vname, vmat] = read_matrix(in, file.string());
        if (!mname.ends_with(".m") || !vname.ends_with(".v"))
            throw FormatError("unexpected tensor order in " + file.string());
        auto& t = impl_->at(mname.substr(0, mname.size() - 2));
        if (vname.substr(0, vname.size() - 2) != t.name)
            throw FormatError("mismatched moment pair in " + file.string());
        if (t.m.rows() != mmat.rows() || t.m.cols() != mmat.cols())
            throw FormatError("shape mismatch for '" + mname + "' in " + file.string());
        t.m = std::move(mmat);
        t.v = std::move(vmat);
    }
    impl_->adam_t = step;
}

uint64_t TinyEncoder::adam_step() const { return impl_->adam_t; }

std::vector<std::string> TinyEncoder::parameter_names() const {
    std::vector<std::string> names;
    names.reserve(impl_->params.size());
    for (const auto& t : impl_->params) names.push_back(t.name);
    return names;
}

const Eigen::MatrixXf& TinyEncoder::parameter(const std::string& name) const {
    return impl_->at(name).value;
}

Eigen::MatrixXf& TinyEncoder::mutable_parameter(const std::string& name) {
    impl_->half_dirty = true;
    return impl_->at(name).value;
}

const Eigen::MatrixXf& TinyEncoder::gradient(const std::string& name) const {
    return impl_->at(name).grad;
}

}  // namespace mlmadapt
