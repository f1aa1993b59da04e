#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tabsynth/binary_io.hpp"
#include "tabsynth/error.hpp"
#include "tabsynth/random.hpp"
#include "tabsynth/vocab.hpp"

namespace tabsynth {

struct LMConfig {
    int layers = 2;
    int heads = 2;
    int embed_dim = 64;
    int max_len = 0;  // 0: sized to the schema, 1 + 4(M+1)
    double learning_rate = 3e-3;
    int batch_size = 32;
    int epochs = 50;
    double temperature = 0.7;
    std::uint64_t seed = 0;

    void validate() const {
        if (layers < 1 || heads < 1 || embed_dim < 1 || embed_dim % heads != 0) {
            throw InputError("model shape needs layers, heads >= 1 and embed_dim divisible by heads");
        }
        if (!(learning_rate > 0.0) || batch_size < 1 || epochs < 0) {
            throw InputError("training needs learning_rate > 0, batch_size >= 1, epochs >= 0");
        }
        if (!(temperature > 0.0)) {
            throw InputError("temperature must be positive");
        }
    }

    friend bool operator==(const LMConfig&, const LMConfig&) = default;
};

/// Tokens needed to serialize a full row of `num_columns` cells.
constexpr int sentence_length(std::size_t num_columns) { return 1 + 4 * static_cast<int>(num_columns); }

/// softmax(z / T) with max-subtraction.
inline std::vector<double> next_token_dist(std::span<const double> logits, double temperature) {
    if (!(temperature > 0.0)) {
        throw InputError("temperature must be positive");
    }
    if (logits.empty()) {
        throw InputError("empty logit vector");
    }
    double max_z = -std::numeric_limits<double>::infinity();
    for (double z : logits) {
        if (!std::isfinite(z)) {
            throw InputError("non-finite logit");
        }
        max_z = std::max(max_z, z);
    }
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - max_z) / temperature);
        total += p[i];
    }
    for (double& x : p) {
        x /= total;
    }
    return p;
}

/// Attention weights of every layer and head for one input sequence.
struct AttentionTrace {
    int layers = 0;
    int heads = 0;
    int length = 0;
    std::vector<double> weights;  // [layer][head][query][key]

    double at(int layer, int head, int query, int key) const {
        return weights[((static_cast<std::size_t>(layer) * heads + head) * length + query) * length + key];
    }
};

struct Continuation {
    TokenSeq sequence;     // prefix followed by the generated tokens
    bool hit_eos = false;  // false when stopped by max_new or max_len
};

/// Decoder-only transformer over a closed token vocabulary: learned token and
/// position embeddings, pre-norm blocks of causal multi-head self-attention and
/// a GELU MLP, a final layer norm, and an untied output projection. All
/// parameters live in one flat vector; gradients are computed analytically.
class LanguageModel {
public:
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Vec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

    LanguageModel(LMConfig config, Vocab vocab) : config_(config), vocab_(std::move(vocab)) {
        if (config_.max_len == 0) {
            config_.max_len = sentence_length(vocab_.num_columns());
        }
        config_.validate();
        if (config_.max_len < sentence_length(vocab_.num_columns())) {
            throw InputError("max_len is shorter than a full sentence");
        }
        layout();
        params_.assign(num_params_, 0.0);
        initialize();
    }

    const LMConfig& config() const { return config_; }
    const Vocab& vocab() const { return vocab_; }
    std::size_t vocab_size() const { return vocab_.size(); }
    std::span<double> parameters() { return params_; }
    std::span<const double> parameters() const { return params_; }

    /// Next-token logits after `prefix`; 1 <= |prefix| <= max_len - 1.
    std::vector<double> logits(std::span<const TokenId> prefix) const {
        if (prefix.empty() || static_cast<int>(prefix.size()) > config_.max_len - 1) {
            throw InputError("prefix length must lie in [1, max_len - 1]");
        }
        check_ids(prefix);
        Workspace ws;
        forward(std::vector<std::span<const TokenId>>{prefix}, ws, false);
        const auto last = ws.logits.row(ws.logits.rows() - 1);
        return std::vector<double>(last.data(), last.data() + last.size());
    }

    AttentionTrace attention_trace(std::span<const TokenId> seq) const {
        if (seq.empty() || static_cast<int>(seq.size()) > config_.max_len) {
            throw InputError("sequence length must lie in [1, max_len]");
        }
        check_ids(seq);
        Workspace ws;
        forward(std::vector<std::span<const TokenId>>{seq}, ws, true);
        AttentionTrace trace{config_.layers, config_.heads, static_cast<int>(seq.size()), {}};
        for (int l = 0; l < config_.layers; ++l) {
            for (int h = 0; h < config_.heads; ++h) {
                const Mat& a = ws.layers[static_cast<std::size_t>(l)].att[static_cast<std::size_t>(h)];
                trace.weights.insert(trace.weights.end(), a.data(), a.data() + a.size());
            }
        }
        return trace;
    }

    /// Mean next-token cross-entropy (nats per predicted token) over a batch.
    double loss(std::span<const TokenSeq> batch) const {
        Workspace ws;
        auto spans = as_spans(batch);
        forward(spans, ws, true);
        std::size_t count = 0;
        return cross_entropy(spans, ws, nullptr, count);
    }

    /// Mean cross-entropy and its gradient with respect to parameters().
    double loss_and_gradient(std::span<const TokenSeq> batch, std::span<double> grad) const {
        if (grad.size() != params_.size()) {
            throw InputError("gradient buffer has the wrong size");
        }
        Workspace ws;
        auto spans = as_spans(batch);
        forward(spans, ws, true);
        std::size_t count = 0;
        Mat dlogits;
        const double value = cross_entropy(spans, ws, &dlogits, count);
        std::fill(grad.begin(), grad.end(), 0.0);
        backward(spans, ws, dlogits, grad);
        return value;
    }

    void write(std::ostream& out) const {
        binary::write_i64(out, config_.layers);
        binary::write_i64(out, config_.heads);
        binary::write_i64(out, config_.embed_dim);
        binary::write_i64(out, config_.max_len);
        binary::write_f64(out, config_.learning_rate);
        binary::write_i64(out, config_.batch_size);
        binary::write_i64(out, config_.epochs);
        binary::write_f64(out, config_.temperature);
        binary::write_u64(out, config_.seed);
        binary::write_u64(out, vocab_.size());
        for (const auto& t : vocab_.tokens()) {
            binary::write_u64(out, static_cast<std::uint64_t>(t.kind));
            binary::write_i64(out, t.column);
            binary::write_string(out, t.text);
        }
        binary::write_f64s(out, params_);
    }

    static LanguageModel read(std::istream& in) {
        LMConfig cfg;
        cfg.layers = static_cast<int>(binary::read_i64(in));
        cfg.heads = static_cast<int>(binary::read_i64(in));
        cfg.embed_dim = static_cast<int>(binary::read_i64(in));
        cfg.max_len = static_cast<int>(binary::read_i64(in));
        cfg.learning_rate = binary::read_f64(in);
        cfg.batch_size = static_cast<int>(binary::read_i64(in));
        cfg.epochs = static_cast<int>(binary::read_i64(in));
        cfg.temperature = binary::read_f64(in);
        cfg.seed = binary::read_u64(in);
        const auto n = binary::read_u64(in);
        if (n > (1u << 24)) {
            throw InputError("corrupt checkpoint vocabulary size");
        }
        std::vector<Token> tokens;
        tokens.reserve(n);
        for (std::uint64_t i = 0; i < n; ++i) {
            Token t;
            const auto kind = binary::read_u64(in);
            if (kind > static_cast<std::uint64_t>(TokenKind::pad)) {
                throw InputError("corrupt checkpoint token kind");
            }
            t.kind = static_cast<TokenKind>(kind);
            t.column = static_cast<std::int32_t>(binary::read_i64(in));
            t.text = binary::read_string(in);
            tokens.push_back(std::move(t));
        }
        LanguageModel model(cfg, Vocab(std::move(tokens)));
        auto params = binary::read_f64s(in);
        if (params.size() != model.params_.size()) {
            throw InputError("checkpoint parameter count does not match its configuration");
        }
        model.params_ = std::move(params);
        return model;
    }

    friend bool operator==(const LanguageModel& a, const LanguageModel& b) {
        return a.config_ == b.config_ && a.vocab_ == b.vocab_ && a.params_ == b.params_;
    }

private:
    struct LayerOffsets {
        std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
    };

    struct LayerCache {
        Mat x_in, xhat1, ln1;
        Eigen::VectorXd rstd1, rstd2;
        Mat qkv;
        std::vector<Mat> att;  // per head, single-sequence traces only
        std::vector<std::vector<Mat>> att_seq;  // [sequence][head]
        Mat att_out, x_mid, xhat2, ln2, fc_pre, fc_act;
    };

    struct Workspace {
        std::vector<LayerCache> layers;
        Mat x_final, xhat_f, ln_f;
        Eigen::VectorXd rstd_f;
        Mat logits;
        std::vector<std::size_t> offsets;  // row offset of each sequence
    };

    static constexpr double kLayerNormEps = 1e-5;

    static std::vector<std::span<const TokenId>> as_spans(std::span<const TokenSeq> batch) {
        std::vector<std::span<const TokenId>> out;
        out.reserve(batch.size());
        for (const auto& s : batch) {
            out.emplace_back(s);
        }
        return out;
    }

    void check_ids(std::span<const TokenId> seq) const {
        for (auto id : seq) {
            if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
                throw InputError("token id out of range");
            }
        }
    }

    void layout() {
        const auto d = static_cast<std::size_t>(config_.embed_dim);
        const auto v = vocab_.size();
        const auto t = static_cast<std::size_t>(config_.max_len);
        std::size_t off = 0;
        auto take = [&off](std::size_t n) {
            const auto at = off;
            off += n;
            return at;
        };
        wte_ = take(v * d);
        wpe_ = take(t * d);
        layer_offsets_.clear();
        for (int l = 0; l < config_.layers; ++l) {
            LayerOffsets lo{};
            lo.ln1_g = take(d);
            lo.ln1_b = take(d);
            lo.w_qkv = take(d * 3 * d);
            lo.b_qkv = take(3 * d);
            lo.w_o = take(d * d);
            lo.b_o = take(d);
            lo.ln2_g = take(d);
            lo.ln2_b = take(d);
            lo.w_fc = take(d * 4 * d);
            lo.b_fc = take(4 * d);
            lo.w_proj = take(4 * d * d);
            lo.b_proj = take(d);
            layer_offsets_.push_back(lo);
        }
        lnf_g_ = take(d);
        lnf_b_ = take(d);
        w_head_ = take(d * v);
        b_head_ = take(v);
        num_params_ = off;
    }

    void initialize() {
        Rng rng(derive_seed(config_.seed, 0x11, 0));
        const auto d = static_cast<std::size_t>(config_.embed_dim);
        const double std_base = 0.02;
        const double std_resid = 0.02 / std::sqrt(2.0 * config_.layers);
        auto fill_normal = [&](std::size_t at, std::size_t n, double std) {
            for (std::size_t i = 0; i < n; ++i) {
                params_[at + i] = std * rng.normal();
            }
        };
        auto fill_const = [&](std::size_t at, std::size_t n, double value) {
            std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(at), n, value);
        };
        fill_normal(wte_, vocab_.size() * d, std_base);
        fill_normal(wpe_, static_cast<std::size_t>(config_.max_len) * d, std_base);
        for (const auto& lo : layer_offsets_) {
            fill_const(lo.ln1_g, d, 1.0);
            fill_normal(lo.w_qkv, d * 3 * d, std_base);
            fill_normal(lo.w_o, d * d, std_resid);
            fill_const(lo.ln2_g, d, 1.0);
            fill_normal(lo.w_fc, d * 4 * d, std_base);
            fill_normal(lo.w_proj, 4 * d * d, std_resid);
        }
        fill_const(lnf_g_, d, 1.0);
        fill_normal(w_head_, d * vocab_.size(), std_base);
    }

    Eigen::Map<const Mat> cmat(std::size_t at, std::size_t rows, std::size_t cols) const {
        return {params_.data() + at, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
    }

    Eigen::Map<const Vec> cvec(std::size_t at, std::size_t n) const {
        return {params_.data() + at, static_cast<Eigen::Index>(n)};
    }

    static Eigen::Map<Mat> gmat(std::span<double> g, std::size_t at, std::size_t rows, std::size_t cols) {
        return {g.data() + at, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
    }

    static Eigen::Map<Vec> gvec(std::span<double> g, std::size_t at, std::size_t n) {
        return {g.data() + at, static_cast<Eigen::Index>(n)};
    }

    static void layer_norm(const Mat& x, const Eigen::Map<const Vec>& gain, const Eigen::Map<const Vec>& bias,
                           Mat& xhat, Mat& out, Eigen::VectorXd& rstd) {
        const auto rows = x.rows();
        const auto cols = x.cols();
        xhat.resize(rows, cols);
        out.resize(rows, cols);
        rstd.resize(rows);
        for (Eigen::Index r = 0; r < rows; ++r) {
            const double mean = x.row(r).mean();
            const double var = (x.row(r).array() - mean).square().mean();
            const double s = 1.0 / std::sqrt(var + kLayerNormEps);
            rstd(r) = s;
            xhat.row(r) = (x.row(r).array() - mean) * s;
            out.row(r) = xhat.row(r).cwiseProduct(gain) + bias;
        }
    }

    static Mat layer_norm_backward(const Mat& dout, const Mat& xhat, const Eigen::VectorXd& rstd,
                                   const Eigen::Map<const Vec>& gain, Eigen::Map<Vec> dgain, Eigen::Map<Vec> dbias) {
        dgain += dout.cwiseProduct(xhat).colwise().sum();
        dbias += dout.colwise().sum();
        Mat dx(dout.rows(), dout.cols());
        const double n = static_cast<double>(dout.cols());
        for (Eigen::Index r = 0; r < dout.rows(); ++r) {
            const Vec dxhat = dout.row(r).cwiseProduct(gain);
            const double mean_d = dxhat.sum() / n;
            const double mean_dx = dxhat.cwiseProduct(xhat.row(r)).sum() / n;
            dx.row(r) = rstd(r) * (dxhat.array() - mean_d - xhat.row(r).array() * mean_dx);
        }
        return dx;
    }

    static constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

    static double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

    static double gelu_grad(double x) {
        const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
    }

    void forward(const std::vector<std::span<const TokenId>>& seqs, Workspace& ws, bool keep_attention) const {
        const auto d = static_cast<std::size_t>(config_.embed_dim);
        const auto v = vocab_.size();
        const auto nh = static_cast<std::size_t>(config_.heads);
        const auto hd = d / nh;
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

        ws.offsets.assign(seqs.size() + 1, 0);
        for (std::size_t b = 0; b < seqs.size(); ++b) {
            if (seqs[b].empty() || static_cast<int>(seqs[b].size()) > config_.max_len) {
                throw InputError("sequence length must lie in [1, max_len]");
            }
            ws.offsets[b + 1] = ws.offsets[b] + seqs[b].size();
        }
        const auto rows = static_cast<Eigen::Index>(ws.offsets.back());

        const auto wte = cmat(wte_, v, d);
        const auto wpe = cmat(wpe_, static_cast<std::size_t>(config_.max_len), d);
        Mat x(rows, static_cast<Eigen::Index>(d));
        for (std::size_t b = 0; b < seqs.size(); ++b) {
            for (std::size_t t = 0; t < seqs[b].size(); ++t) {
                const auto r = static_cast<Eigen::Index>(ws.offsets[b] + t);
                x.row(r) = wte.row(seqs[b][t]) + wpe.row(static_cast<Eigen::Index>(t));
            }
        }

        ws.layers.assign(layer_offsets_.size(), LayerCache{});
        for (std::size_t l = 0; l < layer_offsets_.size(); ++l) {
            const auto& lo = layer_offsets_[l];
            auto& c = ws.layers[l];
            c.x_in = x;
            layer_norm(c.x_in, cvec(lo.ln1_g, d), cvec(lo.ln1_b, d), c.xhat1, c.ln1, c.rstd1);
            c.qkv.noalias() = c.ln1 * cmat(lo.w_qkv, d, 3 * d);
            c.qkv.rowwise() += cvec(lo.b_qkv, 3 * d);

            c.att_out.setZero(rows, static_cast<Eigen::Index>(d));
            c.att_seq.assign(seqs.size(), std::vector<Mat>(nh));
            for (std::size_t b = 0; b < seqs.size(); ++b) {
                const auto r0 = static_cast<Eigen::Index>(ws.offsets[b]);
                const auto len = static_cast<Eigen::Index>(seqs[b].size());
                for (std::size_t h = 0; h < nh; ++h) {
                    const auto hc = static_cast<Eigen::Index>(h * hd);
                    const auto q = c.qkv.block(r0, hc, len, static_cast<Eigen::Index>(hd));
                    const auto k = c.qkv.block(r0, static_cast<Eigen::Index>(d) + hc, len, static_cast<Eigen::Index>(hd));
                    const auto val =
                        c.qkv.block(r0, 2 * static_cast<Eigen::Index>(d) + hc, len, static_cast<Eigen::Index>(hd));
                    Mat p = (q * k.transpose()) * scale;
                    for (Eigen::Index i = 0; i < len; ++i) {
                        const double m = p.row(i).head(i + 1).maxCoeff();
                        double total = 0.0;
                        for (Eigen::Index j = 0; j <= i; ++j) {
                            p(i, j) = std::exp(p(i, j) - m);
                            total += p(i, j);
                        }
                        for (Eigen::Index j = 0; j <= i; ++j) {
                            p(i, j) /= total;
                        }
                        for (Eigen::Index j = i + 1; j < len; ++j) {
                            p(i, j) = 0.0;
                        }
                    }
                    c.att_out.block(r0, hc, len, static_cast<Eigen::Index>(hd)).noalias() = p * val;
                    c.att_seq[b][h] = std::move(p);
                }
            }
            if (keep_attention && seqs.size() == 1) {
                c.att = c.att_seq[0];
            }
            c.x_mid = c.x_in;
            c.x_mid.noalias() += c.att_out * cmat(lo.w_o, d, d);
            c.x_mid.rowwise() += cvec(lo.b_o, d);

            layer_norm(c.x_mid, cvec(lo.ln2_g, d), cvec(lo.ln2_b, d), c.xhat2, c.ln2, c.rstd2);
            c.fc_pre.noalias() = c.ln2 * cmat(lo.w_fc, d, 4 * d);
            c.fc_pre.rowwise() += cvec(lo.b_fc, 4 * d);
            c.fc_act = c.fc_pre.unaryExpr([](double z) { return gelu(z); });
            x = c.x_mid;
            x.noalias() += c.fc_act * cmat(lo.w_proj, 4 * d, d);
            x.rowwise() += cvec(lo.b_proj, d);
        }
        ws.x_final = x;
        layer_norm(ws.x_final, cvec(lnf_g_, d), cvec(lnf_b_, d), ws.xhat_f, ws.ln_f, ws.rstd_f);
        ws.logits.noalias() = ws.ln_f * cmat(w_head_, d, v);
        ws.logits.rowwise() += cvec(b_head_, v);
    }

    double cross_entropy(const std::vector<std::span<const TokenId>>& seqs, const Workspace& ws, Mat* dlogits,
                         std::size_t& count) const {
        count = 0;
        for (const auto& s : seqs) {
            count += s.size() - 1;
        }
        if (count == 0) {
            throw InputError("batch has no predictable tokens");
        }
        if (dlogits) {
            dlogits->setZero(ws.logits.rows(), ws.logits.cols());
        }
        double total = 0.0;
        const double inv = 1.0 / static_cast<double>(count);
        for (std::size_t b = 0; b < seqs.size(); ++b) {
            for (std::size_t t = 0; t + 1 < seqs[b].size(); ++t) {
                const auto r = static_cast<Eigen::Index>(ws.offsets[b] + t);
                const auto row = ws.logits.row(r);
                const double m = row.maxCoeff();
                const double lse = m + std::log((row.array() - m).exp().sum());
                const auto target = seqs[b][t + 1];
                total += lse - row(target);
                if (dlogits) {
                    dlogits->row(r) = (row.array() - lse).exp() * inv;
                    (*dlogits)(r, target) -= inv;
                }
            }
        }
        return total * inv;
    }

    void backward(const std::vector<std::span<const TokenId>>& seqs, const Workspace& ws, const Mat& dlogits,
                  std::span<double> grad) const {
        const auto d = static_cast<std::size_t>(config_.embed_dim);
        const auto v = vocab_.size();
        const auto nh = static_cast<std::size_t>(config_.heads);
        const auto hd = d / nh;
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

        gmat(grad, w_head_, d, v).noalias() += ws.ln_f.transpose() * dlogits;
        gvec(grad, b_head_, v) += dlogits.colwise().sum();
        const Mat dln_f = dlogits * cmat(w_head_, d, v).transpose();
        Mat dx = layer_norm_backward(dln_f, ws.xhat_f, ws.rstd_f, cvec(lnf_g_, d), gvec(grad, lnf_g_, d),
                                     gvec(grad, lnf_b_, d));

        for (std::size_t li = layer_offsets_.size(); li-- > 0;) {
            const auto& lo = layer_offsets_[li];
            const auto& c = ws.layers[li];

            // MLP branch
            gmat(grad, lo.w_proj, 4 * d, d).noalias() += c.fc_act.transpose() * dx;
            gvec(grad, lo.b_proj, d) += dx.colwise().sum();
            Mat dfc = dx * cmat(lo.w_proj, 4 * d, d).transpose();
            dfc.array() *= c.fc_pre.unaryExpr([](double z) { return gelu_grad(z); }).array();
            gmat(grad, lo.w_fc, d, 4 * d).noalias() += c.ln2.transpose() * dfc;
            gvec(grad, lo.b_fc, 4 * d) += dfc.colwise().sum();
            const Mat dln2 = dfc * cmat(lo.w_fc, d, 4 * d).transpose();
            Mat dx_mid = dx + layer_norm_backward(dln2, c.xhat2, c.rstd2, cvec(lo.ln2_g, d), gvec(grad, lo.ln2_g, d),
                                                  gvec(grad, lo.ln2_b, d));

            // attention branch
            gmat(grad, lo.w_o, d, d).noalias() += c.att_out.transpose() * dx_mid;
            gvec(grad, lo.b_o, d) += dx_mid.colwise().sum();
            const Mat datt = dx_mid * cmat(lo.w_o, d, d).transpose();
            Mat dqkv = Mat::Zero(c.qkv.rows(), c.qkv.cols());
            for (std::size_t b = 0; b < seqs.size(); ++b) {
                const auto r0 = static_cast<Eigen::Index>(ws.offsets[b]);
                const auto len = static_cast<Eigen::Index>(seqs[b].size());
                for (std::size_t h = 0; h < nh; ++h) {
                    const auto hc = static_cast<Eigen::Index>(h * hd);
                    const auto hdi = static_cast<Eigen::Index>(hd);
                    const auto di = static_cast<Eigen::Index>(d);
                    const Mat& p = c.att_seq[b][h];
                    const auto q = c.qkv.block(r0, hc, len, hdi);
                    const auto k = c.qkv.block(r0, di + hc, len, hdi);
                    const auto val = c.qkv.block(r0, 2 * di + hc, len, hdi);
                    const auto dout = datt.block(r0, hc, len, hdi);
                    const Mat dp = dout * val.transpose();
                    dqkv.block(r0, 2 * di + hc, len, hdi).noalias() += p.transpose() * dout;
                    Mat ds = p.cwiseProduct(dp);
                    const Eigen::VectorXd rowdot = ds.rowwise().sum();
                    ds -= p.cwiseProduct(rowdot.replicate(1, len));
                    ds *= scale;
                    dqkv.block(r0, hc, len, hdi).noalias() += ds * k;
                    dqkv.block(r0, di + hc, len, hdi).noalias() += ds.transpose() * q;
                }
            }
            gmat(grad, lo.w_qkv, d, 3 * d).noalias() += c.ln1.transpose() * dqkv;
            gvec(grad, lo.b_qkv, 3 * d) += dqkv.colwise().sum();
            const Mat dln1 = dqkv * cmat(lo.w_qkv, d, 3 * d).transpose();
            dx = dx_mid + layer_norm_backward(dln1, c.xhat1, c.rstd1, cvec(lo.ln1_g, d), gvec(grad, lo.ln1_g, d),
                                              gvec(grad, lo.ln1_b, d));
        }

        auto dwte = gmat(grad, wte_, v, d);
        auto dwpe = gmat(grad, wpe_, static_cast<std::size_t>(config_.max_len), d);
        for (std::size_t b = 0; b < seqs.size(); ++b) {
            for (std::size_t t = 0; t < seqs[b].size(); ++t) {
                const auto r = static_cast<Eigen::Index>(ws.offsets[b] + t);
                dwte.row(seqs[b][t]) += dx.row(r);
                dwpe.row(static_cast<Eigen::Index>(t)) += dx.row(r);
            }
        }
    }

    LMConfig config_;
    Vocab vocab_;
    std::vector<double> params_;
    std::size_t num_params_ = 0;
    std::size_t wte_ = 0, wpe_ = 0, lnf_g_ = 0, lnf_b_ = 0, w_head_ = 0, b_head_ = 0;
    std::vector<LayerOffsets> layer_offsets_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
    LanguageModel model;
    std::vector<double> epoch_losses;  // mean nats per predicted token
};

/// Adam (beta1 0.9, beta2 0.999), constant learning rate, global gradient-norm
/// clip at 1. Batches are drawn from a per-epoch shuffle seeded by config.seed.
inline TrainResult train(const std::vector<TokenSeq>& corpus, const Vocab& vocab, const LMConfig& config) {
    if (corpus.empty()) {
        throw InputError("training corpus is empty");
    }
    LanguageModel model(config, vocab);
    const auto& cfg = model.config();
    for (const auto& seq : corpus) {
        if (static_cast<int>(seq.size()) > cfg.max_len) {
            throw InputError("training sequence of length " + std::to_string(seq.size()) + " exceeds max_len " +
                             std::to_string(cfg.max_len));
        }
        if (seq.size() < 2) {
            throw InputError("training sequences need at least two tokens");
        }
        for (auto id : seq) {
            if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
                throw InputError("training sequence holds an out-of-range token id");
            }
        }
    }

    auto params = model.parameters();
    std::vector<double> grad(params.size()), m(params.size(), 0.0), v(params.size(), 0.0);
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, clip = 1.0;
    std::uint64_t step = 0;

    Rng rng(derive_seed(cfg.seed, 0x22, 0));
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> epoch_losses;
    std::vector<TokenSeq> batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        std::size_t token_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const auto stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            batch.clear();
            std::size_t tokens = 0;
            for (auto i = start; i < stop; ++i) {
                batch.push_back(corpus[order[i]]);
                tokens += corpus[order[i]].size() - 1;
            }
            const double loss = model.loss_and_gradient(batch, grad);
            loss_sum += loss * static_cast<double>(tokens);
            token_sum += tokens;

            double norm2 = 0.0;
            for (double g : grad) {
                norm2 += g * g;
            }
            const double norm = std::sqrt(norm2);
            const double factor = norm > clip ? clip / norm : 1.0;
            ++step;
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            for (std::size_t i = 0; i < params.size(); ++i) {
                const double g = grad[i] * factor;
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                params[i] -= cfg.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
            }
        }
        epoch_losses.push_back(loss_sum / static_cast<double>(token_sum));
    }
    return TrainResult{std::move(model), std::move(epoch_losses)};
}

inline TokenId argmax(std::span<const double> values) {
    return static_cast<TokenId>(std::max_element(values.begin(), values.end()) - values.begin());
}

/// Extends `prefix` token by token from softmax(logits / T) until EOS, `max_new`
/// new tokens, or max_len. With `greedy`, the argmax token is taken instead.
inline Continuation sample_continuation(const LanguageModel& model, const TokenSeq& prefix, double temperature,
                                        Rng& rng, std::size_t max_new, bool greedy = false) {
    if (!(temperature > 0.0)) {
        throw InputError("temperature must be positive");
    }
    Continuation out{prefix, false};
    const auto max_len = static_cast<std::size_t>(model.config().max_len);
    for (std::size_t n = 0; n < max_new && out.sequence.size() < max_len; ++n) {
        const auto z = model.logits(out.sequence);
        TokenId next = 0;
        if (greedy) {
            next = argmax(z);
        } else {
            const auto p = next_token_dist(z, temperature);
            next = static_cast<TokenId>(rng.categorical(p));
        }
        out.sequence.push_back(next);
        if (next == model.vocab().eos()) {
            out.hit_eos = true;
            break;
        }
    }
    return out;
}

}  // namespace tabsynth
