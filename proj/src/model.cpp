#include "prism/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "prism/rng.hpp"

namespace prism::model {

void ModelConfig::validate() const {
    if (n_layers == 0 || n_heads == 0 || head_dim == 0 || vocab_size == 0 || max_seq_len == 0) {
        throw ModelError("model config: all counts must be >= 1");
    }
}

const char* to_string(ConstructionMode mode) {
    return mode == ConstructionMode::SeededRandom ? "seeded-random" : "associative-recall";
}

ConstructionMode construction_mode_from_string(const std::string& s) {
    if (s == "seeded-random" || s == "random") return ConstructionMode::SeededRandom;
    if (s == "associative-recall" || s == "assoc") return ConstructionMode::AssociativeRecall;
    throw ModelError("unknown construction mode: " + s);
}

const HeadWeights& ToyModel::head(std::size_t layer, std::size_t head) const {
    if (layer >= config_.n_layers || head >= config_.n_heads) throw ModelError("head index out of range");
    return heads_[layer * config_.n_heads + head];
}

HeadWeights& ToyModel::mutable_head(std::size_t layer, std::size_t head) {
    if (layer >= config_.n_layers || head >= config_.n_heads) throw ModelError("head index out of range");
    return heads_[layer * config_.n_heads + head];
}

namespace {

constexpr std::size_t kOffsetHeads = 4;

// Smallest odd period that exceeds every causal offset within max_seq_len.
std::size_t position_period(std::size_t max_seq_len) {
    std::size_t m = max_seq_len + 1;
    return m % 2 == 1 ? m : m + 1;
}

Matrix gaussian(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (double& x : m.data()) x = rng.normal() * stddev;
    return m;
}

struct AssocLayout {
    std::size_t code;    // code dimension c
    std::size_t period;  // M, also the number of position dims
    std::size_t tok() const { return 0; }
    std::size_t pe() const { return code; }
    std::size_t slot(std::size_t offset) const { return code + period + (offset - 1) * code; }
    std::size_t out() const { return code + period + kOffsetHeads * code; }
    std::size_t width() const { return out() + code; }
};

void build_seeded_random(const ModelConfig& cfg, std::vector<HeadWeights>& heads,
                         Matrix& embedding, Matrix& positions, Matrix& unembedding) {
    const std::size_t dm = cfg.model_dim();
    const double sd = 1.0 / std::sqrt(static_cast<double>(dm));
    Rng rng(cfg.seed);
    embedding = gaussian(rng, cfg.vocab_size, dm, sd);
    heads.clear();
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            HeadWeights w;
            w.wq = gaussian(rng, cfg.head_dim, dm, sd);
            w.wk = gaussian(rng, cfg.head_dim, dm, sd);
            w.wv = gaussian(rng, cfg.head_dim, dm, sd);
            w.wo = gaussian(rng, dm, cfg.head_dim, sd);
            heads.push_back(std::move(w));
        }
    }
    unembedding = gaussian(rng, cfg.vocab_size, dm, sd);
    positions = Matrix(cfg.max_seq_len, dm);
    for (std::size_t p = 0; p < cfg.max_seq_len; ++p) {
        for (std::size_t i = 0; i < dm; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dm));
            positions(p, i) = std::sin(static_cast<double>(p) * freq);
            if (i + 1 < dm) positions(p, i + 1) = std::cos(static_cast<double>(p) * freq);
        }
    }
}

void build_associative(const ModelConfig& cfg, const Vocabulary& vocab, const AssociativeParams& params,
                       std::vector<HeadWeights>& heads, Matrix& embedding, Matrix& positions,
                       Matrix& unembedding, std::vector<double>& bias) {
    const std::size_t c = params.code_dim;
    const AssocLayout lay{c, position_period(cfg.max_seq_len)};
    const std::size_t d = cfg.head_dim;
    const std::size_t dm = cfg.model_dim();
    if (cfg.n_layers != 2) throw ModelError("associative-recall construction needs exactly 2 layers");
    if (cfg.n_heads < kOffsetHeads) throw ModelError("associative-recall construction needs >= 4 heads");
    if (c == 0) throw ModelError("associative-recall code_dim must be >= 1");
    if (d < lay.period || d < 2 * c) {
        throw ModelError("associative-recall head_dim must be >= " + std::to_string(std::max(lay.period, 2 * c)));
    }
    if (dm < lay.width()) {
        throw ModelError("associative-recall model_dim must be >= " + std::to_string(lay.width()));
    }
    if (cfg.vocab_size != vocab.size()) {
        throw ModelError("vocab_size " + std::to_string(cfg.vocab_size) + " does not match vocabulary size " +
                         std::to_string(vocab.size()));
    }

    // Unit-norm random codes, one per token.
    Rng rng(cfg.seed);
    Matrix codes(vocab.size(), c);
    for (std::size_t t = 0; t < vocab.size(); ++t) {
        auto row = codes.row(t);
        for (double& x : row) x = rng.normal();
        const double n = linalg::norm(row);
        for (double& x : row) x /= n;
    }

    embedding = Matrix(vocab.size(), dm);
    for (std::size_t t = 0; t < vocab.size(); ++t)
        for (std::size_t r = 0; r < c; ++r) embedding(t, lay.tok() + r) = codes(t, r);

    // Position codes with frequencies 2πf/M, f = 0..(M-1)/2: PE(i)·PE(j) is
    // (M+1)/2 when i ≡ j (mod M) and exactly 1/2 otherwise.
    const std::size_t M = lay.period;
    const std::size_t F = (M + 1) / 2;
    auto omega = [M](std::size_t f) { return 2.0 * std::numbers::pi * static_cast<double>(f) / static_cast<double>(M); };
    positions = Matrix(cfg.max_seq_len, dm);
    for (std::size_t p = 0; p < cfg.max_seq_len; ++p) {
        positions(p, lay.pe()) = 1.0;
        for (std::size_t f = 1; f < F; ++f) {
            positions(p, lay.pe() + 2 * f - 1) = std::cos(omega(f) * static_cast<double>(p));
            positions(p, lay.pe() + 2 * f) = std::sin(omega(f) * static_cast<double>(p));
        }
    }

    heads.assign(cfg.n_layers * cfg.n_heads, HeadWeights{Matrix(d, dm), Matrix(d, dm), Matrix(d, dm), Matrix(dm, d)});
    const double sqrt_d = std::sqrt(static_cast<double>(d));

    for (std::size_t off = 1; off <= kOffsetHeads; ++off) {
        HeadWeights& w = heads[off - 1];
        const double s = params.offset_sharpness * sqrt_d;
        // Query rotates PE(i) into PE(i - off); key is PE(j).
        w.wq(0, lay.pe()) = s;
        for (std::size_t f = 1; f < F; ++f) {
            const double co = std::cos(omega(f) * static_cast<double>(off));
            const double si = std::sin(omega(f) * static_cast<double>(off));
            const std::size_t rc = 2 * f - 1;
            const std::size_t rs = 2 * f;
            w.wq(rc, lay.pe() + rc) = s * co;
            w.wq(rc, lay.pe() + rs) = s * si;
            w.wq(rs, lay.pe() + rc) = -s * si;
            w.wq(rs, lay.pe() + rs) = s * co;
        }
        for (std::size_t r = 0; r < M; ++r) w.wk(r, lay.pe() + r) = 1.0;
        for (std::size_t r = 0; r < c; ++r) {
            w.wv(r, lay.tok() + r) = 1.0;
            w.wo(lay.slot(off) + r, r) = 1.0;
        }
    }

    HeadWeights& ret = heads[cfg.n_heads];  // layer 1, head 0
    const double s2 = params.retrieval_scale * sqrt_d;
    for (std::size_t r = 0; r < c; ++r) {
        // Final question token: subject one back, entity three back.
        ret.wq(r, lay.slot(1) + r) = s2;
        ret.wq(c + r, lay.slot(3) + r) = s2;
        // Value token: subject two back, entity four back.
        ret.wk(r, lay.slot(2) + r) = 1.0;
        ret.wk(c + r, lay.slot(4) + r) = 1.0;
        ret.wk(r, lay.slot(1) + r) += params.key_mix;
        ret.wk(c + r, lay.slot(3) + r) += params.key_mix;
        ret.wv(r, lay.tok() + r) = 1.0;
        ret.wo(lay.out() + r, r) = 1.0;
    }

    unembedding = Matrix(vocab.size(), dm);
    bias.assign(vocab.size(), params.non_value_bias);
    for (std::size_t t = 0; t < vocab.size(); ++t) {
        if (vocab.kind(static_cast<TokenId>(t)) != TokenKind::Value) continue;
        bias[t] = 0.0;
        for (std::size_t r = 0; r < c; ++r) unembedding(t, lay.out() + r) = params.readout_scale * codes(t, r);
    }
}

void layer_norm_rows(const Matrix& x, Matrix& out) {
    out = Matrix(x.rows(), x.cols());
    const double n = static_cast<double>(x.cols());
    for (std::size_t t = 0; t < x.rows(); ++t) {
        auto src = x.row(t);
        auto dst = out.row(t);
        double mean = 0.0;
        for (double v : src) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : src) var += (v - mean) * (v - mean);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (src[i] - mean) * inv;
    }
}

// out (T×rows(w)) = x · wᵀ, skipping all-zero rows of w.
Matrix project_rows(const Matrix& x, const Matrix& w) {
    Matrix out(x.rows(), w.rows());
    for (std::size_t r = 0; r < w.rows(); ++r) {
        auto wr = w.row(r);
        std::size_t lo = 0;
        while (lo < wr.size() && wr[lo] == 0.0) ++lo;
        if (lo == wr.size()) continue;
        std::size_t hi = wr.size();
        while (hi > lo && wr[hi - 1] == 0.0) --hi;
        for (std::size_t t = 0; t < x.rows(); ++t) {
            auto xr = x.row(t);
            double s = 0.0;
            for (std::size_t i = lo; i < hi; ++i) s += wr[i] * xr[i];
            out(t, r) = s;
        }
    }
    return out;
}

}  // namespace

ToyModel init_model(const ModelConfig& config, ConstructionMode mode, const Vocabulary& vocab,
                    const AssociativeParams& params) {
    config.validate();
    ToyModel m;
    m.config_ = config;
    m.mode_ = mode;
    if (mode == ConstructionMode::SeededRandom) {
        build_seeded_random(config, m.heads_, m.embedding_, m.positions_, m.unembedding_);
        m.unembedding_bias_.assign(config.vocab_size, 0.0);
    } else {
        build_associative(config, vocab, params, m.heads_, m.embedding_, m.positions_, m.unembedding_,
                          m.unembedding_bias_);
        m.retrieval_head_ = HeadSite{1, 0};
    }
    return m;
}

ModelConfig associative_config(const Vocabulary& vocab, std::uint64_t seed, std::size_t max_seq_len) {
    const AssociativeParams params;
    const AssocLayout lay{params.code_dim, position_period(max_seq_len)};
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = kOffsetHeads;
    std::size_t d = std::max(lay.period, 2 * params.code_dim);
    d = (d + 7) / 8 * 8;
    while (cfg.n_heads * d < lay.width()) d += 8;
    cfg.head_dim = d;
    cfg.vocab_size = vocab.size();
    cfg.max_seq_len = max_seq_len;
    cfg.seed = seed;
    return cfg;
}

HighlightMask::HighlightMask(std::vector<std::size_t> positions) : positions_(std::move(positions)) {
    std::sort(positions_.begin(), positions_.end());
    positions_.erase(std::unique(positions_.begin(), positions_.end()), positions_.end());
}

bool HighlightMask::contains(std::size_t pos) const {
    return std::binary_search(positions_.begin(), positions_.end(), pos);
}

void HighlightMask::validate(std::size_t prompt_len) const {
    if (!positions_.empty() && positions_.back() >= prompt_len) {
        throw ModelError("highlight position " + std::to_string(positions_.back()) +
                         " is outside the prompt (length " + std::to_string(prompt_len) + ")");
    }
}

const HeadTrace& AttentionTrace::at(std::size_t layer, std::size_t head) const {
    if (layer >= n_layers || head >= n_heads) throw ModelError("trace head index out of range");
    return heads[layer * n_heads + head];
}

ForwardResult forward(const ToyModel& model, std::span<const TokenId> tokens, const KvHook* hook,
                      const ForwardOptions& options) {
    const ModelConfig& cfg = model.config();
    const std::size_t T = tokens.size();
    if (T == 0) throw ModelError("forward: empty token sequence");
    if (T > cfg.max_seq_len) {
        throw ModelError("forward: sequence length " + std::to_string(T) + " exceeds max_seq_len " +
                         std::to_string(cfg.max_seq_len));
    }
    for (TokenId t : tokens) {
        if (t >= cfg.vocab_size) throw ModelError("forward: token id " + std::to_string(t) + " out of vocabulary");
    }
    if (hook) hook->mask().validate(T);

    const std::size_t dm = cfg.model_dim();
    const std::size_t d = cfg.head_dim;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    Matrix x(T, dm);
    for (std::size_t t = 0; t < T; ++t) {
        auto dst = x.row(t);
        auto e = model.embedding().row(tokens[t]);
        auto p = model.positions().row(t);
        for (std::size_t i = 0; i < dm; ++i) dst[i] = e[i] + p[i];
    }

    ForwardResult result;
    AttentionTrace& trace = result.trace;
    trace.n_layers = cfg.n_layers;
    trace.n_heads = cfg.n_heads;
    trace.seq_len = T;
    if (options.record_trace) trace.heads.resize(cfg.n_layers * cfg.n_heads);

    Matrix normed;
    std::vector<double> scores(T);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const Matrix* h = &x;
        if (model.layer_norm()) {
            layer_norm_rows(x, normed);
            h = &normed;
        }
        Matrix layer_out(T, dm);
        for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
            const HeadWeights& w = model.head(l, hd);
            Matrix q = project_rows(*h, w.wq);
            Matrix k = project_rows(*h, w.wk);
            Matrix v = project_rows(*h, w.wv);
            HeadTrace* ht = options.record_trace ? &trace.heads[l * cfg.n_heads + hd] : nullptr;
            if (ht) {
                ht->keys_raw = k;
                ht->values_raw = v;
            }
            if (hook) {
                for (std::size_t p : hook->mask().positions()) {
                    hook->edit_key(l, hd, k.row(p));
                    hook->edit_value(l, hd, v.row(p));
                }
            }
            Matrix alpha(T, T);
            Matrix out(T, d);
            for (std::size_t i = 0; i < T; ++i) {
                double mx = -INFINITY;
                for (std::size_t j = 0; j <= i; ++j) {
                    scores[j] = linalg::dot(q.row(i), k.row(j)) * inv_sqrt_d;
                    mx = std::max(mx, scores[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    scores[j] = std::exp(scores[j] - mx);
                    z += scores[j];
                }
                auto oi = out.row(i);
                for (std::size_t j = 0; j <= i; ++j) {
                    const double a = scores[j] / z;
                    alpha(i, j) = a;
                    auto vj = v.row(j);
                    for (std::size_t r = 0; r < d; ++r) oi[r] += a * vj[r];
                }
            }
            Matrix contrib = project_rows(out, w.wo);
            for (std::size_t i = 0; i < T; ++i) {
                auto dst = layer_out.row(i);
                auto src = contrib.row(i);
                for (std::size_t m = 0; m < dm; ++m) dst[m] += src[m];
            }
            if (ht) {
                ht->alpha = std::move(alpha);
                ht->keys = std::move(k);
                ht->values = std::move(v);
                ht->outputs = std::move(out);
            }
        }
        for (std::size_t i = 0; i < T; ++i) {
            auto dst = x.row(i);
            auto src = layer_out.row(i);
            for (std::size_t m = 0; m < dm; ++m) dst[m] += src[m];
        }
    }

    const Matrix* final_h = &x;
    if (model.layer_norm()) {
        layer_norm_rows(x, normed);
        final_h = &normed;
    }
    result.logits = project_rows(*final_h, model.unembedding());
    const auto& bias = model.unembedding_bias();
    for (std::size_t t = 0; t < T; ++t) {
        auto row = result.logits.row(t);
        for (std::size_t v = 0; v < row.size(); ++v) row[v] += bias[v];
    }
    result.hidden = std::move(x);
    return result;
}

std::vector<double> log_softmax(std::span<const double> logits) {
    double mx = -INFINITY;
    for (double x : logits) mx = std::max(mx, x);
    double z = 0.0;
    for (double x : logits) z += std::exp(x - mx);
    const double lz = mx + std::log(z);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
    return out;
}

Generation greedy_generate(const ToyModel& model, std::span<const TokenId> prompt, std::size_t max_new,
                           const KvHook* hook) {
    if (prompt.empty()) throw ModelError("greedy_generate: empty prompt");
    if (hook) hook->mask().validate(prompt.size());
    Generation gen;
    std::vector<TokenId> seq(prompt.begin(), prompt.end());
    const ForwardOptions no_trace{false};
    for (std::size_t step = 0; step < max_new; ++step) {
        if (seq.size() >= model.config().max_seq_len) break;
        ForwardResult fr = forward(model, seq, hook, no_trace);
        auto last = fr.logits.row(seq.size() - 1);
        std::size_t best = 0;
        for (std::size_t v = 1; v < last.size(); ++v)
            if (last[v] > last[best]) best = v;
        const auto lp = log_softmax(last);
        gen.tokens.push_back(static_cast<TokenId>(best));
        gen.logprobs.push_back(lp[best]);
        seq.push_back(static_cast<TokenId>(best));
    }
    return gen;
}

GainDecomposition decompose_gains(const AttentionTrace& base, const AttentionTrace& steered, std::size_t layer,
                                  std::size_t head) {
    if (base.seq_len != steered.seq_len) throw ModelError("decompose_gains: sequence lengths differ");
    if (base.n_layers != steered.n_layers || base.n_heads != steered.n_heads) {
        throw ModelError("decompose_gains: traces come from different model shapes");
    }
    if (base.heads.empty() || steered.heads.empty()) throw ModelError("decompose_gains: trace was not recorded");
    const HeadTrace& b = base.at(layer, head);
    const HeadTrace& s = steered.at(layer, head);
    const std::size_t T = base.seq_len;
    const std::size_t d = b.values.cols();

    GainDecomposition g{Matrix(T, d), Matrix(T, d), Matrix(T, d), linalg::subtract(s.outputs, b.outputs)};
    for (std::size_t i = 0; i < T; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            const double a = b.alpha(i, j);
            const double da = s.alpha(i, j) - a;
            auto v = b.values.row(j);
            auto vs = s.values.row(j);
            for (std::size_t r = 0; r < d; ++r) {
                const double dv = vs[r] - v[r];
                g.routing(i, r) += da * v[r];
                g.content(i, r) += a * dv;
                g.cross(i, r) += da * dv;
            }
        }
    }
    return g;
}

}  // namespace prism::model
