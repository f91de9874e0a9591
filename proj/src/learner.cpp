#include "prism/learner.hpp"

#include <cmath>

namespace prism::learner {

const char* to_string(ProjectionMode m) {
    return m == ProjectionMode::Differential ? "differential" : "independent";
}

const char* to_string(WeightScheme s) {
    switch (s) {
        case WeightScheme::Softplus: return "softplus";
        case WeightScheme::Uniform: return "uniform";
        case WeightScheme::Binary: return "binary";
    }
    return "?";
}

ProjectionMode projection_mode_from_string(const std::string& s) {
    if (s == "differential") return ProjectionMode::Differential;
    if (s == "independent" || s == "independent-positive") return ProjectionMode::IndependentPositive;
    throw LearnerError("unknown projection mode: " + s);
}

WeightScheme weight_scheme_from_string(const std::string& s) {
    if (s == "softplus") return WeightScheme::Softplus;
    if (s == "uniform") return WeightScheme::Uniform;
    if (s == "binary") return WeightScheme::Binary;
    throw LearnerError("unknown weight scheme: " + s);
}

void LearnerConfig::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw LearnerError("gamma must be in (0, 1]");
    if (!std::isfinite(delta_min)) throw LearnerError("delta_min must be finite");
    if (!(binary_threshold >= 0.0) || !std::isfinite(binary_threshold)) {
        throw LearnerError("binary threshold must be finite and >= 0");
    }
}

const HeadProjection& SteeringPlan::key_head(std::size_t layer, std::size_t head) const {
    if (layer >= n_layers || head >= n_heads) throw LearnerError("plan head index out of range");
    return key_heads[layer * n_heads + head];
}

const HeadProjection& SteeringPlan::value_head(std::size_t layer, std::size_t head) const {
    if (!has_values()) throw LearnerError("plan has no value channel");
    if (layer >= n_layers || head >= n_heads) throw LearnerError("plan head index out of range");
    return value_heads[layer * n_heads + head];
}

void SteeringPlan::validate() const {
    if (!std::isfinite(g_k) || !std::isfinite(g_v)) throw LearnerError("plan gains must be finite");
    if (n_layers == 0 || n_heads == 0 || head_dim == 0) throw LearnerError("plan dims must be >= 1");
    if (!has_values() && g_v != 0.0) throw LearnerError("plan has g_V != 0 but no value channel");
    auto check = [&](const std::vector<HeadProjection>& heads, Channel ch) {
        if (heads.size() != n_layers * n_heads) {
            throw LearnerError(std::string("plan ") + contrastive::to_string(ch) + " channel covers " +
                               std::to_string(heads.size()) + " heads, expected " +
                               std::to_string(n_layers * n_heads));
        }
        for (std::size_t i = 0; i < heads.size(); ++i) {
            const auto& hp = heads[i];
            if (hp.layer != i / n_heads || hp.head != i % n_heads || hp.channel != ch) {
                throw LearnerError("plan head record " + std::to_string(i) + " is out of order");
            }
            if (hp.basis.dim() != head_dim) throw LearnerError("plan basis dim mismatch");
            if (!(hp.discriminability >= 0.0) || !std::isfinite(hp.discriminability)) {
                throw LearnerError("plan discriminability must be finite and >= 0");
            }
            if (!(hp.weight >= 0.0) || !std::isfinite(hp.weight)) {
                throw LearnerError("plan weight must be finite and >= 0");
            }
        }
    };
    check(key_heads, Channel::Key);
    if (has_values()) check(value_heads, Channel::Value);
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw LearnerError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                           std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                           std::to_string(b.cols()) + ")");
    }
    if (a.rows() == 0) throw LearnerError(std::string(what) + ": N must be >= 1");
}

}  // namespace

Matrix cross_covariance(const Matrix& h, const Matrix& h_prime) {
    require_same_shape(h, h_prime, "cross_covariance");
    return linalg::scale(linalg::multiply_at_b(h, h_prime), 1.0 / static_cast<double>(h.rows()));
}

Matrix differential_cov(const Matrix& h, const Matrix& h_plus, const Matrix& h_minus) {
    require_same_shape(h, h_plus, "differential_cov");
    require_same_shape(h, h_minus, "differential_cov");
    return cross_covariance(h, linalg::subtract(h_plus, h_minus));
}

Matrix differential_cov_two_pass(const Matrix& h, const Matrix& h_plus, const Matrix& h_minus) {
    require_same_shape(h, h_plus, "differential_cov");
    require_same_shape(h, h_minus, "differential_cov");
    return linalg::subtract(cross_covariance(h, h_plus), cross_covariance(h, h_minus));
}

double discriminability(const Matrix& h_plus, const Matrix& h_minus) {
    require_same_shape(h_plus, h_minus, "discriminability");
    double total = 0.0;
    for (std::size_t i = 0; i < h_plus.rows(); ++i) {
        auto a = h_plus.row(i);
        auto b = h_minus.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
        total += std::sqrt(s);
    }
    return total / static_cast<double>(h_plus.rows());
}

double discriminability(const BankEntry& entry) { return discriminability(entry.h_plus, entry.h_minus); }

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double head_weight(double d_score, const LearnerConfig& config) {
    switch (config.scheme) {
        case WeightScheme::Softplus: return softplus(d_score - config.delta_min);
        case WeightScheme::Uniform: return 1.0;
        case WeightScheme::Binary: return d_score >= config.binary_threshold ? 1.0 : 0.0;
    }
    return 0.0;
}

HeadProjection learn_head(const BankEntry& entry, std::size_t layer, std::size_t head, Channel channel,
                          const LearnerConfig& config) {
    const Matrix omega = config.mode == ProjectionMode::Differential
                             ? differential_cov(entry.h, entry.h_plus, entry.h_minus)
                             : cross_covariance(entry.h, entry.h_plus);
    HeadProjection hp;
    hp.layer = layer;
    hp.head = head;
    hp.channel = channel;
    hp.discriminability = discriminability(entry);
    hp.weight = head_weight(hp.discriminability, config);
    const bool zeroed = config.zero_rank_below_delta_min && config.scheme == WeightScheme::Softplus &&
                        hp.discriminability < config.delta_min;
    hp.basis = zeroed ? OrthonormalBasis(omega.cols())
                      : linalg::build_projection(linalg::svd(omega), config.gamma, config.energy);
    return hp;
}

SteeringPlan learn_plan(const RepresentationBank& bank_k, const RepresentationBank* bank_v,
                        const LearnerConfig& config, double g_k, double g_v, std::uint64_t fingerprint) {
    config.validate();
    if (!std::isfinite(g_k) || !std::isfinite(g_v)) throw LearnerError("gains must be finite");
    if (bank_k.channel != Channel::Key) throw LearnerError("learn_plan: first bank must be a K bank");
    if (bank_v && bank_v->channel != Channel::Value) throw LearnerError("learn_plan: second bank must be a V bank");
    if (!bank_v && g_v != 0.0) throw LearnerError("learn_plan: g_V != 0 needs a V bank");
    auto check_bank = [](const RepresentationBank& b) {
        if (b.entries.size() != b.n_layers * b.n_heads) throw LearnerError("bank entry count does not match its head count");
    };
    check_bank(bank_k);
    if (bank_v) {
        check_bank(*bank_v);
        if (bank_v->n_layers != bank_k.n_layers || bank_v->n_heads != bank_k.n_heads ||
            bank_v->head_dim != bank_k.head_dim || bank_v->n_samples != bank_k.n_samples) {
            throw LearnerError("learn_plan: K and V banks come from different models or triplets");
        }
    }

    SteeringPlan plan;
    plan.n_layers = bank_k.n_layers;
    plan.n_heads = bank_k.n_heads;
    plan.head_dim = bank_k.head_dim;
    plan.g_k = g_k;
    plan.g_v = g_v;
    plan.config = config;
    plan.fingerprint = fingerprint;
    for (std::size_t l = 0; l < bank_k.n_layers; ++l)
        for (std::size_t h = 0; h < bank_k.n_heads; ++h)
            plan.key_heads.push_back(learn_head(bank_k.at(l, h), l, h, Channel::Key, config));
    if (bank_v) {
        for (std::size_t l = 0; l < bank_v->n_layers; ++l)
            for (std::size_t h = 0; h < bank_v->n_heads; ++h)
                plan.value_heads.push_back(learn_head(bank_v->at(l, h), l, h, Channel::Value, config));
    }
    return plan;
}

}  // namespace prism::learner
