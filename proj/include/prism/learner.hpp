#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "prism/contrastive.hpp"
#include "prism/linalg.hpp"

namespace prism::learner {

using contrastive::BankEntry;
using contrastive::Channel;
using contrastive::RepresentationBank;
using linalg::Matrix;
using linalg::OrthonormalBasis;

class LearnerError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class ProjectionMode : std::uint8_t { Differential = 0, IndependentPositive = 1 };
enum class WeightScheme : std::uint8_t { Softplus = 0, Uniform = 1, Binary = 2 };

const char* to_string(ProjectionMode m);
const char* to_string(WeightScheme s);
ProjectionMode projection_mode_from_string(const std::string& s);
WeightScheme weight_scheme_from_string(const std::string& s);

struct LearnerConfig {
    double gamma = 0.998;
    double delta_min = 0.08;
    ProjectionMode mode = ProjectionMode::Differential;
    WeightScheme scheme = WeightScheme::Softplus;
    double binary_threshold = 0.12;
    linalg::EnergyDefinition energy = linalg::EnergyDefinition::FirstPower;
    // Softplus only: heads with D < delta_min get a rank-0 basis.
    bool zero_rank_below_delta_min = false;

    void validate() const;
    friend bool operator==(const LearnerConfig&, const LearnerConfig&) = default;
};

struct HeadProjection {
    std::size_t layer = 0;
    std::size_t head = 0;
    Channel channel = Channel::Key;
    OrthonormalBasis basis;
    double discriminability = 0.0;
    double weight = 0.0;

    std::size_t rank() const { return basis.rank(); }
    friend bool operator==(const HeadProjection&, const HeadProjection&) = default;
};

struct SteeringPlan {
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t head_dim = 0;
    std::vector<HeadProjection> key_heads;    // layer-major, n_layers·n_heads
    std::vector<HeadProjection> value_heads;  // empty, or layer-major like key_heads
    double g_k = 0.0;
    double g_v = 0.0;
    LearnerConfig config;
    std::uint64_t fingerprint = 0;

    bool has_values() const { return !value_heads.empty(); }
    const HeadProjection& key_head(std::size_t layer, std::size_t head) const;
    const HeadProjection& value_head(std::size_t layer, std::size_t head) const;
    // Throws LearnerError when coverage, dims, gains or bases are inconsistent.
    void validate() const;

    friend bool operator==(const SteeringPlan&, const SteeringPlan&) = default;
};

// HᵀH′/N
Matrix cross_covariance(const Matrix& h, const Matrix& h_prime);
// Hᵀ(H⁺ − H⁻)/N, single pass.
Matrix differential_cov(const Matrix& h, const Matrix& h_plus, const Matrix& h_minus);
// Ω⁺ − Ω⁻ via two cross-covariances.
Matrix differential_cov_two_pass(const Matrix& h, const Matrix& h_plus, const Matrix& h_minus);

// (1/N) Σ ‖r⁺ᵢ − r⁻ᵢ‖
double discriminability(const Matrix& h_plus, const Matrix& h_minus);
double discriminability(const BankEntry& entry);

// ln(1 + eˣ); x > 30 → x, x < −30 → eˣ.
double softplus(double x);
double head_weight(double d_score, const LearnerConfig& config);

HeadProjection learn_head(const BankEntry& entry, std::size_t layer, std::size_t head, Channel channel,
                          const LearnerConfig& config);

// bank_v may be null (key-only plan); g_v must then be 0.
SteeringPlan learn_plan(const RepresentationBank& bank_k, const RepresentationBank* bank_v,
                        const LearnerConfig& config, double g_k, double g_v, std::uint64_t fingerprint = 0);

}  // namespace prism::learner
