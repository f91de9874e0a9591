#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "prism/linalg.hpp"
#include "prism/vocab.hpp"

namespace prism::model {

using linalg::Matrix;

class ModelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t head_dim = 72;
    std::size_t vocab_size = 0;
    std::size_t max_seq_len = 64;
    std::uint64_t seed = 0;

    std::size_t model_dim() const { return n_heads * head_dim; }
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ConstructionMode { SeededRandom, AssociativeRecall };

const char* to_string(ConstructionMode mode);
ConstructionMode construction_mode_from_string(const std::string& s);

// Knobs of the hand-wired retrieval circuit.
struct AssociativeParams {
    std::size_t code_dim = 16;     // dimension of the random token codes
    double offset_sharpness = 1.0; // per-unit score margin of the offset heads
    double retrieval_scale = 1.3;  // score of a single matching slot
    double key_mix = 0.25;         // weight of the query-side slots in retrieval keys
    double readout_scale = 8.0;    // value-code logit scale
    double non_value_bias = -20.0; // logit bias for non-value tokens

    friend bool operator==(const AssociativeParams&, const AssociativeParams&) = default;
};

struct HeadSite {
    std::size_t layer = 0;
    std::size_t head = 0;
    friend bool operator==(const HeadSite&, const HeadSite&) = default;
};

struct HeadWeights {
    Matrix wq;  // head_dim × model_dim
    Matrix wk;
    Matrix wv;
    Matrix wo;  // model_dim × head_dim
    friend bool operator==(const HeadWeights&, const HeadWeights&) = default;
};

class ToyModel {
public:
    const ModelConfig& config() const { return config_; }
    ConstructionMode mode() const { return mode_; }
    bool layer_norm() const { return mode_ == ConstructionMode::SeededRandom; }

    const HeadWeights& head(std::size_t layer, std::size_t head) const;
    // Weight surgery for experiments; the model is otherwise treated as immutable.
    HeadWeights& mutable_head(std::size_t layer, std::size_t head);

    const Matrix& embedding() const { return embedding_; }      // vocab × model_dim
    const Matrix& positions() const { return positions_; }      // max_seq_len × model_dim
    const Matrix& unembedding() const { return unembedding_; }  // vocab × model_dim
    const std::vector<double>& unembedding_bias() const { return unembedding_bias_; }

    // The head that carries query→value retrieval, when the construction has one.
    std::optional<HeadSite> retrieval_head() const { return retrieval_head_; }

    friend bool operator==(const ToyModel&, const ToyModel&) = default;

private:
    friend ToyModel init_model(const ModelConfig&, ConstructionMode, const Vocabulary&,
                               const AssociativeParams&);

    ModelConfig config_;
    ConstructionMode mode_ = ConstructionMode::SeededRandom;
    std::vector<HeadWeights> heads_;  // layer-major
    Matrix embedding_;
    Matrix positions_;
    Matrix unembedding_;
    std::vector<double> unembedding_bias_;
    std::optional<HeadSite> retrieval_head_;
};

// seeded-random: every weight ~ N(0, 1/model_dim), standard sinusoidal
// positions, layer norm before attention and before the readout.
// associative-recall: a 2-layer circuit. Layer 0 heads 0..3 copy the token at
// offsets 1..4 into dedicated residual slots; layer 1 head 0 matches the
// (subject, entity) slots of the final question token against those of each
// value token and copies the value's code to the readout.
ToyModel init_model(const ModelConfig& config, ConstructionMode mode,
                    const Vocabulary& vocab = Vocabulary::standard(),
                    const AssociativeParams& params = {});

// Config sized for the associative-recall construction over `vocab`.
ModelConfig associative_config(const Vocabulary& vocab, std::uint64_t seed = 0,
                               std::size_t max_seq_len = 64);

class HighlightMask {
public:
    HighlightMask() = default;
    explicit HighlightMask(std::vector<std::size_t> positions);  // sorted + deduplicated

    const std::vector<std::size_t>& positions() const { return positions_; }
    bool empty() const { return positions_.empty(); }
    bool contains(std::size_t pos) const;
    // Throws unless every position is < prompt_len.
    void validate(std::size_t prompt_len) const;

private:
    std::vector<std::size_t> positions_;
};

// Pre-attention edit of K/V rows. forward() calls edit_key/edit_value once per
// (layer, head, masked position), after K/V are computed and before scores.
class KvHook {
public:
    virtual ~KvHook() = default;
    virtual const HighlightMask& mask() const = 0;
    virtual void edit_key(std::size_t layer, std::size_t head, std::span<double> key) const = 0;
    virtual void edit_value(std::size_t layer, std::size_t head, std::span<double> value) const = 0;
};

struct HeadTrace {
    Matrix alpha;        // T×T, causal
    Matrix keys;         // T×d, post-hook
    Matrix values;       // T×d, post-hook
    Matrix keys_raw;     // T×d, pre-hook
    Matrix values_raw;   // T×d, pre-hook
    Matrix outputs;      // T×d, Σ_j α_ij v_j
};

struct AttentionTrace {
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t seq_len = 0;
    std::vector<HeadTrace> heads;  // layer-major

    const HeadTrace& at(std::size_t layer, std::size_t head) const;
};

struct ForwardResult {
    Matrix hidden;  // T×model_dim, final residual stream
    Matrix logits;  // T×vocab
    AttentionTrace trace;
};

struct ForwardOptions {
    bool record_trace = true;
};

ForwardResult forward(const ToyModel& model, std::span<const TokenId> tokens,
                      const KvHook* hook = nullptr, const ForwardOptions& options = {});

struct Generation {
    std::vector<TokenId> tokens;
    std::vector<double> logprobs;
};

// Greedy argmax decoding (ties → lowest id). The hook edits prompt positions
// only; generated tokens are never steered.
Generation greedy_generate(const ToyModel& model, std::span<const TokenId> prompt,
                           std::size_t max_new, const KvHook* hook = nullptr);

std::vector<double> log_softmax(std::span<const double> logits);

struct GainDecomposition {
    Matrix routing;      // Σ_j Δα_ij v_j
    Matrix content;      // Σ_j α_ij Δv_j
    Matrix cross;        // Σ_j Δα_ij Δv_j
    Matrix total_delta;  // steered output − base output
};

GainDecomposition decompose_gains(const AttentionTrace& base, const AttentionTrace& steered,
                                  std::size_t layer, std::size_t head);

}  // namespace prism::model
