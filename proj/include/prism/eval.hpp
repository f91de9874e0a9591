#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prism/csv.hpp"
#include "prism/learner.hpp"
#include "prism/model.hpp"
#include "prism/vocab.hpp"

namespace prism::eval {

using learner::LearnerConfig;
using learner::SteeringPlan;
using model::HighlightMask;
using model::ToyModel;

class EvalError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// ---- retrieval battery ----

inline constexpr std::size_t kPassageTokens = 7;  // "the E of S is V ."

struct RetrievalTask {
    std::vector<TokenId> prompt;      // passages followed by the question
    std::vector<TokenId> paraphrase;  // same passages followed by the cloze form
    std::size_t n_passages = 0;
    std::size_t gold = 0;             // passage index holding the answer
    std::size_t band_first = 0;       // highlighted passage range, inclusive
    std::size_t band_last = 0;
    HighlightMask highlight;          // token positions of the band
    TokenId answer = 0;
    std::vector<TokenId> distractor_values;  // values of the other passages

    std::size_t gold_begin() const { return gold * kPassageTokens; }
    std::size_t gold_end() const { return gold_begin() + kPassageTokens; }
};

// Middle band: round(4n/30) passages stay unhighlighted on each side. Never empty.
std::pair<std::size_t, std::size_t> default_band(std::size_t n_passages);

// n_tasks passage sets; each is emitted once per gold position, in
// (task, gold position) order. For a given set, every gold position sees the
// same distractor facts in the same relative order.
std::vector<RetrievalTask> build_retrieval_tasks(std::uint64_t seed, std::size_t n_tasks, std::size_t n_passages,
                                                 std::span<const std::size_t> gold_positions,
                                                 const Vocabulary& vocab = Vocabulary::standard());

// ---- metrics ----

double fluency(std::span<const double> logprobs);
double consistency(std::span<const double> gen_hidden_mean, std::span<const double> ctx_hidden_mean);
int efficacy(double p_target, double p_original);
double mean(std::span<const double> xs);
double median(std::vector<double> xs);

enum class PronounSet { Basic, Extended };
const std::vector<std::string>& pronouns(PronounSet set);

// ((n − r)/n) × multiset content overlap. nullopt when the original has no
// pronoun from the set (the sample is skipped, not scored).
std::optional<double> pronoun_score(std::span<const std::string> original, std::span<const std::string> generated,
                                    PronounSet set);

struct PronounBatch {
    double p_score = 0.0;             // basic set
    double all_changed_p_score = 0.0; // extended set
    std::size_t scored = 0;
    std::size_t skipped = 0;
};
PronounBatch pronoun_batch(std::span<const std::pair<std::vector<std::string>, std::vector<std::string>>> samples);

// One-sided sign test, H1: successes more likely. Ties must be dropped by the
// caller. Returns P(X ≥ wins) for X ~ Bin(wins + losses, 1/2).
double sign_test_p(std::size_t wins, std::size_t losses);

struct MetricsReport {
    std::size_t n_tasks = 0;
    std::optional<double> exact_match;
    std::optional<double> fluency;
    std::optional<double> consistency;
    std::optional<double> efficacy;
    std::optional<double> paraphrase;
    std::optional<double> p_score;
    std::optional<double> all_changed_p_score;
    std::optional<double> gold_attention;  // retrieval-head mass on the gold passage

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

struct EvalOptions {
    std::size_t max_new_tokens = 1;
};

struct TaskOutcome {
    bool correct = false;
    std::vector<TokenId> generated;
    std::optional<double> fluency;  // empty when nothing was generated
    std::optional<double> consistency;
    int efficacy = 0;
    int paraphrase = 0;
    double gold_attention = 0.0;
};

// plan == nullptr evaluates the unsteered model.
TaskOutcome evaluate_task(const ToyModel& model, const SteeringPlan* plan, const RetrievalTask& task,
                          const EvalOptions& options = {});
MetricsReport evaluate(const ToyModel& model, const SteeringPlan* plan, std::span<const RetrievalTask> tasks,
                       const EvalOptions& options = {});
double exact_match(const ToyModel& model, const SteeringPlan* plan, std::span<const RetrievalTask> tasks,
                   const EvalOptions& options = {});

std::vector<std::string> metrics_header();
std::vector<std::string> metrics_cells(const MetricsReport& r);

// ---- ablation and sweeps ----

struct Banks {
    const contrastive::RepresentationBank* keys = nullptr;
    const contrastive::RepresentationBank* values = nullptr;  // optional
};

struct AblationRow {
    std::string name;
    std::optional<SteeringPlan> plan;  // empty for vanilla
    MetricsReport metrics;
};

// Six rows: the 2×2 {differential, independent} × {softplus, uniform} grid,
// the independent + binary baseline, and vanilla. All share the banks.
std::vector<AblationRow> ablation_matrix(const ToyModel& model, const Banks& banks, const LearnerConfig& base,
                                         double g_k, double g_v, std::span<const RetrievalTask> tasks,
                                         std::uint64_t fingerprint = 0, const EvalOptions& options = {});
csv::Table ablation_table(std::span<const AblationRow> rows);

enum class SweepParam { GainK, GainV, DeltaMin, Gamma };
const char* to_string(SweepParam p);
SweepParam sweep_param_from_string(const std::string& s);

struct SweepRow {
    double value = 0.0;
    SteeringPlan plan;
    MetricsReport metrics;
};

std::vector<SweepRow> sweep(const ToyModel& model, const Banks& banks, std::span<const RetrievalTask> tasks,
                            SweepParam param, std::span<const double> grid, const LearnerConfig& base, double g_k,
                            double g_v, std::uint64_t fingerprint = 0, const EvalOptions& options = {});
csv::Table sweep_table(SweepParam param, std::span<const SweepRow> rows);

// ---- inspection reports ----

struct HeadDirection {
    std::size_t layer = 0;
    std::size_t head = 0;
    std::vector<double> direction;  // unit vector
};

// Top left singular vector of every head with rank ≥ 1.
std::vector<HeadDirection> top_directions(const SteeringPlan& plan, contrastive::Channel channel);

inline constexpr double kReportedRandomBaseline128 = 0.079;

struct DirectionReport {
    std::size_t n_directions = 0;
    std::size_t dim = 0;
    std::optional<double> adjacent_layer;  // cross pairs between layers l and l+1, averaged over l
    std::optional<double> within_layer;    // averaged over layers with ≥ 2 directions
    std::optional<double> global;
    double random_baseline = 0.0;          // Monte Carlo at the same dim
    double analytic_baseline = 0.0;        // √(2/(πd)), a large-d approximation
    std::size_t baseline_pairs = 0;
};

// Mean |cos| between pairs of independent uniform unit vectors in R^dim.
double random_abs_cosine(std::size_t dim, std::size_t n_pairs, std::uint64_t seed);

DirectionReport direction_report(std::span<const HeadDirection> directions, std::uint64_t seed = 0,
                                 std::size_t baseline_pairs = 100000);
csv::Table direction_table(const DirectionReport& r);

struct ChannelSummary {
    contrastive::Channel channel = contrastive::Channel::Key;
    std::size_t n_heads = 0;
    double active_fraction = 0.0;  // D ≥ delta_min
    std::size_t rank_min = 0;
    std::size_t rank_max = 0;
    double rank_mean = 0.0;
    double rank_median = 0.0;
    double weight_min = 0.0;
    double weight_max = 0.0;
};

struct WeightRankReport {
    csv::Table heads{{"layer", "head", "channel", "D", "w", "k"}};
    std::vector<ChannelSummary> summary;
};

WeightRankReport weight_rank_report(const SteeringPlan& plan);
csv::Table summary_table(std::span<const ChannelSummary> summary);

// Per-head routing/content/cross split of the steered output change for one prompt.
csv::Table gain_report(const ToyModel& model, const SteeringPlan& plan, std::span<const TokenId> tokens,
                       const HighlightMask& mask);

}  // namespace prism::eval
