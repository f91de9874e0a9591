#include "prism/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "prism/rng.hpp"
#include "prism/steering.hpp"

namespace prism::eval {

using csv::format_double;

// ---- retrieval battery ----

std::pair<std::size_t, std::size_t> default_band(std::size_t n_passages) {
    if (n_passages == 0) throw EvalError("default_band: n_passages must be >= 1");
    std::size_t margin = static_cast<std::size_t>(std::lround(4.0 * static_cast<double>(n_passages) / 30.0));
    if (2 * margin >= n_passages) margin = (n_passages - 1) / 2;
    return {margin, n_passages - 1 - margin};
}

std::vector<RetrievalTask> build_retrieval_tasks(std::uint64_t seed, std::size_t n_tasks, std::size_t n_passages,
                                                 std::span<const std::size_t> gold_positions,
                                                 const Vocabulary& vocab) {
    if (n_passages < 2) throw EvalError("retrieval tasks need >= 2 passages");
    const VocabSpec& spec = vocab.spec();
    if (spec.n_subjects < n_passages || spec.n_values < n_passages) {
        throw EvalError("vocabulary too small for " + std::to_string(n_passages) +
                        " passages with distinct subjects and values");
    }
    for (std::size_t g : gold_positions) {
        if (g >= n_passages) {
            throw EvalError("gold position " + std::to_string(g) + " is outside " + std::to_string(n_passages) +
                            " passages");
        }
    }
    const auto [band_first, band_last] = default_band(n_passages);
    std::vector<std::size_t> band_tokens;
    for (std::size_t p = band_first; p <= band_last; ++p)
        for (std::size_t t = 0; t < kPassageTokens; ++t) band_tokens.push_back(p * kPassageTokens + t);
    const HighlightMask band(band_tokens);

    auto draw_distinct = [](Rng& rng, std::size_t n, std::size_t k) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.below(n - i))]);
        idx.resize(k);
        return idx;
    };

    Rng rng(seed);
    std::vector<RetrievalTask> out;
    for (std::size_t t = 0; t < n_tasks; ++t) {
        // Fact 0 is the gold fact; 1..n-1 are the distractors in fixed order.
        const auto subjects = draw_distinct(rng, spec.n_subjects, n_passages);
        const auto values = draw_distinct(rng, spec.n_values, n_passages);
        std::vector<std::vector<TokenId>> facts;
        std::vector<TokenId> entities;
        for (std::size_t i = 0; i < n_passages; ++i) {
            const TokenId e = vocab.entity(static_cast<std::size_t>(rng.below(spec.n_entities)));
            entities.push_back(e);
            facts.push_back(vocab.fact(e, vocab.subject(subjects[i]), vocab.value(values[i])));
        }
        const auto question = vocab.question(entities[0], vocab.subject(subjects[0]));
        const auto cloze = vocab.cloze(entities[0], vocab.subject(subjects[0]));
        for (std::size_t g : gold_positions) {
            RetrievalTask task;
            task.n_passages = n_passages;
            task.gold = g;
            task.band_first = band_first;
            task.band_last = band_last;
            task.highlight = band;
            task.answer = vocab.value(values[0]);
            std::size_t next_distractor = 1;
            for (std::size_t p = 0; p < n_passages; ++p) {
                const std::size_t src = p == g ? 0 : next_distractor++;
                task.prompt.insert(task.prompt.end(), facts[src].begin(), facts[src].end());
                if (src != 0) task.distractor_values.push_back(vocab.value(values[src]));
            }
            task.paraphrase = task.prompt;
            task.prompt.insert(task.prompt.end(), question.begin(), question.end());
            task.paraphrase.insert(task.paraphrase.end(), cloze.begin(), cloze.end());
            out.push_back(std::move(task));
        }
    }
    return out;
}

// ---- metrics ----

double fluency(std::span<const double> logprobs) {
    if (logprobs.empty()) throw EvalError("fluency: empty generation");
    return mean(logprobs);
}

double consistency(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw EvalError("consistency: dimension mismatch");
    const double na = linalg::norm(a);
    const double nb = linalg::norm(b);
    if (na == 0.0 || nb == 0.0) throw EvalError("consistency: zero vector");
    return linalg::dot(a, b) / (na * nb);
}

int efficacy(double p_target, double p_original) { return p_target > p_original ? 1 : 0; }

double mean(std::span<const double> xs) {
    if (xs.empty()) throw EvalError("mean of an empty list");
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double median(std::vector<double> xs) {
    if (xs.empty()) throw EvalError("median of an empty list");
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

const std::vector<std::string>& pronouns(PronounSet set) {
    static const std::vector<std::string> basic = {"she", "he"};
    static const std::vector<std::string> extended = {"she", "he", "her", "him", "hers", "his", "herself", "himself"};
    return set == PronounSet::Basic ? basic : extended;
}

std::optional<double> pronoun_score(std::span<const std::string> original, std::span<const std::string> generated,
                                    PronounSet set) {
    const auto& ps = pronouns(set);
    auto is_pronoun = [&ps](const std::string& w) { return std::find(ps.begin(), ps.end(), w) != ps.end(); };
    std::size_t n = 0;
    std::map<std::string, std::size_t> content_orig;
    std::size_t content_total = 0;
    for (const auto& w : original) {
        if (is_pronoun(w)) {
            ++n;
        } else {
            ++content_orig[w];
            ++content_total;
        }
    }
    if (n == 0) return std::nullopt;
    std::size_t r = 0;
    std::map<std::string, std::size_t> content_gen;
    for (const auto& w : generated) {
        if (is_pronoun(w)) {
            ++r;
        } else {
            ++content_gen[w];
        }
    }
    double overlap = 1.0;
    if (content_total > 0) {
        std::size_t common = 0;
        for (const auto& [w, c] : content_orig) {
            auto it = content_gen.find(w);
            if (it != content_gen.end()) common += std::min(c, it->second);
        }
        overlap = static_cast<double>(common) / static_cast<double>(content_total);
    }
    const double conversion = r >= n ? 0.0 : static_cast<double>(n - r) / static_cast<double>(n);
    return conversion * overlap;
}

PronounBatch pronoun_batch(std::span<const std::pair<std::vector<std::string>, std::vector<std::string>>> samples) {
    PronounBatch b;
    std::vector<double> basic;
    std::vector<double> extended;
    for (const auto& [orig, gen] : samples) {
        const auto pb = pronoun_score(orig, gen, PronounSet::Basic);
        if (!pb) {
            ++b.skipped;
            continue;
        }
        basic.push_back(*pb);
        extended.push_back(*pronoun_score(orig, gen, PronounSet::Extended));
    }
    b.scored = basic.size();
    if (!basic.empty()) {
        b.p_score = mean(basic);
        b.all_changed_p_score = mean(extended);
    }
    return b;
}

double sign_test_p(std::size_t wins, std::size_t losses) {
    const std::size_t n = wins + losses;
    if (n == 0) return 1.0;
    // Σ_{i ≥ wins} C(n, i) / 2ⁿ, accumulated in log space.
    double p = 0.0;
    for (std::size_t i = wins; i <= n; ++i) {
        const double log_c = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(i) + 1) -
                             std::lgamma(static_cast<double>(n - i) + 1);
        p += std::exp(log_c - static_cast<double>(n) * std::numbers::ln2);
    }
    return std::min(1.0, p);
}

namespace {

std::vector<double> row_mean(const linalg::Matrix& m, std::size_t begin, std::size_t end) {
    std::vector<double> out(m.cols(), 0.0);
    for (std::size_t i = begin; i < end; ++i) {
        auto r = m.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
    }
    for (double& x : out) x /= static_cast<double>(end - begin);
    return out;
}

// Mass the prompt-final query puts on [begin, end) in the retrieval head, or
// averaged over the last layer's heads when the model has none.
double attention_mass(const ToyModel& model, const model::AttentionTrace& trace, std::size_t query,
                      std::size_t begin, std::size_t end) {
    auto mass = [&](std::size_t l, std::size_t h) {
        const auto& a = trace.at(l, h).alpha;
        double s = 0.0;
        for (std::size_t j = begin; j < end; ++j) s += a(query, j);
        return s;
    };
    if (auto site = model.retrieval_head()) return mass(site->layer, site->head);
    const std::size_t last = trace.n_layers - 1;
    double s = 0.0;
    for (std::size_t h = 0; h < trace.n_heads; ++h) s += mass(last, h);
    return s / static_cast<double>(trace.n_heads);
}

int prefers_answer(const linalg::Matrix& logits, std::size_t row, const RetrievalTask& task) {
    const auto lp = model::log_softmax(logits.row(row));
    double competitor = -INFINITY;
    for (TokenId v : task.distractor_values) competitor = std::max(competitor, lp[v]);
    return efficacy(std::exp(lp[task.answer]), std::exp(competitor));
}

std::optional<double> mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return std::nullopt;
    return mean(xs);
}

}  // namespace

TaskOutcome evaluate_task(const ToyModel& model, const SteeringPlan* plan, const RetrievalTask& task,
                          const EvalOptions& options) {
    std::optional<steering::SteeringHook> hook;
    if (plan) hook.emplace(steering::make_hook(*plan, task.highlight, model.config()));
    const model::KvHook* h = hook ? &*hook : nullptr;

    TaskOutcome out;
    const auto gen = model::greedy_generate(model, task.prompt, options.max_new_tokens, h);
    out.generated = gen.tokens;
    out.correct = !gen.tokens.empty() && gen.tokens.front() == task.answer;
    if (!gen.logprobs.empty()) out.fluency = fluency(gen.logprobs);

    const std::size_t p = task.prompt.size();
    std::vector<TokenId> full = task.prompt;
    full.insert(full.end(), gen.tokens.begin(), gen.tokens.end());
    const auto fr = model::forward(model, full, h);
    if (full.size() > p) {
        const auto g = row_mean(fr.hidden, p, full.size());
        const auto c = row_mean(fr.hidden, 0, p);
        out.consistency = consistency(g, c);
    }
    out.efficacy = prefers_answer(fr.logits, p - 1, task);
    out.gold_attention = attention_mass(model, fr.trace, p - 1, task.gold_begin(), task.gold_end());

    const model::ForwardOptions no_trace{false};
    const auto pr = model::forward(model, task.paraphrase, h, no_trace);
    out.paraphrase = prefers_answer(pr.logits, task.paraphrase.size() - 1, task);
    return out;
}

MetricsReport evaluate(const ToyModel& model, const SteeringPlan* plan, std::span<const RetrievalTask> tasks,
                       const EvalOptions& options) {
    MetricsReport r;
    r.n_tasks = tasks.size();
    if (tasks.empty()) return r;
    std::vector<double> em, flu, cons, eff, para, mass;
    for (const auto& t : tasks) {
        const auto o = evaluate_task(model, plan, t, options);
        em.push_back(o.correct ? 1.0 : 0.0);
        if (o.fluency) flu.push_back(*o.fluency);
        if (o.consistency) cons.push_back(*o.consistency);
        eff.push_back(o.efficacy);
        para.push_back(o.paraphrase);
        mass.push_back(o.gold_attention);
    }
    r.exact_match = mean_of(em);
    r.fluency = mean_of(flu);
    r.consistency = mean_of(cons);
    r.efficacy = mean_of(eff);
    r.paraphrase = mean_of(para);
    r.gold_attention = mean_of(mass);
    return r;
}

double exact_match(const ToyModel& model, const SteeringPlan* plan, std::span<const RetrievalTask> tasks,
                   const EvalOptions& options) {
    if (tasks.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& t : tasks) {
        std::optional<steering::SteeringHook> hook;
        if (plan) hook.emplace(steering::make_hook(*plan, t.highlight, model.config()));
        const auto gen = model::greedy_generate(model, t.prompt, options.max_new_tokens, hook ? &*hook : nullptr);
        if (!gen.tokens.empty() && gen.tokens.front() == t.answer) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(tasks.size());
}

std::vector<std::string> metrics_header() {
    return {"n_tasks",  "exact_match", "fluency", "consistency",         "efficacy",
            "paraphrase", "p_score",   "all_changed_p_score", "gold_attention"};
}

std::vector<std::string> metrics_cells(const MetricsReport& r) {
    auto cell = [](const std::optional<double>& x) { return x ? format_double(*x) : std::string(); };
    return {std::to_string(r.n_tasks), cell(r.exact_match), cell(r.fluency),
            cell(r.consistency),       cell(r.efficacy),    cell(r.paraphrase),
            cell(r.p_score),           cell(r.all_changed_p_score), cell(r.gold_attention)};
}

// ---- ablation and sweeps ----

namespace {

SteeringPlan learn(const Banks& banks, const LearnerConfig& cfg, double g_k, double g_v, std::uint64_t fp) {
    if (!banks.keys) throw EvalError("a K bank is required");
    return learner::learn_plan(*banks.keys, banks.values, cfg, g_k, g_v, fp);
}

std::vector<std::string> plan_cells(const SteeringPlan* plan) {
    if (!plan) return {"none", "none", "", "", "", "0", "0"};
    const auto& c = plan->config;
    return {learner::to_string(c.mode),      learner::to_string(c.scheme), format_double(c.gamma),
            format_double(c.delta_min),      format_double(c.binary_threshold), format_double(plan->g_k),
            format_double(plan->g_v)};
}

}  // namespace

std::vector<AblationRow> ablation_matrix(const ToyModel& model, const Banks& banks, const LearnerConfig& base,
                                         double g_k, double g_v, std::span<const RetrievalTask> tasks,
                                         std::uint64_t fingerprint, const EvalOptions& options) {
    using learner::ProjectionMode;
    using learner::WeightScheme;
    struct Variant {
        const char* name;
        ProjectionMode mode;
        WeightScheme scheme;
    };
    static constexpr Variant kVariants[] = {
        {"differential+softplus", ProjectionMode::Differential, WeightScheme::Softplus},
        {"differential+uniform", ProjectionMode::Differential, WeightScheme::Uniform},
        {"independent+softplus", ProjectionMode::IndependentPositive, WeightScheme::Softplus},
        {"independent+uniform", ProjectionMode::IndependentPositive, WeightScheme::Uniform},
        {"independent+binary", ProjectionMode::IndependentPositive, WeightScheme::Binary},
    };
    std::vector<AblationRow> rows;
    for (const auto& v : kVariants) {
        LearnerConfig cfg = base;
        cfg.mode = v.mode;
        cfg.scheme = v.scheme;
        AblationRow row;
        row.name = v.name;
        row.plan = learn(banks, cfg, g_k, g_v, fingerprint);
        row.metrics = evaluate(model, &*row.plan, tasks, options);
        rows.push_back(std::move(row));
    }
    AblationRow vanilla;
    vanilla.name = "vanilla";
    vanilla.metrics = evaluate(model, nullptr, tasks, options);
    rows.push_back(std::move(vanilla));
    return rows;
}

csv::Table ablation_table(std::span<const AblationRow> rows) {
    std::vector<std::string> header = {"config", "mode", "weights", "gamma", "delta_min", "binary_threshold", "g_k",
                                       "g_v"};
    for (auto& h : metrics_header()) header.push_back(h);
    csv::Table t(header);
    for (const auto& r : rows) {
        std::vector<std::string> cells = {r.name};
        for (auto& c : plan_cells(r.plan ? &*r.plan : nullptr)) cells.push_back(std::move(c));
        for (auto& c : metrics_cells(r.metrics)) cells.push_back(std::move(c));
        t.add_row(std::move(cells));
    }
    return t;
}

const char* to_string(SweepParam p) {
    switch (p) {
        case SweepParam::GainK: return "gk";
        case SweepParam::GainV: return "gv";
        case SweepParam::DeltaMin: return "delta-min";
        case SweepParam::Gamma: return "gamma";
    }
    return "?";
}

SweepParam sweep_param_from_string(const std::string& s) {
    if (s == "gk" || s == "g_k") return SweepParam::GainK;
    if (s == "gv" || s == "g_v") return SweepParam::GainV;
    if (s == "delta-min" || s == "delta_min") return SweepParam::DeltaMin;
    if (s == "gamma") return SweepParam::Gamma;
    throw EvalError("unknown sweep parameter: " + s + " (expected gk, gv, delta-min or gamma)");
}

std::vector<SweepRow> sweep(const ToyModel& model, const Banks& banks, std::span<const RetrievalTask> tasks,
                            SweepParam param, std::span<const double> grid, const LearnerConfig& base, double g_k,
                            double g_v, std::uint64_t fingerprint, const EvalOptions& options) {
    if (grid.empty()) throw EvalError("sweep: empty grid");
    if (param == SweepParam::GainV && !banks.values) throw EvalError("sweep over gv needs a V bank");
    std::vector<SweepRow> rows;
    for (double x : grid) {
        LearnerConfig cfg = base;
        double gk = g_k;
        double gv = g_v;
        switch (param) {
            case SweepParam::GainK: gk = x; break;
            case SweepParam::GainV: gv = x; break;
            case SweepParam::DeltaMin: cfg.delta_min = x; break;
            case SweepParam::Gamma: cfg.gamma = x; break;
        }
        SweepRow row;
        row.value = x;
        row.plan = learn(banks, cfg, gk, gv, fingerprint);
        row.metrics = evaluate(model, &row.plan, tasks, options);
        rows.push_back(std::move(row));
    }
    return rows;
}

csv::Table sweep_table(SweepParam param, std::span<const SweepRow> rows) {
    std::vector<std::string> header = {"param", "value", "mean_rank_k", "mean_weight_k"};
    for (auto& h : metrics_header()) header.push_back(h);
    csv::Table t(header);
    for (const auto& r : rows) {
        double rank = 0.0;
        double weight = 0.0;
        for (const auto& hp : r.plan.key_heads) {
            rank += static_cast<double>(hp.rank());
            weight += hp.weight;
        }
        const double n = static_cast<double>(r.plan.key_heads.size());
        std::vector<std::string> cells = {to_string(param), format_double(r.value), format_double(rank / n),
                                          format_double(weight / n)};
        for (auto& c : metrics_cells(r.metrics)) cells.push_back(std::move(c));
        t.add_row(std::move(cells));
    }
    return t;
}

// ---- inspection reports ----

std::vector<HeadDirection> top_directions(const SteeringPlan& plan, contrastive::Channel channel) {
    const auto& heads = channel == contrastive::Channel::Key ? plan.key_heads : plan.value_heads;
    std::vector<HeadDirection> out;
    for (const auto& hp : heads) {
        if (hp.rank() == 0) continue;
        auto v = hp.basis.vector(0);
        out.push_back({hp.layer, hp.head, std::vector<double>(v.begin(), v.end())});
    }
    return out;
}

double random_abs_cosine(std::size_t dim, std::size_t n_pairs, std::uint64_t seed) {
    if (dim < 2 || n_pairs == 0) throw EvalError("random_abs_cosine needs dim >= 2 and n_pairs >= 1");
    Rng rng(seed);
    std::vector<double> a(dim);
    std::vector<double> b(dim);
    double total = 0.0;
    for (std::size_t p = 0; p < n_pairs; ++p) {
        for (double& x : a) x = rng.normal();
        for (double& x : b) x = rng.normal();
        total += std::abs(linalg::dot(a, b)) / (linalg::norm(a) * linalg::norm(b));
    }
    return total / static_cast<double>(n_pairs);
}

DirectionReport direction_report(std::span<const HeadDirection> directions, std::uint64_t seed,
                                 std::size_t baseline_pairs) {
    if (directions.empty()) throw EvalError("direction_report: no directions (every head has rank 0)");
    DirectionReport r;
    r.n_directions = directions.size();
    r.dim = directions.front().direction.size();
    std::map<std::size_t, std::vector<std::vector<double>>> by_layer;
    std::vector<std::vector<double>> all;
    for (const auto& hd : directions) {
        if (hd.direction.size() != r.dim) throw EvalError("direction_report: mixed dimensions");
        by_layer[hd.layer].push_back(hd.direction);
        all.push_back(hd.direction);
    }
    if (all.size() >= 2) r.global = linalg::mean_abs_cosine(all);

    std::vector<double> within;
    for (const auto& [layer, dirs] : by_layer)
        if (dirs.size() >= 2) within.push_back(linalg::mean_abs_cosine(dirs));
    if (!within.empty()) r.within_layer = mean(within);

    std::vector<double> adjacent;
    for (const auto& [layer, dirs] : by_layer) {
        auto next = by_layer.find(layer + 1);
        if (next == by_layer.end()) continue;
        double s = 0.0;
        for (const auto& a : dirs)
            for (const auto& b : next->second) s += std::abs(linalg::dot(a, b)) / (linalg::norm(a) * linalg::norm(b));
        adjacent.push_back(s / static_cast<double>(dirs.size() * next->second.size()));
    }
    if (!adjacent.empty()) r.adjacent_layer = mean(adjacent);

    if (r.dim >= 2) {
        r.baseline_pairs = baseline_pairs;
        r.random_baseline = random_abs_cosine(r.dim, baseline_pairs, seed);
        r.analytic_baseline = std::sqrt(2.0 / (std::numbers::pi * static_cast<double>(r.dim)));
    }
    return r;
}

csv::Table direction_table(const DirectionReport& r) {
    auto cell = [](const std::optional<double>& x) { return x ? format_double(*x) : std::string(); };
    csv::Table t({"statistic", "value"});
    t.add_row({"n_directions", std::to_string(r.n_directions)});
    t.add_row({"dim", std::to_string(r.dim)});
    t.add_row({"adjacent_layer", cell(r.adjacent_layer)});
    t.add_row({"within_layer", cell(r.within_layer)});
    t.add_row({"global", cell(r.global)});
    t.add_row({"random_baseline_mc", format_double(r.random_baseline)});
    t.add_row({"random_baseline_analytic", format_double(r.analytic_baseline)});
    t.add_row({"random_baseline_pairs", std::to_string(r.baseline_pairs)});
    t.add_row({"random_baseline_reported_d128", format_double(kReportedRandomBaseline128)});
    return t;
}

WeightRankReport weight_rank_report(const SteeringPlan& plan) {
    WeightRankReport rep;
    auto dump = [&](const std::vector<learner::HeadProjection>& heads, contrastive::Channel ch) {
        if (heads.empty()) return;
        ChannelSummary s;
        s.channel = ch;
        s.n_heads = heads.size();
        std::vector<double> ranks;
        std::size_t active = 0;
        s.rank_min = heads.front().rank();
        s.weight_min = s.weight_max = heads.front().weight;
        for (const auto& hp : heads) {
            rep.heads.add_row({std::to_string(hp.layer), std::to_string(hp.head), contrastive::to_string(hp.channel),
                               format_double(hp.discriminability), format_double(hp.weight),
                               std::to_string(hp.rank())});
            if (hp.discriminability >= plan.config.delta_min) ++active;
            ranks.push_back(static_cast<double>(hp.rank()));
            s.rank_min = std::min(s.rank_min, hp.rank());
            s.rank_max = std::max(s.rank_max, hp.rank());
            s.weight_min = std::min(s.weight_min, hp.weight);
            s.weight_max = std::max(s.weight_max, hp.weight);
        }
        s.active_fraction = static_cast<double>(active) / static_cast<double>(heads.size());
        s.rank_mean = mean(ranks);
        s.rank_median = median(ranks);
        rep.summary.push_back(s);
    };
    dump(plan.key_heads, contrastive::Channel::Key);
    dump(plan.value_heads, contrastive::Channel::Value);
    return rep;
}

csv::Table summary_table(std::span<const ChannelSummary> summary) {
    csv::Table t({"channel", "n_heads", "active_fraction", "rank_min", "rank_max", "rank_mean", "rank_median",
                  "weight_min", "weight_max"});
    for (const auto& s : summary) {
        t.add_row({contrastive::to_string(s.channel), std::to_string(s.n_heads), format_double(s.active_fraction),
                   std::to_string(s.rank_min), std::to_string(s.rank_max), format_double(s.rank_mean),
                   format_double(s.rank_median), format_double(s.weight_min), format_double(s.weight_max)});
    }
    return t;
}

csv::Table gain_report(const ToyModel& model, const SteeringPlan& plan, std::span<const TokenId> tokens,
                       const HighlightMask& mask) {
    const auto hook = steering::make_hook(plan, mask, model.config());
    const auto base = model::forward(model, tokens);
    const auto steered = model::forward(model, tokens, &hook);
    csv::Table t({"layer", "head", "routing_max", "content_max", "cross_max", "total_max", "residual_max"});
    for (std::size_t l = 0; l < model.config().n_layers; ++l) {
        for (std::size_t h = 0; h < model.config().n_heads; ++h) {
            const auto g = model::decompose_gains(base.trace, steered.trace, l, h);
            double residual = 0.0;
            for (std::size_t i = 0; i < g.total_delta.rows(); ++i)
                for (std::size_t j = 0; j < g.total_delta.cols(); ++j)
                    residual = std::max(residual, std::abs(g.routing(i, j) + g.content(i, j) + g.cross(i, j) -
                                                           g.total_delta(i, j)));
            t.add_row({std::to_string(l), std::to_string(h), format_double(linalg::max_abs(g.routing)),
                       format_double(linalg::max_abs(g.content)), format_double(linalg::max_abs(g.cross)),
                       format_double(linalg::max_abs(g.total_delta)), format_double(residual)});
        }
    }
    return t;
}

}  // namespace prism::eval
