// prism: offline projection learning and steered evaluation on the toy model.
//
// Exit codes: 0 success, 1 runtime/evaluation failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "prism/contrastive.hpp"
#include "prism/eval.hpp"
#include "prism/learner.hpp"
#include "prism/model.hpp"
#include "prism/plan_store.hpp"
#include "prism/steering.hpp"

namespace fs = std::filesystem;
using namespace prism;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelOpts {
    std::string kind = "assoc";
    std::uint64_t seed = 0;
    std::size_t max_len = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t head_dim = 16;
};

struct LearnOpts {
    double gamma = 0.998;
    double delta_min = 0.08;
    double gk = 0.40;
    std::optional<double> gv;
    bool value = false;
    std::string mode = "differential";
    std::string weights = "softplus";
    double delta = 0.12;
    std::string energy = "first-power";
    bool zero_rank = false;
};

struct TaskOpts {
    std::uint64_t seed = 0;
    std::size_t tasks = 4;
    std::size_t passages = 8;
    std::vector<std::size_t> gold;
    std::size_t max_new = 1;
};

void add_model_opts(CLI::App* app, ModelOpts& m) {
    app->add_option("--model", m.kind, "Model construction: assoc or random")
        ->check(CLI::IsMember({"assoc", "random"}))
        ->capture_default_str();
    app->add_option("--model-seed", m.seed, "Seed for the model weights")->capture_default_str();
    app->add_option("--max-len", m.max_len, "Maximum sequence length")->check(CLI::Range(8, 4096))->capture_default_str();
    app->add_option("--layers", m.layers, "Layers (random model)")->check(CLI::Range(1, 64))->capture_default_str();
    app->add_option("--heads", m.heads, "Heads per layer (random model)")->check(CLI::Range(1, 64))->capture_default_str();
    app->add_option("--head-dim", m.head_dim, "Head dim (random model)")->check(CLI::Range(1, 512))->capture_default_str();
}

void add_learn_opts(CLI::App* app, LearnOpts& l) {
    app->add_option("--gamma", l.gamma, "Energy threshold for the rank")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    app->add_option("--delta-min", l.delta_min, "Softplus offset")->capture_default_str();
    app->add_option("--gk", l.gk, "Key gain")->capture_default_str();
    app->add_option("--gv", l.gv, "Value gain (default 0, or 0.10 with --value)");
    app->add_flag("--value", l.value, "Also learn value-channel projections");
    app->add_option("--mode", l.mode, "differential or independent")
        ->check(CLI::IsMember({"differential", "independent"}))
        ->capture_default_str();
    app->add_option("--weights", l.weights, "softplus, uniform or binary")
        ->check(CLI::IsMember({"softplus", "uniform", "binary"}))
        ->capture_default_str();
    app->add_option("--delta", l.delta, "Threshold for binary weights")->check(CLI::NonNegativeNumber)->capture_default_str();
    app->add_option("--energy", l.energy, "first-power or squared")
        ->check(CLI::IsMember({"first-power", "squared"}))
        ->capture_default_str();
    app->add_flag("--zero-rank-below-delta-min", l.zero_rank, "Softplus: rank 0 for heads with D < delta-min");
}

void add_task_opts(CLI::App* app, TaskOpts& t) {
    app->add_option("--seed", t.seed, "Seed for the retrieval battery")->capture_default_str();
    app->add_option("--tasks", t.tasks, "Passage sets")->check(CLI::Range(1, 100000))->capture_default_str();
    app->add_option("--passages", t.passages, "Passages per prompt")->check(CLI::Range(2, 1000))->capture_default_str();
    app->add_option("--gold", t.gold, "Gold passage positions (default: all)")->delimiter(',');
    app->add_option("--max-new", t.max_new, "Tokens to generate per task")->capture_default_str();
}

learner::LearnerConfig learner_config(const LearnOpts& l) {
    if (!(l.gamma > 0.0)) throw UsageError("--gamma must be in (0, 1]");
    learner::LearnerConfig c;
    c.gamma = l.gamma;
    c.delta_min = l.delta_min;
    c.mode = learner::projection_mode_from_string(l.mode);
    c.scheme = learner::weight_scheme_from_string(l.weights);
    c.binary_threshold = l.delta;
    c.energy = linalg::energy_from_string(l.energy);
    c.zero_rank_below_delta_min = l.zero_rank;
    return c;
}

double value_gain(const LearnOpts& l) {
    if (l.gv && *l.gv != 0.0 && !l.value) throw UsageError("--gv needs --value");
    return l.gv.value_or(l.value ? 0.10 : 0.0);
}

model::ToyModel build_model(const ModelOpts& m, const Vocabulary& vocab) {
    if (m.kind == "assoc") {
        const auto cfg = model::associative_config(vocab, m.seed, m.max_len);
        return model::init_model(cfg, model::ConstructionMode::AssociativeRecall, vocab);
    }
    model::ModelConfig cfg;
    cfg.n_layers = m.layers;
    cfg.n_heads = m.heads;
    cfg.head_dim = m.head_dim;
    cfg.vocab_size = vocab.size();
    cfg.max_seq_len = m.max_len;
    cfg.seed = m.seed;
    return model::init_model(cfg, model::ConstructionMode::SeededRandom, vocab);
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void emit(const csv::Table& t, const std::string& out) {
    if (out.empty() || out == "-") {
        std::cout << t.to_string();
    } else {
        if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
        t.write(out);
        std::cerr << "wrote " << out << "\n";
    }
}

std::vector<eval::RetrievalTask> battery(const TaskOpts& t, const Vocabulary& vocab) {
    std::vector<std::size_t> gold = t.gold;
    if (gold.empty())
        for (std::size_t i = 0; i < t.passages; ++i) gold.push_back(i);
    return eval::build_retrieval_tasks(t.seed, t.tasks, t.passages, gold, vocab);
}

struct LoadedBanks {
    contrastive::RepresentationBank keys;
    std::optional<contrastive::RepresentationBank> values;
    std::uint64_t fingerprint = 0;
};

LoadedBanks load_banks(const std::string& triplet_path, const model::ToyModel& m, bool with_values) {
    const std::string bytes = read_file(triplet_path);
    const auto triplets = contrastive::parse_triplets(bytes);
    auto [k, v] = contrastive::extract_banks(m, triplets);
    LoadedBanks b;
    b.keys = std::move(k);
    if (with_values) b.values = std::move(v);
    b.fingerprint = contrastive::data_fingerprint_bytes(bytes, m.config().seed);
    return b;
}

std::optional<learner::SteeringPlan> maybe_load_plan(const std::string& path, const model::ToyModel& m) {
    if (path == "none") return std::nullopt;
    const auto& c = m.config();
    return store::load_plan(path, store::PlanDims{c.n_layers, c.n_heads, c.head_dim});
}

void print_warnings(const learner::SteeringPlan& plan, const model::ToyModel& m) {
    const auto hook = steering::make_hook(plan, model::HighlightMask{}, m.config());
    for (const auto& w : hook.warnings()) std::cerr << "warning: " << w << "\n";
}

// "3-7,9" → {3,4,5,6,7,9}
std::vector<std::size_t> parse_positions(const std::string& spec) {
    std::vector<std::size_t> out;
    std::stringstream ss(spec);
    for (std::string part; std::getline(ss, part, ',');) {
        if (part.empty()) continue;
        try {
            const auto dash = part.find('-');
            if (dash == std::string::npos) {
                out.push_back(std::stoul(part));
            } else {
                const std::size_t a = std::stoul(part.substr(0, dash));
                const std::size_t b = std::stoul(part.substr(dash + 1));
                if (b < a) throw UsageError("bad range " + part);
                for (std::size_t i = a; i <= b; ++i) out.push_back(i);
            }
        } catch (const std::logic_error&) {
            throw UsageError("bad position list: " + spec);
        }
    }
    return out;
}

// Flat key=value lines become --key=value arguments placed right after the
// subcommand, so explicit flags still override them.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<long>(i));
            break;
        }
    }
    if (path.empty()) return args;
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open config file " + path);
    std::vector<std::string> injected;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(line_no) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw UsageError(path + ":" + std::to_string(line_no) + ": empty key");
        bool explicit_flag = false;
        for (const auto& a : args)
            if (a == "--" + key || a.rfind("--" + key + "=", 0) == 0) explicit_flag = true;
        if (!explicit_flag) injected.push_back("--" + key + "=" + value);
    }
    // args[0] is the program, args[1] the subcommand.
    if (args.size() < 2) throw UsageError("--config needs a subcommand");
    args.insert(args.begin() + 2, injected.begin(), injected.end());
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prompt highlighting on a toy transformer: contrastive data, projection learning, steered evaluation"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");
    const Vocabulary vocab = Vocabulary::standard();

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Write contrastive triplets");
    std::uint64_t gen_seed = 0;
    std::size_t gen_pairs = 100;
    std::string gen_out = "triplets.tsv";
    gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
    gen->add_option("--pairs", gen_pairs, "Context pairs (2 triplets each)")->check(CLI::Range(std::size_t{1}, std::size_t{1000000}))->capture_default_str();
    gen->add_option("--out", gen_out, "Output path")->capture_default_str();

    // learn
    auto* learn = app.add_subcommand("learn", "Extract banks and learn a steering plan");
    ModelOpts learn_model;
    LearnOpts learn_opts;
    std::string learn_triplets;
    std::string learn_out = "plan.bin";
    std::string learn_summary;
    add_model_opts(learn, learn_model);
    add_learn_opts(learn, learn_opts);
    learn->add_option("--triplets", learn_triplets, "Triplet file")->required()->check(CLI::ExistingFile);
    learn->add_option("--out", learn_out, "Plan output path")->capture_default_str();
    learn->add_option("--summary", learn_summary, "Also write a JSON summary here");

    // generate
    auto* generate = app.add_subcommand("generate", "Greedy generation with optional steering");
    ModelOpts gen_model;
    std::string gen_plan = "none";
    std::string gen_prompt;
    std::string gen_highlight;
    std::size_t gen_max_new = 4;
    add_model_opts(generate, gen_model);
    generate->add_option("--plan", gen_plan, "Plan file or none")->capture_default_str();
    generate->add_option("--prompt", gen_prompt, "Prompt text")->required();
    generate->add_option("--highlight", gen_highlight, "Token positions to steer, e.g. 7-48,50");
    generate->add_option("--max-new", gen_max_new, "Tokens to generate")->capture_default_str();

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a plan on the retrieval battery");
    ModelOpts ev_model;
    TaskOpts ev_tasks;
    std::string ev_plan = "none";
    std::string ev_out;
    add_model_opts(ev, ev_model);
    add_task_opts(ev, ev_tasks);
    ev->add_option("--plan", ev_plan, "Plan file or none")->capture_default_str();
    ev->add_option("--out", ev_out, "CSV path (default stdout)");

    // ablate
    auto* ab = app.add_subcommand("ablate", "Six-row ablation matrix");
    ModelOpts ab_model;
    LearnOpts ab_learn;
    TaskOpts ab_tasks;
    std::string ab_triplets;
    std::string ab_out;
    add_model_opts(ab, ab_model);
    add_learn_opts(ab, ab_learn);
    add_task_opts(ab, ab_tasks);
    ab->add_option("--triplets", ab_triplets, "Triplet file")->required()->check(CLI::ExistingFile);
    ab->add_option("--out", ab_out, "CSV path (default stdout)");

    // sweep
    auto* sw = app.add_subcommand("sweep", "One-parameter sensitivity sweep");
    ModelOpts sw_model;
    LearnOpts sw_learn;
    TaskOpts sw_tasks;
    std::string sw_triplets;
    std::string sw_out;
    std::string sw_param;
    std::vector<double> sw_grid;
    add_model_opts(sw, sw_model);
    add_learn_opts(sw, sw_learn);
    add_task_opts(sw, sw_tasks);
    sw->add_option("--triplets", sw_triplets, "Triplet file")->required()->check(CLI::ExistingFile);
    sw->add_option("--param", sw_param, "gk, gv, delta-min or gamma")
        ->required()
        ->check(CLI::IsMember({"gk", "gv", "delta-min", "gamma"}));
    sw->add_option("--grid", sw_grid, "Comma-separated values")->required()->delimiter(',');
    sw->add_option("--out", sw_out, "CSV path (default stdout)");

    // inspect
    auto* in = app.add_subcommand("inspect", "Per-head weights/ranks and direction statistics");
    std::string in_plan;
    std::string in_dir;
    std::uint64_t in_seed = 0;
    std::size_t in_pairs = 100000;
    in->add_option("--plan", in_plan, "Plan file")->required()->check(CLI::ExistingFile);
    in->add_option("--out-dir", in_dir, "Write heads.csv, summary.csv, directions.csv, plan.json here");
    in->add_option("--seed", in_seed, "Monte Carlo seed")->capture_default_str();
    in->add_option("--baseline-pairs", in_pairs, "Monte Carlo pairs")->check(CLI::Range(std::size_t{1}, std::size_t{100000000}))->capture_default_str();

    std::vector<std::string> args(argv, argv + argc);
    try {
        args = expand_config(args);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }
    std::vector<const char*> cargs;
    for (const auto& a : args) cargs.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen) {
            const auto triplets = contrastive::generate_triplets(gen_seed, gen_pairs, vocab);
            if (fs::path(gen_out).has_parent_path()) fs::create_directories(fs::path(gen_out).parent_path());
            contrastive::save_triplets(triplets, gen_out);
            std::cout << "wrote " << triplets.size() << " triplets to " << gen_out << "\n";
        } else if (*learn) {
            const auto cfg = learner_config(learn_opts);
            const double gv = value_gain(learn_opts);
            const auto m = build_model(learn_model, vocab);
            const auto banks = load_banks(learn_triplets, m, learn_opts.value);
            const auto plan = learner::learn_plan(banks.keys, banks.values ? &*banks.values : nullptr, cfg,
                                                  learn_opts.gk, gv, banks.fingerprint);
            if (fs::path(learn_out).has_parent_path()) fs::create_directories(fs::path(learn_out).parent_path());
            store::save_plan(plan, learn_out);
            auto report = [](const char* name, const std::vector<learner::HeadProjection>& heads) {
                if (heads.empty()) return;
                double d = 0.0;
                std::size_t ranked = 0;
                for (const auto& hp : heads) {
                    d += hp.discriminability;
                    if (hp.rank() > 0) ++ranked;
                }
                std::printf("%s heads: %zu (rank > 0: %zu), mean D: %.6g\n", name, heads.size(), ranked,
                            d / static_cast<double>(heads.size()));
            };
            report("K", plan.key_heads);
            report("V", plan.value_heads);
            std::printf("g_K = %g, g_V = %g, gamma = %g, delta_min = %g, mode = %s, weights = %s\n", plan.g_k, plan.g_v,
                        cfg.gamma, cfg.delta_min, learner::to_string(cfg.mode), learner::to_string(cfg.scheme));
            print_warnings(plan, m);
            if (!learn_summary.empty()) {
                std::ofstream(learn_summary) << store::plan_summary_json(plan);
            }
            std::cout << "wrote " << learn_out << "\n";
        } else if (*generate) {
            const auto m = build_model(gen_model, vocab);
            const auto plan = maybe_load_plan(gen_plan, m);
            const auto prompt = vocab.tokenize(gen_prompt);
            if (prompt.empty()) throw UsageError("empty prompt");
            const model::HighlightMask mask(parse_positions(gen_highlight));
            std::optional<steering::SteeringHook> hook;
            if (plan) {
                hook.emplace(steering::make_hook(*plan, mask, m.config()));
                for (const auto& w : hook->warnings()) std::cerr << "warning: " << w << "\n";
            }
            const auto g = model::greedy_generate(m, prompt, gen_max_new, hook ? &*hook : nullptr);
            std::cout << vocab.detokenize(g.tokens) << "\n";
            for (std::size_t i = 0; i < g.tokens.size(); ++i)
                std::printf("%zu\t%s\t%.17g\n", i, vocab.word(g.tokens[i]).c_str(), g.logprobs[i]);
        } else if (*ev) {
            const auto m = build_model(ev_model, vocab);
            const auto plan = maybe_load_plan(ev_plan, m);
            const auto tasks = battery(ev_tasks, vocab);
            const auto r = eval::evaluate(m, plan ? &*plan : nullptr, tasks, {ev_tasks.max_new});
            std::vector<std::string> header = {"plan"};
            for (auto& h : eval::metrics_header()) header.push_back(h);
            csv::Table t(header);
            std::vector<std::string> cells = {plan ? ev_plan : "none"};
            for (auto& c : eval::metrics_cells(r)) cells.push_back(c);
            t.add_row(cells);
            emit(t, ev_out);
        } else if (*ab) {
            const auto cfg = learner_config(ab_learn);
            const double gv = value_gain(ab_learn);
            const auto m = build_model(ab_model, vocab);
            const auto banks = load_banks(ab_triplets, m, ab_learn.value);
            const auto tasks = battery(ab_tasks, vocab);
            const auto rows = eval::ablation_matrix(m, {&banks.keys, banks.values ? &*banks.values : nullptr}, cfg,
                                                    ab_learn.gk, gv, tasks, banks.fingerprint, {ab_tasks.max_new});
            emit(eval::ablation_table(rows), ab_out);
        } else if (*sw) {
            const auto cfg = learner_config(sw_learn);
            const auto param = eval::sweep_param_from_string(sw_param);
            const bool need_v = sw_learn.value || param == eval::SweepParam::GainV;
            LearnOpts opts = sw_learn;
            opts.value = need_v;
            const double gv = value_gain(opts);
            const auto m = build_model(sw_model, vocab);
            const auto banks = load_banks(sw_triplets, m, need_v);
            const auto tasks = battery(sw_tasks, vocab);
            const auto rows = eval::sweep(m, {&banks.keys, banks.values ? &*banks.values : nullptr}, tasks, param,
                                          sw_grid, cfg, sw_learn.gk, gv, banks.fingerprint, {sw_tasks.max_new});
            emit(eval::sweep_table(param, rows), sw_out);
        } else if (*in) {
            const auto plan = store::load_plan(in_plan);
            const auto wr = eval::weight_rank_report(plan);
            const auto summary = eval::summary_table(wr.summary);
            std::cout << summary.to_string();
            std::optional<csv::Table> directions;
            const auto dirs = eval::top_directions(plan, contrastive::Channel::Key);
            if (dirs.empty()) {
                std::cerr << "no key head has rank > 0; skipping direction statistics\n";
            } else {
                directions = eval::direction_table(eval::direction_report(dirs, in_seed, in_pairs));
                std::cout << directions->to_string();
            }
            if (!in_dir.empty()) {
                fs::create_directories(in_dir);
                wr.heads.write(fs::path(in_dir) / "heads.csv");
                summary.write(fs::path(in_dir) / "summary.csv");
                if (directions) directions->write(fs::path(in_dir) / "directions.csv");
                std::ofstream(fs::path(in_dir) / "plan.json") << store::plan_summary_json(plan);
                std::cerr << "wrote reports to " << in_dir << "\n";
            }
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
