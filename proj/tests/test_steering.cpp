#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "prism/contrastive.hpp"
#include "prism/eval.hpp"
#include "prism/steering.hpp"
#include "test_util.hpp"

using namespace prism;
using namespace prism::steering;
using linalg::Matrix;
using linalg::OrthonormalBasis;

namespace {

OrthonormalBasis random_basis(std::mt19937_64& gen, std::size_t d, std::size_t k) {
    const auto rows = oracle::random_orthonormal_rows(gen, d, k);
    Matrix m(k, d);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < d; ++j) m(i, j) = rows[i][j];
    return OrthonormalBasis(d, std::move(m));
}

HeadProjection projection(OrthonormalBasis b, double w, contrastive::Channel ch = contrastive::Channel::Key) {
    HeadProjection p;
    p.channel = ch;
    p.basis = std::move(b);
    p.weight = w;
    return p;
}

// P·x and (I − P)·x with P = BBᵀ built by the oracle.
std::pair<std::vector<double>, std::vector<double>> split(const OrthonormalBasis& b, const std::vector<double>& x) {
    const auto bo = testutil::to_oracle(b.columns());
    const auto p = oracle::matmul(bo, oracle::transpose(bo));
    std::vector<double> in(x.size(), 0.0), out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = 0; j < x.size(); ++j) in[i] += p[i][j] * x[j];
        out[i] = x[i] - in[i];
    }
    return {in, out};
}

model::ModelConfig small_random(std::uint64_t seed) {
    model::ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.head_dim = 8;
    c.vocab_size = Vocabulary::standard().size();
    c.seed = seed;
    return c;
}

SteeringPlan synthetic_plan(std::mt19937_64& gen, const model::ModelConfig& m, double gk, double gv, bool values) {
    SteeringPlan p;
    p.n_layers = m.n_layers;
    p.n_heads = m.n_heads;
    p.head_dim = m.head_dim;
    p.g_k = gk;
    p.g_v = gv;
    for (std::size_t l = 0; l < m.n_layers; ++l)
        for (std::size_t h = 0; h < m.n_heads; ++h) {
            auto hp = projection(random_basis(gen, m.head_dim, 1 + (l + h) % 3), 0.7);
            hp.layer = l;
            hp.head = h;
            p.key_heads.push_back(hp);
            if (values) {
                hp.channel = contrastive::Channel::Value;
                p.value_heads.push_back(hp);
            }
        }
    return p;
}

}  // namespace

TEST_CASE("zero gain and rank 0 leave the vector bit-identical") {
    std::mt19937_64 gen(1);
    Rng rng(1);
    const auto k = testutil::random_vector(rng, 6);
    const auto p = projection(random_basis(gen, 6, 3), 0.8);
    CHECK(apply_key_edit(k, p, 0.0) == k);
    CHECK(apply_value_edit(k, p, 0.0) == k);
    const auto z = projection(OrthonormalBasis(6), 0.8);
    CHECK(apply_key_edit(k, z, 0.4) == k);
    CHECK(apply_value_edit(k, z, -3.0) == k);
    CHECK(apply_key_edit(k, projection(random_basis(gen, 6, 3), 0.0), 0.4) == k);
}

TEST_CASE("full-rank basis scales by 1 + g·w") {
    Matrix eye(4, 4);
    for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
    const auto p = projection(OrthonormalBasis(4, eye), 1.0);
    const std::vector<double> k = {1.0, -2.0, 0.25, 8.0};
    const auto out = apply_key_edit(k, p, 0.5);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == 1.5 * k[i]);
}

TEST_CASE("subspace component is amplified and the complement kept") {
    std::mt19937_64 gen(2);
    Rng rng(2);
    for (int t = 0; t < 100; ++t) {
        const std::size_t d = 3 + rng.below(14);
        const std::size_t r = 1 + rng.below(d);
        const auto p = projection(random_basis(gen, d, r), rng.uniform() * 2.0);
        const double g = rng.uniform() * 2.0 - 1.0;
        const auto k = testutil::random_vector(rng, d);
        const auto kp = (t % 2 == 0) ? apply_key_edit(k, p, g) : apply_value_edit(k, p, g);
        const auto [pk, ok] = split(p.basis, k);
        const auto [pkp, okp] = split(p.basis, kp);
        for (std::size_t i = 0; i < d; ++i) {
            CHECK(std::abs(pkp[i] - (1.0 + g * p.weight) * pk[i]) <= 1e-10);
            CHECK(std::abs(okp[i] - ok[i]) <= 1e-10);
        }
    }
}

TEST_CASE("negative gain attenuates the subspace component") {
    std::mt19937_64 gen(3);
    Rng rng(3);
    const auto p = projection(random_basis(gen, 8, 2), 0.7);
    const auto k = testutil::random_vector(rng, 8);
    const auto kp = apply_key_edit(k, p, -0.30);
    const double factor = 1.0 - 0.30 * 0.7;
    CHECK(factor < 1.0);
    const auto [pk, ok] = split(p.basis, k);
    const auto [pkp, okp] = split(p.basis, kp);
    CHECK(linalg::norm(pkp) < linalg::norm(pk));
    CHECK(std::abs(linalg::norm(pkp) - factor * linalg::norm(pk)) <= 1e-10);
}

TEST_CASE("edits are linear, and applying twice squares the factor") {
    std::mt19937_64 gen(4);
    Rng rng(4);
    const auto p = projection(random_basis(gen, 7, 3), 0.9);
    const double g = 0.4;
    const auto k = testutil::random_vector(rng, 7);
    for (double a : {-2.0, 0.5, 3.0}) {
        std::vector<double> ak(k);
        for (double& x : ak) x *= a;
        const auto lhs = apply_key_edit(ak, p, g);
        const auto rhs = apply_key_edit(k, p, g);
        for (std::size_t i = 0; i < 7; ++i) CHECK(std::abs(lhs[i] - a * rhs[i]) <= 1e-12);
    }
    const auto twice = apply_key_edit(apply_key_edit(k, p, g), p, g);
    const double f = 1.0 + g * p.weight;
    auto once = projection(p.basis, 1.0);
    const auto single = apply_key_edit(k, once, f * f - 1.0);
    for (std::size_t i = 0; i < 7; ++i) CHECK(std::abs(twice[i] - single[i]) <= 1e-12);
    // And it is not the single edit.
    double diff = 0.0;
    const auto one = apply_key_edit(k, p, g);
    for (std::size_t i = 0; i < 7; ++i) diff = std::max(diff, std::abs(twice[i] - one[i]));
    CHECK(diff > 1e-3);
}

TEST_CASE("dimension mismatch is rejected") {
    std::mt19937_64 gen(5);
    const auto p = projection(random_basis(gen, 5, 2), 1.0);
    CHECK_THROWS_AS(apply_key_edit(std::vector<double>(4, 1.0), p, 0.4), learner::LearnerError);
    CHECK_THROWS_AS(apply_value_edit(std::vector<double>(6, 1.0), p, 0.4), learner::LearnerError);
}

TEST_CASE("hook channels, statelessness and warnings") {
    std::mt19937_64 gen(6);
    const auto cfg = small_random(1);
    auto p = synthetic_plan(gen, cfg, 0.4, 0.0, true);
    SteeringHook h(p, HighlightMask({0, 1}));
    CHECK(h.keys_enabled());
    CHECK_FALSE(h.values_enabled());
    CHECK(h.warnings().empty());
    std::vector<double> a(8, 1.0), b(8, 1.0);
    h.edit_key(1, 1, a);
    h.edit_key(1, 1, b);
    CHECK(a == b);
    std::vector<double> v(8, 1.0);
    h.edit_value(0, 0, v);
    CHECK(v == std::vector<double>(8, 1.0));

    p.g_v = 0.1;
    CHECK(SteeringHook(p, HighlightMask{}).values_enabled());
    auto ko = synthetic_plan(gen, cfg, 0.4, 0.0, false);
    CHECK_FALSE(SteeringHook(ko, HighlightMask{}).values_enabled());

    p.g_k = -2.0;  // 1 + g·w = −0.4 on every head
    const SteeringHook flip(p, HighlightMask{});
    CHECK(flip.warnings().size() == 4);
    p.g_k = -1.0;  // 1 + g·w = 0.3
    CHECK(SteeringHook(p, HighlightMask{}).warnings().empty());
}

TEST_CASE("make_hook checks the plan against the model") {
    std::mt19937_64 gen(7);
    const auto cfg = small_random(2);
    const auto p = synthetic_plan(gen, cfg, 0.4, 0.1, true);
    CHECK_NOTHROW(make_hook(p, HighlightMask{}, cfg));
    auto other = cfg;
    other.n_heads = 3;
    CHECK_THROWS_AS(make_hook(p, HighlightMask{}, other), learner::LearnerError);
    other = cfg;
    other.head_dim = 4;
    CHECK_THROWS_AS(make_hook(p, HighlightMask{}, other), learner::LearnerError);
    auto broken = p;
    broken.key_heads.pop_back();
    CHECK_THROWS_AS(make_hook(broken, HighlightMask{}, cfg), learner::LearnerError);
}

TEST_CASE("empty mask gives the unsteered forward") {
    std::mt19937_64 gen(8);
    const auto cfg = small_random(3);
    const auto m = model::init_model(cfg, model::ConstructionMode::SeededRandom);
    const auto p = synthetic_plan(gen, cfg, 0.4, 0.1, true);
    const auto hook = make_hook(p, HighlightMask{}, cfg);
    const std::vector<TokenId> t = {1, 9, 2, 20, 3, 40, 4};
    const auto a = model::forward(m, t);
    const auto b = model::forward(m, t, &hook);
    CHECK(a.hidden == b.hidden);
    CHECK(a.logits == b.logits);
}

TEST_CASE("full mask edits every key row of every head") {
    std::mt19937_64 gen(9);
    const auto cfg = small_random(4);
    const auto m = model::init_model(cfg, model::ConstructionMode::SeededRandom);
    const auto p = synthetic_plan(gen, cfg, 0.4, 0.0, false);
    const std::vector<TokenId> t = {1, 9, 2, 20, 3, 40, 4, 5};
    std::vector<std::size_t> all(t.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto hook = make_hook(p, HighlightMask(all), cfg);
    const auto fr = model::forward(m, t, &hook);
    for (const auto& ht : fr.trace.heads) {
        CHECK(ht.values == ht.values_raw);
        for (std::size_t i = 0; i < t.size(); ++i) {
            const auto a = ht.keys.row(i), b = ht.keys_raw.row(i);
            CHECK_FALSE(std::equal(a.begin(), a.end(), b.begin()));
        }
    }
    CHECK_THROWS_AS(model::forward(m, std::vector<TokenId>(t.begin(), t.begin() + 4), &hook), model::ModelError);
}

TEST_CASE("gold attention rises with the key gain on the recall model") {
    const auto& vocab = Vocabulary::standard();
    const std::vector<std::size_t> gold = {1, 3, 5};
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto m = model::init_model(model::associative_config(vocab, seed),
                                         model::ConstructionMode::AssociativeRecall);
        const auto trip = contrastive::generate_triplets(seed, 40, vocab);
        const auto kb = contrastive::extract_bank(m, trip, contrastive::Channel::Key);
        const auto tasks = eval::build_retrieval_tasks(seed, 2, 8, gold, vocab);
        double prev = -1.0;
        for (double g : {0.0, 0.1, 0.2, 0.4}) {
            const auto plan = learner::learn_plan(kb, nullptr, learner::LearnerConfig{}, g, 0.0);
            const double mass = eval::evaluate(m, &plan, tasks).gold_attention.value();
            CHECK(mass >= prev);
            prev = mass;
        }
    }
}
