#include <doctest.h>

#include <cmath>

#include "prism/learner.hpp"
#include "prism/steering.hpp"
#include "test_util.hpp"

using namespace prism;
using namespace prism::learner;
using testutil::random_matrix;

namespace {

RepresentationBank make_bank(Rng& rng, Channel ch, std::size_t layers, std::size_t heads, std::size_t n,
                             std::size_t d) {
    RepresentationBank b;
    b.channel = ch;
    b.n_samples = n;
    b.n_layers = layers;
    b.n_heads = heads;
    b.head_dim = d;
    for (std::size_t i = 0; i < layers * heads; ++i)
        b.entries.push_back({random_matrix(rng, n, d), random_matrix(rng, n, d), random_matrix(rng, n, d)});
    return b;
}

using linalg::max_abs;
using linalg::subtract;

double max_diff(const Matrix& a, const Matrix& b) { return max_abs(subtract(a, b)); }

}  // namespace

TEST_CASE("config validation and names") {
    LearnerConfig c;
    CHECK(c.gamma == 0.998);
    CHECK(c.delta_min == 0.08);
    CHECK(c.binary_threshold == 0.12);
    CHECK(c.mode == ProjectionMode::Differential);
    CHECK(c.scheme == WeightScheme::Softplus);
    CHECK(c.energy == linalg::EnergyDefinition::FirstPower);
    CHECK_FALSE(c.zero_rank_below_delta_min);
    CHECK_NOTHROW(c.validate());
    for (double g : {0.0, -0.1, 1.0000001, std::nan("")}) {
        LearnerConfig bad;
        bad.gamma = g;
        CHECK_THROWS_AS(bad.validate(), LearnerError);
    }
    LearnerConfig one;
    one.gamma = 1.0;
    one.delta_min = 0.0;
    CHECK_NOTHROW(one.validate());
    LearnerConfig neg;
    neg.binary_threshold = -0.01;
    CHECK_THROWS_AS(neg.validate(), LearnerError);

    CHECK(projection_mode_from_string("independent") == ProjectionMode::IndependentPositive);
    CHECK(projection_mode_from_string(to_string(ProjectionMode::Differential)) == ProjectionMode::Differential);
    CHECK(weight_scheme_from_string("binary") == WeightScheme::Binary);
    CHECK(weight_scheme_from_string(to_string(WeightScheme::Uniform)) == WeightScheme::Uniform);
    CHECK_THROWS_AS(weight_scheme_from_string("sigmoid"), LearnerError);
    CHECK_THROWS_AS(projection_mode_from_string("dual"), LearnerError);
}

TEST_CASE("cross-covariance") {
    SUBCASE("single outer product") {
        const Matrix h(1, 2, {1, 0});
        const Matrix hp(1, 2, {0, 1});
        CHECK(cross_covariance(h, hp) == Matrix(2, 2, {0, 1, 0, 0}));
    }
    SUBCASE("identity rows give a symmetric PSD result") {
        Matrix eye(3, 3);
        for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
        const auto om = cross_covariance(eye, eye);
        CHECK(om == linalg::transpose(om));
        for (double ev : oracle::symmetric_eigenvalues(testutil::to_oracle(om))) CHECK(ev >= -1e-15);
    }
    SUBCASE("matches the outer-product sum") {
        Rng rng(21);
        const auto h = random_matrix(rng, 5, 3), hp = random_matrix(rng, 5, 3);
        const auto ref = testutil::from_oracle(
            oracle::outer_product_mean(testutil::to_oracle(h), testutil::to_oracle(hp)));
        CHECK(max_diff(cross_covariance(h, hp), ref) <= 1e-12);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(cross_covariance(Matrix(3, 2), Matrix(3, 3)), LearnerError);
        CHECK_THROWS_AS(cross_covariance(Matrix(3, 2), Matrix(2, 2)), LearnerError);
        CHECK_THROWS_AS(cross_covariance(Matrix(0, 2), Matrix(0, 2)), LearnerError);
    }
}

TEST_CASE("differential covariance") {
    Rng rng(22);
    const auto h = random_matrix(rng, 7, 4), hp = random_matrix(rng, 7, 4), hm = random_matrix(rng, 7, 4);
    CHECK(differential_cov(h, hp, hp) == Matrix(4, 4));
    CHECK(max_diff(differential_cov(h, hp, Matrix(7, 4)), cross_covariance(h, hp)) <= 1e-15);
    CHECK(max_diff(differential_cov(h, hp, hm), differential_cov_two_pass(h, hp, hm)) <= 1e-12);
    // Against the oracle built from two outer-product sums.
    const auto op = oracle::outer_product_mean(testutil::to_oracle(h), testutil::to_oracle(hp));
    const auto om = oracle::outer_product_mean(testutil::to_oracle(h), testutil::to_oracle(hm));
    Matrix ref(4, 4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) ref(i, j) = op[i][j] - om[i][j];
    CHECK(max_diff(differential_cov(h, hp, hm), ref) <= 1e-12);
    CHECK_THROWS_AS(differential_cov(h, hp, Matrix(6, 4)), LearnerError);
}

TEST_CASE("discriminability") {
    Rng rng(23);
    const auto a = random_matrix(rng, 4, 3);
    CHECK(discriminability(a, a) == 0.0);
    CHECK(discriminability(Matrix(1, 2, {3, 4}), Matrix(1, 2)) == 5.0);
    CHECK(discriminability(Matrix(2, 2, {1, 0, 0, 3}), Matrix(2, 2)) == 2.0);
    CHECK_THROWS_AS(discriminability(Matrix(0, 2), Matrix(0, 2)), LearnerError);
    CHECK_THROWS_AS(discriminability(Matrix(2, 2), Matrix(2, 3)), LearnerError);
}

TEST_CASE("head weights") {
    LearnerConfig c;
    CHECK(std::abs(head_weight(c.delta_min, c) - std::log(2.0)) <= 1e-12);
    CHECK(std::abs(head_weight(c.delta_min + 2.0, c) - 2.1269280110429727) <= 1e-12);
    c.scheme = WeightScheme::Uniform;
    CHECK(head_weight(0.0, c) == 1.0);
    CHECK(head_weight(5.0, c) == 1.0);
    c.scheme = WeightScheme::Binary;
    CHECK(head_weight(0.119, c) == 0.0);
    CHECK(head_weight(0.120, c) == 1.0);
    CHECK(head_weight(3.0, c) == 1.0);
}

TEST_CASE("softplus is accurate and overflow-safe") {
    for (double x = -30.0; x <= 30.0; x += 0.37) CHECK(std::abs(softplus(x) - std::log1p(std::exp(x))) <= 1e-12);
    CHECK(softplus(1000.0) == 1000.0);
    CHECK(softplus(-1000.0) == 0.0);
    CHECK(softplus(31.0) == 31.0);
    CHECK(std::abs(softplus(-31.0) - std::exp(-31.0)) <= 1e-25);
    CHECK(std::isfinite(softplus(1e308)));
}

TEST_CASE("softplus weights increase strictly with D") {
    LearnerConfig c;
    double prev = -1.0;
    for (double d = 0.0; d < 3.0; d += 0.01) {
        const double w = head_weight(d, c);
        CHECK(w > prev);
        prev = w;
    }
}

TEST_CASE("learn_head follows the chosen decomposition") {
    Rng rng(24);
    const BankEntry e{random_matrix(rng, 12, 6), random_matrix(rng, 12, 6), random_matrix(rng, 12, 6)};
    LearnerConfig c;
    c.gamma = 0.8;
    const auto hp = learn_head(e, 1, 2, Channel::Value, c);
    CHECK(hp.layer == 1);
    CHECK(hp.head == 2);
    CHECK(hp.channel == Channel::Value);
    CHECK(hp.basis == linalg::build_projection(linalg::svd(differential_cov(e.h, e.h_plus, e.h_minus)), 0.8));
    CHECK(hp.discriminability == discriminability(e.h_plus, e.h_minus));
    CHECK(hp.weight == head_weight(hp.discriminability, c));

    c.mode = ProjectionMode::IndependentPositive;
    const auto ip = learn_head(e, 0, 0, Channel::Key, c);
    CHECK(ip.basis == linalg::build_projection(linalg::svd(cross_covariance(e.h, e.h_plus)), 0.8));

    c.energy = linalg::EnergyDefinition::Squared;
    const auto sq = learn_head(e, 0, 0, Channel::Key, c);
    CHECK(sq.basis == linalg::build_projection(linalg::svd(cross_covariance(e.h, e.h_plus)), 0.8,
                                               linalg::EnergyDefinition::Squared));
    CHECK(sq.rank() <= ip.rank());
}

TEST_CASE("zero-rank switch below delta_min") {
    Rng rng(25);
    const auto h = random_matrix(rng, 10, 4), hp = random_matrix(rng, 10, 4);
    BankEntry e{h, hp, linalg::scale(hp, 0.99)};  // small D
    LearnerConfig c;
    c.delta_min = 100.0;
    CHECK(learn_head(e, 0, 0, Channel::Key, c).rank() > 0);
    c.zero_rank_below_delta_min = true;
    const auto z = learn_head(e, 0, 0, Channel::Key, c);
    CHECK(z.rank() == 0);
    CHECK(z.weight == head_weight(z.discriminability, c));
}

TEST_CASE("a head with H+ = H- gets rank 0 and acts as the identity") {
    Rng rng(26);
    const auto h = random_matrix(rng, 8, 5), hp = random_matrix(rng, 8, 5);
    LearnerConfig c;
    c.delta_min = 0.0;
    const auto hd = learn_head(BankEntry{h, hp, hp}, 0, 0, Channel::Key, c);
    CHECK(hd.rank() == 0);
    CHECK(hd.discriminability == 0.0);
    CHECK(std::abs(hd.weight - std::log(2.0)) <= 1e-12);
    CHECK(hd.weight < 0.7);
    const auto k = testutil::random_vector(rng, 5);
    CHECK(steering::apply_key_edit(k, hd, 0.4) == k);
}

TEST_CASE("learn_plan coverage, provenance and errors") {
    Rng rng(27);
    const auto kb = make_bank(rng, Channel::Key, 3, 2, 9, 4);
    const auto vb = make_bank(rng, Channel::Value, 3, 2, 9, 4);
    const LearnerConfig c;
    const auto p = learn_plan(kb, &vb, c, 0.4, 0.1, 1234);
    CHECK(p.key_heads.size() == 6);
    CHECK(p.value_heads.size() == 6);
    CHECK(p.g_k == 0.4);
    CHECK(p.g_v == 0.1);
    CHECK(p.config == c);
    CHECK(p.fingerprint == 1234);
    CHECK_NOTHROW(p.validate());
    for (std::size_t l = 0; l < 3; ++l)
        for (std::size_t h = 0; h < 2; ++h) {
            CHECK(p.key_head(l, h).layer == l);
            CHECK(p.key_head(l, h).head == h);
            CHECK(p.key_head(l, h) == learn_head(kb.at(l, h), l, h, Channel::Key, c));
            CHECK(p.value_head(l, h) == learn_head(vb.at(l, h), l, h, Channel::Value, c));
        }
    CHECK_THROWS_AS(p.key_head(3, 0), LearnerError);

    const auto ko = learn_plan(kb, nullptr, c, 0.4, 0.0);
    CHECK_FALSE(ko.has_values());
    CHECK_THROWS_AS(ko.value_head(0, 0), LearnerError);
    CHECK_THROWS_AS(learn_plan(kb, nullptr, c, 0.4, 0.1), LearnerError);
    CHECK_THROWS_AS(learn_plan(vb, nullptr, c, 0.4, 0.0), LearnerError);
    CHECK_THROWS_AS(learn_plan(kb, &kb, c, 0.4, 0.0), LearnerError);
    CHECK_THROWS_AS(learn_plan(kb, &vb, c, std::nan(""), 0.0), LearnerError);
    auto other = make_bank(rng, Channel::Value, 2, 2, 9, 4);
    CHECK_THROWS_AS(learn_plan(kb, &other, c, 0.4, 0.1), LearnerError);
    auto broken = kb;
    broken.entries.pop_back();
    CHECK_THROWS_AS(learn_plan(broken, nullptr, c, 0.4, 0.0), LearnerError);
}

TEST_CASE("plan validation rejects inconsistent plans") {
    Rng rng(28);
    const auto kb = make_bank(rng, Channel::Key, 2, 2, 6, 4);
    const auto p = learn_plan(kb, nullptr, LearnerConfig{}, 0.4, 0.0);
    auto bad = p;
    bad.key_heads.pop_back();
    CHECK_THROWS_AS(bad.validate(), LearnerError);
    bad = p;
    std::swap(bad.key_heads[0], bad.key_heads[1]);
    CHECK_THROWS_AS(bad.validate(), LearnerError);
    bad = p;
    bad.g_v = 0.1;
    CHECK_THROWS_AS(bad.validate(), LearnerError);
    bad = p;
    bad.g_k = INFINITY;
    CHECK_THROWS_AS(bad.validate(), LearnerError);
    bad = p;
    bad.key_heads[2].weight = -1.0;
    CHECK_THROWS_AS(bad.validate(), LearnerError);
    bad = p;
    bad.key_heads[1].basis = linalg::OrthonormalBasis(5);
    CHECK_THROWS_AS(bad.validate(), LearnerError);
}

TEST_CASE("weight schemes across a plan") {
    Rng rng(29);
    const auto kb = make_bank(rng, Channel::Key, 2, 3, 8, 4);
    LearnerConfig c;
    c.scheme = WeightScheme::Uniform;
    for (const auto& hp : learn_plan(kb, nullptr, c, 0.4, 0.0).key_heads) CHECK(hp.weight == 1.0);
    c.scheme = WeightScheme::Binary;
    c.binary_threshold = 2.0;
    for (const auto& hp : learn_plan(kb, nullptr, c, 0.4, 0.0).key_heads) {
        CHECK((hp.weight == 0.0 || hp.weight == 1.0));
        CHECK(hp.weight == (hp.discriminability >= 2.0 ? 1.0 : 0.0));
    }
    c.scheme = WeightScheme::Softplus;
    for (const auto& hp : learn_plan(kb, nullptr, c, 0.4, 0.0).key_heads)
        CHECK(std::abs(hp.weight - std::log1p(std::exp(hp.discriminability - c.delta_min))) <= 1e-12);
}

TEST_CASE("scaling the bank scales D and Omega but keeps the directions") {
    Rng rng(30);
    const BankEntry e{random_matrix(rng, 15, 5), random_matrix(rng, 15, 5), random_matrix(rng, 15, 5)};
    for (double c : {0.5, 3.0}) {
        const BankEntry s{linalg::scale(e.h, c), linalg::scale(e.h_plus, c), linalg::scale(e.h_minus, c)};
        CHECK(std::abs(discriminability(s) - c * discriminability(e)) <= 1e-12 * c * discriminability(e));
        const auto o = differential_cov(e.h, e.h_plus, e.h_minus);
        const auto os = differential_cov(s.h, s.h_plus, s.h_minus);
        CHECK(max_diff(os, linalg::scale(o, c * c)) <= 1e-12 * c * c * max_abs(o));
        const auto u = linalg::svd(o).u, us = linalg::svd(os).u;
        for (std::size_t j = 0; j < 5; ++j) {
            double best = 0.0;
            for (double sign : {1.0, -1.0}) {
                double worst = 0.0;
                for (std::size_t i = 0; i < 5; ++i) worst = std::max(worst, std::abs(u(i, j) - sign * us(i, j)));
                best = sign > 0 ? worst : std::min(best, worst);
            }
            CHECK(best <= 1e-8);
        }
    }
}

TEST_CASE("a shared direction in both conditions is annihilated end to end") {
    std::mt19937_64 gen(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 8, n = 30;
        const auto q = oracle::random_orthonormal_rows(gen, d, 1);
        std::vector<double> us(q[0].begin(), q[0].end());
        Rng rng(100 + static_cast<std::uint64_t>(trial));
        auto strip = [&](Matrix m) {
            for (std::size_t i = 0; i < m.rows(); ++i) {
                auto r = m.row(i);
                const double p = linalg::dot(r, us);
                for (std::size_t j = 0; j < d; ++j) r[j] -= p * us[j];
            }
            return m;
        };
        const auto h = strip(random_matrix(rng, n, d));
        auto hp = strip(random_matrix(rng, n, d));
        auto hm = strip(random_matrix(rng, n, d));
        for (std::size_t i = 0; i < n; ++i) {
            const double a = 5.0 * rng.normal();
            for (std::size_t j = 0; j < d; ++j) {
                hp(i, j) += a * us[j];
                hm(i, j) += a * us[j];
            }
        }
        const auto om = differential_cov(h, hp, hm);
        CHECK(linalg::norm(linalg::multiply(om, us)) <= 1e-10);
        const auto hd = learn_head(BankEntry{h, hp, hm}, 0, 0, Channel::Key, LearnerConfig{});
        CHECK(linalg::norm(hd.basis.project(us)) <= 1e-8);
    }
}
