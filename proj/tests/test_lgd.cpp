#include <doctest.h>

#include <numeric>
#include <random>
#include <set>

#include "oracles.hpp"
#include "xbprune/error.hpp"
#include "xbprune/lgd.hpp"

using namespace xbprune;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = normal(rng);
    return m;
}

std::set<std::size_t> support_of(const SparseCoefficients& c) {
    std::set<std::size_t> s;
    for (std::size_t i = 0; i < c.support.size(); ++i)
        if (c.support[i]) s.insert(i);
    return s;
}

}  // namespace

TEST_CASE("projection keeps r entries among the r + r0 largest magnitudes") {
    // The two smallest magnitudes sit at indices 2 and 4.
    Eigen::VectorXd beta(6);
    beta << 0.9, -0.7, 0.05, 0.6, -0.1, 0.8;
    const std::set<std::size_t> allowed{0, 1, 3, 5};
    std::set<std::set<std::size_t>> seen;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        std::mt19937_64 rng(seed);
        const SparseCoefficients c = project_l0(beta, 3, 1, rng);
        const auto s = support_of(c);
        CHECK(s.size() == 3);
        for (std::size_t i : s) {
            CHECK(allowed.count(i) == 1);
            CHECK(c.values(static_cast<Eigen::Index>(i)) == beta(static_cast<Eigen::Index>(i)));
        }
        seen.insert(s);
    }
    // Every 3-subset of the four candidates is reachable.
    CHECK(seen.size() == 4);
}

TEST_CASE("zero relaxation is the deterministic top-r") {
    std::mt19937_64 gen(1);
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::VectorXd beta = random_matrix(8, 1, gen);
        std::vector<std::size_t> idx(8);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return std::abs(beta(a)) > std::abs(beta(b)); });
        std::mt19937_64 rng(static_cast<std::uint64_t>(trial));
        const auto s = support_of(project_l0(beta, 3, 0, rng));
        CHECK(s == std::set<std::size_t>(idx.begin(), idx.begin() + 3));
    }
}

TEST_CASE("full budget keeps beta as is") {
    Eigen::VectorXd beta(4);
    beta << 1.0, -2.0, 0.0, 3.0;
    std::mt19937_64 rng(3);
    const SparseCoefficients c = project_l0(beta, 4, 1, rng);
    CHECK(c.nnz() == 4);
    CHECK(c.values == beta);
}

TEST_CASE("all-zero beta falls back to uniform draws over the first r + r0 indices") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const auto s = support_of(project_l0(Eigen::VectorXd::Zero(7), 2, 2, rng));
        CHECK(s.size() == 2);
        CHECK(*s.rbegin() < 4);
    }
}

TEST_CASE("projection budget errors") {
    std::mt19937_64 rng(5);
    CHECK_THROWS_AS(project_l0(Eigen::VectorXd::Ones(3), 4, 0, rng), ValidationError);
    CHECK_THROWS_AS(project_l0(Eigen::VectorXd::Ones(3), 0, 0, rng), ValidationError);
}

TEST_CASE("gradient step") {
    std::mt19937_64 rng(6);
    const Eigen::MatrixXd x = random_matrix(20, 6, rng);
    const Eigen::VectorXd y = random_matrix(20, 1, rng);
    const Eigen::VectorXd b = random_matrix(6, 1, rng);

    SUBCASE("matches the explicit gradient") {
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(6);
        for (Eigen::Index r = 0; r < 20; ++r) {
            const double resid = x.row(r).dot(b) - y(r);
            grad += resid * x.row(r).transpose();
        }
        const Eigen::VectorXd got = gradient_step(b, x, y, 0.01);
        for (Eigen::Index i = 0; i < 6; ++i) CHECK(got(i) == doctest::Approx(b(i) - 0.01 * grad(i)).epsilon(1e-12));
    }
    SUBCASE("zero step") { CHECK(gradient_step(b, x, y, 0.0) == b); }
    SUBCASE("stationary at the least-squares solution") {
        const Eigen::VectorXd ls = oracle::least_squares_qr(x, y);
        CHECK((gradient_step(ls, x, y, 0.3) - ls).norm() < 1e-10);
    }
    SUBCASE("divergence is a numerical error") {
        CHECK_THROWS_AS(gradient_step(b, x * 1e200, y, 1e200), NumericalError);
    }
}

TEST_CASE("scalar rescaling") {
    std::mt19937_64 rng(7);
    const Eigen::MatrixXd x = random_matrix(30, 4, rng);
    const Eigen::VectorXd b = random_matrix(4, 1, rng);
    const Eigen::VectorXd z = x * b;

    CHECK(fit_scale(b, x, 2.0 * z) == doctest::Approx(2.0).epsilon(1e-12));

    // Remove the z component from a random vector to get y orthogonal to z.
    Eigen::VectorXd y = random_matrix(30, 1, rng);
    y -= (y.dot(z) / z.dot(z)) * z;
    CHECK(std::abs(fit_scale(b, x, y)) < 1e-12);

    const Eigen::VectorXd target = random_matrix(30, 1, rng);
    CHECK(fit_scale(b, x, target) == doctest::Approx(z.dot(target) / z.dot(z)).epsilon(1e-12));

    CHECK(fit_scale(Eigen::VectorXd::Zero(4), x, target) == 1.0);
    SparseCoefficients zero{{0, 0, 0, 0}, Eigen::VectorXd::Zero(4)};
    CHECK(rescale_to_fit(zero, x, target) == 1.0);
    CHECK(zero.values.isZero(0.0));
}

TEST_CASE("planted support is recovered and matches the exhaustive optimum") {
    std::mt19937_64 rng(8);
    for (std::size_t r : {2u, 3u, 4u}) {
        const Eigen::MatrixXd x = random_matrix(40, 6, rng);
        std::vector<std::size_t> idx(6);
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        Eigen::VectorXd planted = Eigen::VectorXd::Zero(6);
        for (std::size_t k = 0; k < r; ++k) planted(static_cast<Eigen::Index>(idx[k])) = 1.0;
        const Eigen::VectorXd y = x * planted;

        SolverConfig config;
        config.seed = 100 + r;
        const L0Solution sol = solve_l0_mask(x, y, r, config);
        const auto best = oracle::best_subset(x, y, r);
        for (std::size_t i = 0; i < 6; ++i) {
            CHECK(sol.mask[i] == (planted(static_cast<Eigen::Index>(i)) != 0.0));
            CHECK(static_cast<int>(sol.mask[i]) == best.mask[i]);
        }
        CHECK(masked_loss(sol.mask, x, y) < 1e-18 * y.squaredNorm() + 1e-20);
    }
}

TEST_CASE("full budget selects everything") {
    std::mt19937_64 rng(9);
    const Eigen::MatrixXd x = random_matrix(25, 5, rng);
    const Eigen::VectorXd y = random_matrix(25, 1, rng);
    const L0Solution sol = solve_l0_mask(x, y, 5, {});
    CHECK(std::all_of(sol.mask.begin(), sol.mask.end(), [](auto v) { return v == 1; }));
    CHECK(masked_loss(sol.mask, x, y) == doctest::Approx(oracle::scaled_mask_loss(x, y, {1, 1, 1, 1, 1})).epsilon(1e-9));
}

TEST_CASE("solver properties over random instances") {
    std::mt19937_64 rng(10);
    std::uniform_int_distribution<int> dim(2, 8);
    for (int trial = 0; trial < 60; ++trial) {
        const auto I = static_cast<std::size_t>(dim(rng));
        const Eigen::MatrixXd x = random_matrix(32, static_cast<Eigen::Index>(I), rng);
        const Eigen::VectorXd y = random_matrix(32, 1, rng);
        const std::size_t r = 1 + static_cast<std::size_t>(trial) % I;
        SolverConfig config;
        config.seed = static_cast<std::uint64_t>(trial);
        const L0Solution a = solve_l0_mask(x, y, r, config);
        CHECK(std::count(a.mask.begin(), a.mask.end(), 1) == static_cast<long>(r));
        CHECK(a.best_loss.size() == config.iterations);
        CHECK(std::is_sorted(a.best_loss.rbegin(), a.best_loss.rend()));
        const L0Solution b = solve_l0_mask(x, y, r, config);
        CHECK(a.mask == b.mask);
        CHECK(a.loss == b.loss);
    }
}

TEST_CASE("solver config defaults and validation") {
    SolverConfig config;
    CHECK(config.iterations == 50);
    CHECK(config.relaxation == 1);
    config.learning_rate = -1.0;
    CHECK_THROWS_AS(config.validate(), ValidationError);
    config.learning_rate.reset();
    config.iterations = 0;
    CHECK_THROWS_AS(config.validate(), ValidationError);
}
