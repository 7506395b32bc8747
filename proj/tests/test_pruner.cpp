#include <doctest.h>

#include <cstdlib>
#include <random>

#include "oracles.hpp"
#include "xbprune/error.hpp"
#include "xbprune/pruner.hpp"
#include "xbprune/util.hpp"

using namespace xbprune;

namespace {

LayerSpec conv_spec(std::size_t p, std::size_t q, std::size_t k_in, std::size_t k_out, std::size_t side) {
    LayerSpec layer;
    layer.name = "conv";
    layer.in_fms = p;
    layer.out_fms = q;
    layer.kernel_h = layer.kernel_w = 3;
    layer.padding = 1;
    layer.in_group_size = k_in;
    layer.out_group_size = k_out;
    layer.in_h = layer.in_w = side;
    return layer;
}

}  // namespace

TEST_CASE("ratio to budget") {
    CHECK(budget_for_ratio(0.0, 8) == 8);
    CHECK(budget_for_ratio(0.5, 8) == 4);
    CHECK(budget_for_ratio(0.3, 8) == 6);    // round(5.6)
    CHECK(budget_for_ratio(0.35, 10) == 7);  // round(6.5) rounds half away from zero
    CHECK(budget_for_ratio(0.99, 4) == 1);
    CHECK_THROWS_AS(budget_for_ratio(1.0, 4), ValidationError);
    CHECK_THROWS_AS(budget_for_ratio(-0.1, 4), ValidationError);
}

TEST_CASE("importance is the signed sum of the pair convolutions") {
    SUBCASE("constant field") {
        PartialSumBundle b;
        b.samples = 2;
        b.spatial = 5;
        b.in_fms = 3;
        b.out_fms = 4;
        b.pair.assign(2 * 5 * 3 * 4, 1.0);
        for (double v : compute_importance(b)) CHECK(v == 40.0);
    }
    SUBCASE("random bundle against a direct triple sum") {
        std::mt19937_64 rng(1);
        const LayerSpec layer = conv_spec(4, 3, 2, 1, 4);
        const PartialSumBundle b = build_bundle(layer, oracle::random_weights({3, 3, 4, 3}, rng),
                                                oracle::random_maps(3, 4, 4, 4, rng));
        const auto got = compute_importance(b);
        for (std::size_t p = 0; p < 4; ++p) {
            double sum = 0.0;
            for (std::size_t n = 0; n < 3; ++n)
                for (std::size_t s = 0; s < 16; ++s)
                    for (std::size_t q = 0; q < 3; ++q) sum += b.pair_at(n, s, p, q);
            CHECK(got[p] == doctest::Approx(sum).epsilon(1e-9));
        }
    }
    SUBCASE("opposite contributions cancel") {
        PartialSumBundle b;
        b.samples = 1;
        b.spatial = 1;
        b.in_fms = 1;
        b.out_fms = 2;
        b.pair = {1000.0, -1000.0};
        CHECK(compute_importance(b)[0] == 0.0);
    }
}

TEST_CASE("reorder sorts importance descending with stable ties") {
    CHECK(reorder_inputs(std::vector<double>{5, 4, 3}) == std::vector<std::size_t>{0, 1, 2});
    CHECK(reorder_inputs(std::vector<double>{1, 3, 2}) == std::vector<std::size_t>{1, 2, 0});
    CHECK(reorder_inputs(std::vector<double>{2, 7, 2, 7}) == std::vector<std::size_t>{1, 3, 0, 2});
}

TEST_CASE("contribution rates") {
    CHECK(contribution_rates(GroupMask(3, 4, true)) == std::vector<double>{1.0, 1.0, 1.0});
    GroupMask single(3, 4, false);
    single.set(0, 2, true);
    CHECK(contribution_rates(single) == std::vector<double>{0.25, 0.0, 0.0});

    std::mt19937_64 rng(2);
    std::bernoulli_distribution coin(0.4);
    GroupMask m(5, 7, false);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 7; ++j) m.set(i, j, coin(rng));
    const auto rates = contribution_rates(m);
    for (std::size_t i = 0; i < 5; ++i) {
        int ones = 0;
        for (std::size_t j = 0; j < 7; ++j) ones += m.at(i, j);
        CHECK(rates[i] == doctest::Approx(ones / 7.0));
    }
}

TEST_CASE("ratio zero keeps everything and repair reproduces the dense layer") {
    std::mt19937_64 rng(3);
    const LayerSpec layer = conv_spec(4, 4, 2, 1, 6);
    const Tensor w = oracle::random_weights({3, 3, 4, 4}, rng);
    const FeatureMaps in = oracle::random_maps(30, 6, 6, 4, rng);
    const LayerPruneResult r = prune_layer(layer, w, in, PruneTarget::from_ratio(0.0), {});
    CHECK(r.state.masks == GroupMask(2, 4, true));
    CHECK(r.relative_loss_after() < 1e-12);
    CHECK(oracle::max_rel_diff(r.repaired_weights.data, w.data) < 1e-6);
    const FeatureMaps dense = layer_preactivation(layer, w, in);
    CHECK(oracle::max_rel_diff(layer_preactivation(layer, r.repaired_weights, in, &r.state).data, dense.data) < 1e-6);
}

TEST_CASE("explicit crossbar-grain mask: output group 0 only sees input group 0") {
    std::mt19937_64 rng(4);
    LayerSpec layer = conv_spec(4, 4, 2, 2, 5);
    const Tensor w = oracle::random_weights({3, 3, 4, 4}, rng);
    const FeatureMaps in = oracle::random_maps(3, 5, 5, 4, rng);
    LayerPruneState state;
    state.grain = Grain::Crossbar;
    state.order = identity_order(4);
    state.masks = GroupMask(2, 2, false);
    state.masks.set(0, 0, true);
    state.masks.set(1, 1, true);
    const PartialSumBundle b = build_bundle(layer, w, in);
    const FeatureMaps out = layer_preactivation(layer, w, in, &state);
    for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t s = 0; s < 25; ++s) {
            for (std::size_t q : {0u, 1u}) CHECK(out.data[(n * 25 + s) * 4 + q] == doctest::Approx(b.group_at(n, s, 0, q)));
            for (std::size_t q : {2u, 3u}) CHECK(out.data[(n * 25 + s) * 4 + q] == doctest::Approx(b.group_at(n, s, 1, q)));
        }
}

TEST_CASE("pruning results respect budgets, grain rules and repair optimality") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 12; ++trial) {
        const std::size_t k_out = trial % 2 ? 2 : 1;
        const LayerSpec layer = conv_spec(8, 4, 2, k_out, 5);
        const Tensor w = oracle::random_weights({3, 3, 8, 4}, rng);
        const FeatureMaps in = oracle::random_maps(40, 5, 5, 8, rng);
        PruneOptions options;
        options.grain = k_out == 1 ? Grain::Column : Grain::Crossbar;
        options.reorder = trial % 3 == 0;
        options.seed = static_cast<std::uint64_t>(trial);
        const LayerPruneResult r = prune_layer(layer, w, in, PruneTarget::from_ratio(0.5), options);
        CHECK(is_permutation(r.state.order, 8));
        for (std::size_t j = 0; j < r.state.masks.out_groups(); ++j) CHECK(r.state.masks.column_count(j) == 2);
        CHECK(r.loss_after <= r.loss_before * (1 + 1e-12));

        // Pruned connections carry zero weight.
        const auto group_of = r.state.group_of_input(2);
        for (std::size_t tap = 0; tap < 9; ++tap)
            for (std::size_t p = 0; p < 8; ++p)
                for (std::size_t q = 0; q < 4; ++q)
                    if (!r.state.masks.at(group_of[p], q / k_out)) CHECK(r.repaired_weights.data[(tap * 8 + p) * 4 + q] == 0.0);
    }
}

TEST_CASE("column grain on a conv layer needs single-FM output groups") {
    std::mt19937_64 rng(6);
    const LayerSpec layer = conv_spec(4, 4, 2, 2, 4);
    const Tensor w = oracle::random_weights({3, 3, 4, 4}, rng);
    const FeatureMaps in = oracle::random_maps(4, 4, 4, 4, rng);
    PruneOptions options;
    options.grain = Grain::Column;
    CHECK_THROWS_AS(prune_layer(layer, w, in, PruneTarget::from_ratio(0.5), options), ValidationError);
    options.grain = Grain::Crossbar;
    CHECK_NOTHROW(prune_layer(layer, w, in, PruneTarget::from_ratio(0.5), options));
}

TEST_CASE("explicit per-group budgets") {
    std::mt19937_64 rng(7);
    const LayerSpec layer = conv_spec(6, 3, 2, 1, 4);
    const Tensor w = oracle::random_weights({3, 3, 6, 3}, rng);
    const FeatureMaps in = oracle::random_maps(20, 4, 4, 6, rng);
    const LayerPruneResult r = prune_layer(layer, w, in, PruneTarget::from_budgets({1, 2, 3}), {});
    CHECK(r.state.masks.column_count(0) == 1);
    CHECK(r.state.masks.column_count(1) == 2);
    CHECK(r.state.masks.column_count(2) == 3);
    CHECK_THROWS_AS(prune_layer(layer, w, in, PruneTarget::from_budgets({1, 2}), {}), ValidationError);
    CHECK_THROWS_AS(prune_layer(layer, w, in, PruneTarget::from_budgets({1, 4, 1}), {}), ValidationError);
}

TEST_CASE("repaired weights match a QR least-squares oracle") {
    std::mt19937_64 rng(8);
    const LayerSpec layer = conv_spec(4, 2, 2, 1, 6);
    const Tensor w = oracle::random_weights({3, 3, 4, 2}, rng);
    const FeatureMaps in = oracle::random_maps(50, 6, 6, 4, rng);
    PruneOptions options;
    options.seed = 9;
    const LayerPruneResult r = prune_layer(layer, w, in, PruneTarget::from_ratio(0.5), options);
    REQUIRE_FALSE(r.ridge_fallback);
    const FeatureMaps dense = layer_preactivation(layer, w, in);
    const auto group_of = r.state.group_of_input(2);
    for (std::size_t j = 0; j < 2; ++j) {
        std::vector<std::size_t> survivors;
        for (std::size_t p : r.state.order)
            if (r.state.masks.at(group_of[p], j)) survivors.push_back(p);
        const auto& positions = r.regression_positions[j];
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(100, static_cast<Eigen::Index>(9 * survivors.size()));
        Eigen::VectorXd b(100);
        Eigen::Index row = 0;
        for (std::size_t n = 0; n < 50; ++n)
            for (std::size_t s : positions[n]) {
                const long y = static_cast<long>(s / 6), x = static_cast<long>(s % 6);
                for (long ky = 0; ky < 3; ++ky)
                    for (long kx = 0; kx < 3; ++kx) {
                        const long iy = y + ky - 1, ix = x + kx - 1;
                        if (iy < 0 || iy >= 6 || ix < 0 || ix >= 6) continue;
                        for (std::size_t c = 0; c < survivors.size(); ++c)
                            a(row, static_cast<Eigen::Index>((ky * 3 + kx) * static_cast<long>(survivors.size()) + static_cast<long>(c))) =
                                in.at(n, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), survivors[c]);
                    }
                b(row++) = dense.data[(n * 36 + s) * 2 + j];
            }
        const Eigen::VectorXd want = oracle::least_squares_qr(a, b);
        for (std::size_t tap = 0; tap < 9; ++tap)
            for (std::size_t c = 0; c < survivors.size(); ++c) {
                const double got = r.repaired_weights.data[(tap * 4 + survivors[c]) * 2 + j];
                CHECK(got == doctest::Approx(want(static_cast<Eigen::Index>(tap * survivors.size() + c))).epsilon(1e-6));
            }
    }
}

TEST_CASE("rank-deficient repair falls back to ridge and says so") {
    std::mt19937_64 rng(10);
    const LayerSpec layer = conv_spec(4, 2, 2, 1, 4);
    const Tensor w = oracle::random_weights({3, 3, 4, 2}, rng);
    // Two samples give 4 regression rows for 18 unknowns.
    const FeatureMaps in = oracle::random_maps(2, 4, 4, 4, rng);
    const LayerPruneResult r = prune_layer(layer, w, in, PruneTarget::from_ratio(0.5), {});
    CHECK(r.ridge_fallback);
    CHECK(std::all_of(r.repaired_weights.data.begin(), r.repaired_weights.data.end(),
                      [](double v) { return std::isfinite(v); }));
}

TEST_CASE("results do not depend on the worker count") {
    std::mt19937_64 rng(11);
    const LayerSpec layer = conv_spec(8, 8, 2, 1, 5);
    const Tensor w = oracle::random_weights({3, 3, 8, 8}, rng);
    const FeatureMaps in = oracle::random_maps(20, 5, 5, 8, rng);
    PruneOptions options;
    options.seed = 3;
    options.reorder = true;
    ::setenv("XBAR_PRUNE_THREADS", "1", 1);
    const LayerPruneResult serial = prune_layer(layer, w, in, PruneTarget::from_ratio(0.5), options);
    ::setenv("XBAR_PRUNE_THREADS", "6", 1);
    const LayerPruneResult parallel = prune_layer(layer, w, in, PruneTarget::from_ratio(0.5), options);
    ::unsetenv("XBAR_PRUNE_THREADS");
    CHECK(serial.state == parallel.state);
    CHECK(serial.repaired_weights == parallel.repaired_weights);
    CHECK(serial.loss_after == parallel.loss_after);
}

TEST_CASE("planted importance concentrates contributions in the head groups after reorder") {
    std::mt19937_64 rng(12);
    const LayerSpec layer = conv_spec(16, 8, 2, 1, 5);
    Tensor w = oracle::random_weights({3, 3, 16, 8}, rng);
    // Half of the input FMs (odd indices) carry large positive contributions.
    FeatureMaps in = oracle::random_maps(30, 5, 5, 16, rng);
    for (double& v : in.data) v = std::abs(v);
    for (double& v : w.data) v = std::abs(v) * 0.1;
    for (std::size_t k = 0; k < w.size(); ++k)
        if ((k / 8) % 16 % 2 == 1) w.data[k] *= 10.0;
    PruneOptions options;
    options.reorder = true;
    const LayerPruneResult r = prune_layer(layer, w, in, PruneTarget::from_ratio(0.5), options);
    const auto rates = contribution_rates(r.state.masks);
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < 4; ++i) head += rates[i];
    for (std::size_t i = 4; i < 8; ++i) tail += rates[i];
    CHECK(head > tail);
    for (std::size_t k = 0; k < 8; ++k) CHECK(r.state.order[k] % 2 == 1);
}
