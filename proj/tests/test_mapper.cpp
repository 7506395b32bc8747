#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "oracles.hpp"
#include "xbprune/conv.hpp"
#include "xbprune/error.hpp"
#include "xbprune/mapper.hpp"

using namespace xbprune;

namespace {

// 4 -> 4 conv, 2x2 kernel, 2x3 input, pairs on both sides: I = J = 2.
LayerSpec small_layer(std::size_t k_out = 2) {
    LayerSpec layer;
    layer.name = "conv";
    layer.in_fms = 4;
    layer.out_fms = 4;
    layer.kernel_h = layer.kernel_w = 2;
    layer.in_group_size = 2;
    layer.out_group_size = k_out;
    layer.in_h = 2;
    layer.in_w = 3;
    return layer;
}

constexpr CrossbarDims kSmall{12, 4};

GroupMask random_mask(std::size_t I, std::size_t J, double keep, std::mt19937_64& rng) {
    std::bernoulli_distribution coin(keep);
    GroupMask m(I, J, false);
    for (std::size_t i = 0; i < I; ++i)
        for (std::size_t j = 0; j < J; ++j) m.set(i, j, coin(rng));
    return m;
}

LayerPruneState state_for(const GroupMask& masks, Grain grain, std::vector<std::size_t> order) {
    LayerPruneState s;
    s.grain = grain;
    s.order = std::move(order);
    s.masks = masks;
    return s;
}

// A random conv layer small enough to map onto `dims` with a few width slices.
struct RandomLayer {
    LayerSpec layer;
    CrossbarDims dims;
};

RandomLayer random_layer(std::mt19937_64& rng, std::size_t k_out) {
    std::uniform_int_distribution<std::size_t> pick(0, 1000);
    RandomLayer r;
    LayerSpec& l = r.layer;
    l.name = "rand";
    l.in_group_size = 1 + pick(rng) % 3;
    l.in_fms = l.in_group_size * (1 + pick(rng) % 4);
    l.out_group_size = k_out;
    l.out_fms = k_out * (1 + pick(rng) % 5);
    l.kernel_h = 1 + pick(rng) % 3;
    l.kernel_w = 1 + pick(rng) % 3;
    l.stride = 1 + pick(rng) % 2;
    l.padding = pick(rng) % l.kernel_w;
    l.in_h = l.kernel_h + pick(rng) % 5;
    l.in_w = l.kernel_w + pick(rng) % 6;
    // Rows fit at least one output column per slice; columns fit at least one.
    r.dims.rows = l.in_group_size * l.kernel_h * (l.kernel_w + 2 + pick(rng) % 4);
    r.dims.cols = k_out * (1 + pick(rng) % 4);
    return r;
}

std::vector<std::size_t> slice_widths(const WidthPlan& plan) {
    std::vector<std::size_t> w;
    for (const auto& s : plan.slices) w.push_back(s.out_count);
    return w;
}

}  // namespace

TEST_CASE("the small example layer maps to four full crossbars") {
    const CrossbarLayout dense = map_dense(small_layer(), kSmall);
    CHECK(dense.compute_count == 4);
    CHECK(dense.total_count == 4);
    CHECK(dense.plan.slices.size() == 1);
    for (const auto& xb : dense.crossbars) {
        CHECK(xb.rows_used == 12);
        CHECK(xb.cols_used == 4);
    }
}

TEST_CASE("a single group maps to a single crossbar") {
    LayerSpec layer = small_layer();
    layer.in_fms = layer.out_fms = 2;
    CHECK(map_dense(layer, kSmall).compute_count == 1);
}

TEST_CASE("doubling the output width splits the band and doubles the count") {
    LayerSpec wide = small_layer();
    wide.in_w = 5;  // out_w = 4, so K_out * W_out = 8 > 4 columns
    const CrossbarLayout dense = map_dense(wide, {24, 4});
    REQUIRE(dense.plan.slices.size() == 2);
    // Column enumeration: every (output FM, window) pair once per input group.
    std::size_t columns = 0;
    std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
    for (const auto& xb : dense.crossbars)
        for (const auto& c : xb.columns) {
            ++columns;
            seen.insert({xb.input_group, c.out_fm, c.window});
        }
    CHECK(columns == 2 * 4 * 4);
    CHECK(seen.size() == columns);
    CHECK(dense.compute_count == (columns + 3) / 4);
    CHECK(dense.compute_count == 2 * map_dense(small_layer(), kSmall).compute_count);
}

TEST_CASE("slices cover the output width and respect the crossbar") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const RandomLayer r = random_layer(rng, 1 + static_cast<std::size_t>(trial % 2));
        WidthPlan plan;
        try {
            plan = plan_width(r.layer, r.dims);
        } catch (const GeometryError&) {
            continue;
        }
        std::size_t next = 0;
        for (const auto& s : plan.slices) {
            CHECK(s.out_first == next);
            next += s.out_count;
            CHECK(r.layer.in_group_size * r.layer.kernel_h * s.in_count <= r.dims.rows);
            CHECK(r.layer.out_group_size * s.out_count <= r.dims.cols);
        }
        CHECK(next == r.layer.out_w());
        // Widths differ by at most one.
        const auto widths = slice_widths(plan);
        CHECK(*std::max_element(widths.begin(), widths.end()) - *std::min_element(widths.begin(), widths.end()) <= 1);
    }
}

TEST_CASE("bands that cannot fit raise a geometry error") {
    CHECK_THROWS_AS(map_dense(small_layer(), {3, 4}), GeometryError);
    CHECK_THROWS_AS(map_dense(small_layer(), {12, 1}), GeometryError);
}

TEST_CASE("worked recombination: two crossbars, one per input group") {
    const LayerSpec layer = small_layer(1);  // J = 4, column blocks of 2
    GroupMask masks(2, 4, false);
    masks.set(0, 0, true);
    masks.set(0, 3, true);
    masks.set(1, 1, true);
    masks.set(1, 2, true);
    const CrossbarLayout layout = recombine(layer, masks, kSmall);
    REQUIRE(layout.compute_count == 2);
    CHECK(layout.crossbars[0].input_group == 0);
    CHECK(layout.crossbars[1].input_group == 1);
    CHECK(layout.crossbars[0].columns ==
          std::vector<CrossbarColumn>{{0, 0}, {0, 1}, {3, 0}, {3, 1}});
    CHECK(layout.crossbars[1].columns ==
          std::vector<CrossbarColumn>{{1, 0}, {1, 1}, {2, 0}, {2, 1}});
    // The dense layer needs two crossbars per input group.
    CHECK(dense_baseline(layer, kSmall).compute_count == 4);
}

TEST_CASE("crossbar-grain diagonal masks keep two crossbars") {
    GroupMask masks(2, 2, false);
    masks.set(0, 0, true);
    masks.set(1, 1, true);
    LayerSpec layer = small_layer();
    layer.grain = Grain::Crossbar;
    CHECK(map_crossbar_grain(layer, masks, kSmall).compute_count == 2);

    NetworkSpec net;
    net.crossbar = kSmall;
    net.layers = {layer};
    const std::vector<CrossbarLayout> dense{dense_baseline(layer, kSmall)};
    const std::vector<CrossbarLayout> pruned{map_crossbar_grain(layer, masks, kSmall)};
    const OverheadReport report = count_overhead(net, dense, pruned);
    CHECK(report.dense_compute == 4);
    CHECK(report.pruned_compute == 2);
    CHECK(report.compute_saving() == doctest::Approx(0.5));
}

TEST_CASE("all-ones recombination matches the dense column count") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const RandomLayer r = random_layer(rng, 1 + static_cast<std::size_t>(trial % 3));
        CrossbarLayout dense, packed;
        try {
            dense = map_dense(r.layer, r.dims);
        } catch (const GeometryError&) {
            continue;
        }
        packed = recombine(r.layer, GroupMask(r.layer.in_groups(), r.layer.out_groups(), true), r.dims);
        std::size_t a = 0, b = 0;
        for (const auto& xb : dense.crossbars) a += xb.cols_used;
        for (const auto& xb : packed.crossbars) b += xb.cols_used;
        CHECK(a == b);
        CHECK(packed.compute_count <= dense.compute_count);
    }
}

TEST_CASE("layout invariants and packing count for random masks") {
    std::mt19937_64 rng(3);
    int checked = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const RandomLayer r = random_layer(rng, 1 + static_cast<std::size_t>(trial % 2));
        WidthPlan plan;
        try {
            plan = plan_width(r.layer, r.dims);
        } catch (const GeometryError&) {
            continue;
        }
        ++checked;
        const GroupMask masks = random_mask(r.layer.in_groups(), r.layer.out_groups(), 0.5, rng);
        const std::size_t splits = plan.slices.size();

        const CrossbarLayout col = recombine(r.layer, masks, r.dims);
        CHECK(col.compute_count ==
              oracle::packed_crossbars(masks, r.layer.out_group_size, slice_widths(plan), r.dims.cols));
        const CrossbarLayout xbar = map_crossbar_grain(r.layer, masks, r.dims);
        CHECK(xbar.compute_count == masks.count() * splits);

        for (const CrossbarLayout* layout : {&col, &xbar}) {
            std::map<std::tuple<std::size_t, std::size_t, std::size_t>, int> seen;
            for (const auto& xb : layout->crossbars) {
                CHECK(xb.cols_used <= r.dims.cols);
                CHECK(xb.rows_used <= r.dims.rows);
                for (const auto& c : xb.columns) {
                    CHECK(masks.at(xb.input_group, c.out_fm / r.layer.out_group_size));
                    ++seen[{xb.input_group, c.out_fm, c.window}];
                }
            }
            // Every surviving (i, q, window) appears exactly once.
            std::size_t expected = 0;
            for (std::size_t i = 0; i < masks.in_groups(); ++i)
                for (std::size_t q = 0; q < r.layer.out_fms; ++q)
                    if (masks.at(i, q / r.layer.out_group_size))
                        for (std::size_t x = 0; x < r.layer.out_w(); ++x) {
                            ++expected;
                            CHECK(seen[{i, q, x}] == 1);
                        }
            CHECK(seen.size() == expected);
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("crossbar emulation equals the masked dense forward") {
    std::mt19937_64 rng(4);
    int checked = 0;
    for (int trial = 0; trial < 120; ++trial) {
        const std::size_t k_out = 1 + static_cast<std::size_t>(trial % 2);
        const RandomLayer r = random_layer(rng, k_out);
        try {
            plan_width(r.layer, r.dims);
        } catch (const GeometryError&) {
            continue;
        }
        ++checked;
        const Tensor w = oracle::random_weights({r.layer.kernel_h, r.layer.kernel_w, r.layer.in_fms, r.layer.out_fms}, rng);
        const FeatureMaps in = oracle::random_maps(2, r.layer.in_h, r.layer.in_w, r.layer.in_fms, rng);
        std::vector<std::size_t> order = identity_order(r.layer.in_fms);
        std::shuffle(order.begin(), order.end(), rng);
        const GroupMask masks = random_mask(r.layer.in_groups(), r.layer.out_groups(), 0.6, rng);
        for (Grain grain : {Grain::Column, Grain::Crossbar}) {
            const LayerPruneState state = state_for(masks, grain, order);
            const FeatureMaps want = layer_preactivation(r.layer, w, in, &state);
            const FeatureMaps got = execute_layout(r.layer, map_layer(r.layer, &state, r.dims), w, in);
            CHECK(oracle::max_rel_diff(got.data, want.data) <= 1e-9);
        }
    }
    CHECK(checked > 50);
}

TEST_CASE("fully connected layers map as 1x1 maps") {
    LayerSpec fc;
    fc.name = "fc";
    fc.kind = LayerKind::FC;
    fc.in_fms = 12;
    fc.out_fms = 6;
    fc.in_group_size = 4;
    fc.out_group_size = 3;
    fc.relu = false;
    const CrossbarLayout dense = map_dense(fc, {4, 3});
    CHECK(dense.compute_count == 3 * 2);
    std::mt19937_64 rng(5);
    const Tensor w = oracle::random_weights({1, 1, 12, 6}, rng);
    const FeatureMaps in = oracle::random_maps(3, 2, 2, 3, rng);  // flattened to 12 features
    const FeatureMaps got = execute_layout(fc, dense, w, in);
    CHECK(oracle::max_rel_diff(got.data, layer_preactivation(fc, w, in).data) <= 1e-12);
}

TEST_CASE("overhead totals add the non-compute crossbars") {
    std::mt19937_64 rng(6);
    NetworkSpec net;
    net.crossbar = {72, 32};
    for (int l = 0; l < 3; ++l) {
        LayerSpec layer;
        layer.name = "conv" + std::to_string(l);
        layer.in_fms = 16;
        layer.out_fms = 16;
        layer.kernel_h = layer.kernel_w = 3;
        layer.padding = 1;
        layer.in_group_size = 2;
        layer.in_h = layer.in_w = 8;
        layer.non_compute_overhead = static_cast<std::size_t>(l + 1);
        net.layers.push_back(layer);
    }
    std::vector<CrossbarLayout> dense, pruned;
    for (const auto& layer : net.layers) {
        dense.push_back(dense_baseline(layer, net.crossbar));
        pruned.push_back(recombine(layer, random_mask(layer.in_groups(), layer.out_groups(), 0.5, rng), net.crossbar));
    }
    const OverheadReport report = count_overhead(net, dense, pruned);
    std::size_t dc = 0, dt = 0, pc = 0, pt = 0;
    for (std::size_t l = 0; l < 3; ++l) {
        const auto& row = report.layers[l];
        CHECK(row.dense_total == row.dense_compute + net.layers[l].non_compute_overhead);
        CHECK(row.pruned_total == row.pruned_compute + net.layers[l].non_compute_overhead);
        CHECK(row.dense_compute == dense[l].crossbars.size());
        CHECK(row.pruned_compute == pruned[l].crossbars.size());
        CHECK(row.pruned_compute <= row.dense_compute);
        dc += row.dense_compute;
        dt += row.dense_total;
        pc += row.pruned_compute;
        pt += row.pruned_total;
    }
    CHECK(report.dense_compute == dc);
    CHECK(report.dense_total == dt);
    CHECK(report.pruned_compute == pc);
    CHECK(report.pruned_total == pt);

    const OverheadReport same = count_overhead(net, dense, dense);
    CHECK(same.pruned_total == same.dense_total);
}

TEST_CASE("removing connections never adds crossbars") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const RandomLayer r = random_layer(rng, 1);
        try {
            plan_width(r.layer, r.dims);
        } catch (const GeometryError&) {
            continue;
        }
        GroupMask masks(r.layer.in_groups(), r.layer.out_groups(), true);
        std::size_t prev_col = recombine(r.layer, masks, r.dims).compute_count;
        std::size_t prev_xbar = map_crossbar_grain(r.layer, masks, r.dims).compute_count;
        // Clear bits one by one in random order; counts are non-increasing.
        std::vector<std::pair<std::size_t, std::size_t>> bits;
        for (std::size_t i = 0; i < masks.in_groups(); ++i)
            for (std::size_t j = 0; j < masks.out_groups(); ++j) bits.emplace_back(i, j);
        std::shuffle(bits.begin(), bits.end(), rng);
        for (const auto& [i, j] : bits) {
            masks.set(i, j, false);
            const std::size_t col = recombine(r.layer, masks, r.dims).compute_count;
            const std::size_t xbar = map_crossbar_grain(r.layer, masks, r.dims).compute_count;
            CHECK(col <= prev_col);
            CHECK(xbar <= prev_xbar);
            prev_col = col;
            prev_xbar = xbar;
        }
        CHECK(prev_col == 0);
    }
}

TEST_CASE("mask shape mismatches are geometry errors") {
    CHECK_THROWS_AS(recombine(small_layer(), GroupMask(3, 2), kSmall), GeometryError);
    CHECK_THROWS_AS(map_crossbar_grain(small_layer(), GroupMask(2, 3), kSmall), GeometryError);
    const std::vector<std::size_t> bad{0, 0, 1, 2};
    CHECK_THROWS_AS(recombine(small_layer(), GroupMask(2, 2), kSmall, bad), GeometryError);
}
