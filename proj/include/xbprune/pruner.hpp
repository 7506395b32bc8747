#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "xbprune/conv.hpp"
#include "xbprune/lgd.hpp"
#include "xbprune/network.hpp"

namespace xbprune {

struct PruneOptions {
    Grain grain = Grain::Column;
    bool reorder = false;
    SolverConfig solver;
    std::size_t lgd_samples = 10;        // sampled positions per FM for the mask search
    std::size_t regression_samples = 2;  // sampled positions per FM for weight repair
    std::uint64_t seed = 0;
};

// Either a pruning ratio applied uniformly to every output group, or an
// explicit number of surviving input groups per output group.
struct PruneTarget {
    std::optional<double> ratio;
    std::vector<std::size_t> per_group;

    static PruneTarget from_ratio(double ratio) { return {ratio, {}}; }
    static PruneTarget from_budgets(std::vector<std::size_t> budgets) { return {std::nullopt, std::move(budgets)}; }
};

// max(1, round((1 - ratio) * in_groups)).
std::size_t budget_for_ratio(double ratio, std::size_t in_groups);

// Signed importance of each input FM: the sum of its pair convolutions over
// every output FM, sample and position.
std::vector<double> compute_importance(const PartialSumBundle& bundle);

// FM order by descending importance, ties by ascending index.
std::vector<std::size_t> reorder_inputs(std::span<const double> importance);

struct LayerPruneResult {
    LayerPruneState state;          // grain, FM order, I x J masks
    Tensor repaired_weights;        // [kh, kw, P, Q], pruned connections zero
    std::vector<std::size_t> budgets;
    std::vector<double> solver_loss;  // per output group, on the sampled design
    // Squared residuals against the dense outputs over the regression sample,
    // summed over all output groups, before and after the least-squares repair.
    double loss_before = 0.0;
    double loss_after = 0.0;
    double target_energy = 0.0;  // squared norm of the dense outputs on the same sample
    bool ridge_fallback = false; // some normal equations needed regularization
    std::vector<std::vector<std::vector<std::size_t>>> regression_positions;  // [j][n] -> positions

    double relative_loss_before() const noexcept { return target_energy > 0 ? loss_before / target_energy : 0.0; }
    double relative_loss_after() const noexcept { return target_energy > 0 ? loss_after / target_energy : 0.0; }
};

// Crossbar-aware pruning of one layer. `inputs` are the activations entering
// the layer; `dense_preact`, when given, is the regression target (the
// original network's pre-activation for the same samples), otherwise the
// layer's own dense output on `inputs`. Output groups are solved in parallel
// with seeds derive_seed(options.seed, layer.name, j).
LayerPruneResult prune_layer(const LayerSpec& layer, const Tensor& weights, const FeatureMaps& inputs,
                             const PruneTarget& target, const PruneOptions& options,
                             const FeatureMaps* dense_preact = nullptr);

// Fraction of output groups that use each input group.
std::vector<double> contribution_rates(const GroupMask& masks);

}  // namespace xbprune
