#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "xbprune/network.hpp"
#include "xbprune/tensor.hpp"

namespace xbprune {

// Output columns [out_first, out_first + out_count) of every output row are
// computed by one set of crossbars, which read input columns
// [in_first, in_first + in_count).
struct WidthSlice {
    std::size_t out_first = 0;
    std::size_t out_count = 0;
    std::size_t in_first = 0;
    std::size_t in_count = 0;
};

// Semi-folded placement of a layer: the fewest even splits of the output
// width whose bands fit the crossbar (rows = K_in * kernel_h * input span,
// cols = K_out * output span). Throws GeometryError when even single-column
// slices do not fit.
struct WidthPlan {
    std::vector<WidthSlice> slices;
    std::size_t rows_needed = 0;  // largest band over the slices
    std::size_t cols_needed = 0;
};
WidthPlan plan_width(const LayerSpec& layer, CrossbarDims dims);

// One physical crossbar column: output FM `out_fm` at output column `window`.
struct CrossbarColumn {
    std::size_t out_fm = 0;
    std::size_t window = 0;
    bool operator==(const CrossbarColumn&) const = default;
};

struct Crossbar {
    std::size_t input_group = 0;
    std::size_t slice = 0;
    std::vector<CrossbarColumn> columns;
    std::size_t rows_used = 0;
    std::size_t cols_used = 0;
};

struct CrossbarLayout {
    std::string layer;
    Grain grain = Grain::Column;
    std::size_t in_group_size = 1;
    std::vector<std::size_t> order;  // input FM order used for the rows
    WidthPlan plan;
    std::vector<Crossbar> crossbars;
    std::size_t compute_count = 0;
    std::size_t non_compute = 0;
    std::size_t total_count = 0;
};

// One crossbar per (input group, output group, width slice).
CrossbarLayout map_dense(const LayerSpec& layer, CrossbarDims dims);

// Crossbar grain: the dense layout minus crossbars whose mask bit is zero.
CrossbarLayout map_crossbar_grain(const LayerSpec& layer, const GroupMask& masks, CrossbarDims dims,
                                  std::span<const std::size_t> order = {});

// Column grain: per input group and slice, surviving column blocks (K_out FMs
// x slice width, ascending output group) are packed first-fit into crossbars
// of `dims.cols` columns.
CrossbarLayout recombine(const LayerSpec& layer, const GroupMask& masks, CrossbarDims dims,
                         std::span<const std::size_t> order = {});

// Layout of a layer as deployed: dispatches on the pruning state's grain, or
// the unpruned baseline for the layer's own grain when `state` is null.
CrossbarLayout map_layer(const LayerSpec& layer, const LayerPruneState* state, CrossbarDims dims);
CrossbarLayout dense_baseline(const LayerSpec& layer, CrossbarDims dims);

// Emulates the crossbars of `layout` on `input`: each output row is produced
// by driving every crossbar's rows with the matching input band and summing
// column currents across crossbars. Returns the layer pre-activation.
FeatureMaps execute_layout(const LayerSpec& layer, const CrossbarLayout& layout, const Tensor& weights,
                           const FeatureMaps& input);

struct LayerOverhead {
    std::string layer;
    std::size_t dense_total = 0;
    std::size_t dense_compute = 0;
    std::size_t pruned_total = 0;
    std::size_t pruned_compute = 0;
};

struct OverheadReport {
    std::vector<LayerOverhead> layers;
    std::size_t dense_total = 0;
    std::size_t dense_compute = 0;
    std::size_t pruned_total = 0;
    std::size_t pruned_compute = 0;

    double compute_saving() const noexcept {
        return dense_compute ? 1.0 - static_cast<double>(pruned_compute) / static_cast<double>(dense_compute) : 0.0;
    }
};

OverheadReport count_overhead(const NetworkSpec& network, std::span<const CrossbarLayout> dense,
                              std::span<const CrossbarLayout> pruned);
// Dense baseline vs. the model's current pruning state for every layer.
OverheadReport count_overhead(const Model& model);

}  // namespace xbprune
