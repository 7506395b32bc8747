#include "xbprune/mapper.hpp"

#include <algorithm>

#include "xbprune/error.hpp"

namespace xbprune {

namespace {

// Spatial extents of the layer as mapped; FC layers are 1x1 maps.
struct Extents {
    std::size_t in_h, in_w, out_h, out_w;
};

Extents extents(const LayerSpec& layer) {
    if (layer.kind == LayerKind::FC) return {1, 1, 1, 1};
    return {layer.in_h, layer.in_w, layer.out_h(), layer.out_w()};
}

std::vector<WidthSlice> split_width(const LayerSpec& layer, const Extents& e, std::size_t parts) {
    std::vector<WidthSlice> slices;
    std::size_t first = 0;
    for (std::size_t k = 0; k < parts; ++k) {
        WidthSlice s;
        s.out_first = first;
        s.out_count = e.out_w / parts + (k < e.out_w % parts ? 1 : 0);
        first += s.out_count;
        // Real (unpadded) input columns touched by the slice's windows.
        const long long lo = static_cast<long long>(s.out_first * layer.stride) - static_cast<long long>(layer.padding);
        const long long hi = static_cast<long long>((s.out_first + s.out_count - 1) * layer.stride + layer.kernel_w) -
                             static_cast<long long>(layer.padding);
        const long long a = std::max<long long>(lo, 0);
        const long long b = std::min<long long>(hi, static_cast<long long>(e.in_w));
        s.in_first = static_cast<std::size_t>(a);
        s.in_count = b > a ? static_cast<std::size_t>(b - a) : 0;
        slices.push_back(s);
    }
    return slices;
}

std::vector<std::size_t> resolve_order(const LayerSpec& layer, std::span<const std::size_t> order) {
    if (order.empty()) return identity_order(layer.in_fms);
    if (!is_permutation(order, layer.in_fms))
        throw GeometryError("layer '" + layer.name + "': input order is not a permutation of [0, P)");
    return {order.begin(), order.end()};
}

void check_masks(const LayerSpec& layer, const GroupMask& masks) {
    if (masks.in_groups() != layer.in_groups() || masks.out_groups() != layer.out_groups())
        throw GeometryError("layer '" + layer.name + "': mask is " + std::to_string(masks.in_groups()) + "x" +
                            std::to_string(masks.out_groups()) + ", layer has I=" + std::to_string(layer.in_groups()) +
                            ", J=" + std::to_string(layer.out_groups()));
}

CrossbarLayout empty_layout(const LayerSpec& layer, CrossbarDims dims, Grain grain, std::span<const std::size_t> order) {
    CrossbarLayout layout;
    layout.layer = layer.name;
    layout.grain = grain;
    layout.in_group_size = layer.in_group_size;
    layout.order = resolve_order(layer, order);
    layout.plan = plan_width(layer, dims);
    layout.non_compute = layer.non_compute_overhead;
    return layout;
}

std::size_t band_rows(const LayerSpec& layer, const WidthSlice& s) { return layer.in_group_size * layer.kernel_h * s.in_count; }

void finish(CrossbarLayout& layout) {
    layout.compute_count = layout.crossbars.size();
    layout.total_count = layout.compute_count + layout.non_compute;
}

void append_block(Crossbar& xb, std::size_t first_fm, std::size_t fms, const WidthSlice& s) {
    for (std::size_t k = 0; k < fms; ++k)
        for (std::size_t x = 0; x < s.out_count; ++x) xb.columns.push_back({first_fm + k, s.out_first + x});
}

}  // namespace

WidthPlan plan_width(const LayerSpec& layer, CrossbarDims dims) {
    const Extents e = extents(layer);
    for (std::size_t parts = 1; parts <= e.out_w; ++parts) {
        WidthPlan plan;
        plan.slices = split_width(layer, e, parts);
        for (const auto& s : plan.slices) {
            plan.rows_needed = std::max(plan.rows_needed, band_rows(layer, s));
            plan.cols_needed = std::max(plan.cols_needed, layer.out_group_size * s.out_count);
        }
        if (plan.rows_needed <= dims.rows && plan.cols_needed <= dims.cols) return plan;
    }
    throw GeometryError("layer '" + layer.name + "': a semi-folded band of K_in*kernel_h*span rows and K_out columns "
                        "does not fit a " + std::to_string(dims.rows) + "x" + std::to_string(dims.cols) +
                        " crossbar even at single-column width slices");
}

CrossbarLayout map_dense(const LayerSpec& layer, CrossbarDims dims) {
    return map_crossbar_grain(layer, GroupMask(layer.in_groups(), layer.out_groups(), true), dims);
}

CrossbarLayout map_crossbar_grain(const LayerSpec& layer, const GroupMask& masks, CrossbarDims dims,
                                  std::span<const std::size_t> order) {
    check_masks(layer, masks);
    CrossbarLayout layout = empty_layout(layer, dims, Grain::Crossbar, order);
    for (std::size_t i = 0; i < layer.in_groups(); ++i)
        for (std::size_t j = 0; j < layer.out_groups(); ++j) {
            if (!masks.at(i, j)) continue;
            for (std::size_t t = 0; t < layout.plan.slices.size(); ++t) {
                const WidthSlice& s = layout.plan.slices[t];
                Crossbar xb;
                xb.input_group = i;
                xb.slice = t;
                append_block(xb, j * layer.out_group_size, layer.out_group_size, s);
                xb.rows_used = band_rows(layer, s);
                xb.cols_used = xb.columns.size();
                layout.crossbars.push_back(std::move(xb));
            }
        }
    finish(layout);
    return layout;
}

CrossbarLayout recombine(const LayerSpec& layer, const GroupMask& masks, CrossbarDims dims,
                         std::span<const std::size_t> order) {
    check_masks(layer, masks);
    CrossbarLayout layout = empty_layout(layer, dims, Grain::Column, order);
    for (std::size_t i = 0; i < layer.in_groups(); ++i)
        for (std::size_t t = 0; t < layout.plan.slices.size(); ++t) {
            const WidthSlice& s = layout.plan.slices[t];
            // Surviving columns of this input group in ascending output group
            // order, filled into crossbars in sequence.
            Crossbar block;
            for (std::size_t j = 0; j < layer.out_groups(); ++j)
                if (masks.at(i, j)) append_block(block, j * layer.out_group_size, layer.out_group_size, s);
            for (std::size_t at = 0; at < block.columns.size(); at += dims.cols) {
                Crossbar xb;
                xb.input_group = i;
                xb.slice = t;
                const std::size_t end = std::min(block.columns.size(), at + dims.cols);
                xb.columns.assign(block.columns.begin() + static_cast<std::ptrdiff_t>(at),
                                  block.columns.begin() + static_cast<std::ptrdiff_t>(end));
                xb.rows_used = band_rows(layer, s);
                xb.cols_used = xb.columns.size();
                layout.crossbars.push_back(std::move(xb));
            }
        }
    finish(layout);
    return layout;
}

CrossbarLayout map_layer(const LayerSpec& layer, const LayerPruneState* state, CrossbarDims dims) {
    if (!state) return dense_baseline(layer, dims);
    return state->grain == Grain::Column ? recombine(layer, state->masks, dims, state->order)
                                         : map_crossbar_grain(layer, state->masks, dims, state->order);
}

CrossbarLayout dense_baseline(const LayerSpec& layer, CrossbarDims dims) {
    const GroupMask all(layer.in_groups(), layer.out_groups(), true);
    return layer.grain == Grain::Column ? recombine(layer, all, dims) : map_crossbar_grain(layer, all, dims);
}

FeatureMaps execute_layout(const LayerSpec& layer, const CrossbarLayout& layout, const Tensor& weights,
                           const FeatureMaps& raw_input) {
    FeatureMaps input = raw_input;
    if (layer.kind == LayerKind::FC) {
        input.c = input.per_sample();
        input.h = input.w = 1;
    }
    const Extents e = extents(layer);
    if (input.c != layer.in_fms || input.h != e.in_h || input.w != e.in_w)
        throw GeometryError("layer '" + layer.name + "': input does not match the mapped geometry");
    const std::size_t P = layer.in_fms, Q = layer.out_fms;
    FeatureMaps out(input.n, e.out_h, e.out_w, Q);

    for (const Crossbar& xb : layout.crossbars) {
        const WidthSlice& s = layout.plan.slices.at(xb.slice);
        const IndexRange group = group_range(xb.input_group, layout.in_group_size);
        // Row r <-> (FM position in group, kernel row, input column in band).
        const std::size_t band = s.in_count;
        const std::size_t rows = group.size * layer.kernel_h * band;
        const std::size_t cols = xb.columns.size();
        std::vector<double> conductance(rows * cols, 0.0);
        for (std::size_t c = 0; c < cols; ++c) {
            const CrossbarColumn& col = xb.columns[c];
            for (std::size_t g = 0; g < group.size; ++g) {
                const std::size_t p = layout.order[group.first + g];
                for (std::size_t kh = 0; kh < layer.kernel_h; ++kh)
                    for (std::size_t b = 0; b < band; ++b) {
                        const long long kw = static_cast<long long>(s.in_first + b + layer.padding) -
                                             static_cast<long long>(col.window * layer.stride);
                        if (kw < 0 || kw >= static_cast<long long>(layer.kernel_w)) continue;
                        const std::size_t r = (g * layer.kernel_h + kh) * band + b;
                        conductance[r * cols + c] =
                            weights.data[((kh * layer.kernel_w + static_cast<std::size_t>(kw)) * P + p) * Q + col.out_fm];
                    }
            }
        }

        std::vector<double> drive(rows);
        for (std::size_t n = 0; n < input.n; ++n)
            for (std::size_t y = 0; y < e.out_h; ++y) {
                for (std::size_t g = 0; g < group.size; ++g) {
                    const std::size_t p = layout.order[group.first + g];
                    for (std::size_t kh = 0; kh < layer.kernel_h; ++kh) {
                        const std::size_t py = y * layer.stride + kh;
                        const bool inside = py >= layer.padding && py - layer.padding < e.in_h;
                        for (std::size_t b = 0; b < band; ++b)
                            drive[(g * layer.kernel_h + kh) * band + b] =
                                inside ? input.at(n, py - layer.padding, s.in_first + b, p) : 0.0;
                    }
                }
                for (std::size_t c = 0; c < cols; ++c) {
                    double current = 0.0;
                    for (std::size_t r = 0; r < rows; ++r) current += drive[r] * conductance[r * cols + c];
                    out.at(n, y, xb.columns[c].window, xb.columns[c].out_fm) += current;
                }
            }
    }
    return out;
}

OverheadReport count_overhead(const NetworkSpec& network, std::span<const CrossbarLayout> dense,
                              std::span<const CrossbarLayout> pruned) {
    if (dense.size() != network.layers.size() || pruned.size() != network.layers.size())
        throw GeometryError("count_overhead: need one dense and one pruned layout per layer");
    OverheadReport report;
    for (std::size_t l = 0; l < network.layers.size(); ++l) {
        LayerOverhead row;
        row.layer = network.layers[l].name;
        row.dense_compute = dense[l].compute_count;
        row.dense_total = dense[l].compute_count + network.layers[l].non_compute_overhead;
        row.pruned_compute = pruned[l].compute_count;
        row.pruned_total = pruned[l].compute_count + network.layers[l].non_compute_overhead;
        report.dense_total += row.dense_total;
        report.dense_compute += row.dense_compute;
        report.pruned_total += row.pruned_total;
        report.pruned_compute += row.pruned_compute;
        report.layers.push_back(std::move(row));
    }
    return report;
}

OverheadReport count_overhead(const Model& model) {
    std::vector<CrossbarLayout> dense, pruned;
    for (std::size_t l = 0; l < model.spec.layers.size(); ++l) {
        const LayerSpec& layer = model.spec.layers[l];
        dense.push_back(dense_baseline(layer, model.spec.crossbar));
        pruned.push_back(map_layer(layer, model.prune_state(l), model.spec.crossbar));
    }
    return count_overhead(model.spec, dense, pruned);
}

}  // namespace xbprune
