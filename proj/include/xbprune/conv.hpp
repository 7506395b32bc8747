#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "xbprune/network.hpp"
#include "xbprune/tensor.hpp"

namespace xbprune {

// Cross-correlation (no kernel flip) of single-channel maps [N,H,W,1] with a
// kh x kw kernel, zero padding, no bias. Returns [N, H_out, W_out, 1].
FeatureMaps conv_pair(const FeatureMaps& input, std::span<const double> kernel, std::size_t kernel_h,
                      std::size_t kernel_w, std::size_t stride, std::size_t padding);

// Per-pair, per-input-group and complete sums of one layer over a batch.
//   pair[n, s, p, q]   convolution of input FM p with kernel W[:, :, p, q]
//   group[n, s, i, q]  sum of pair over the FMs in input group i
//   full[n, s, q]      sum of group over i
// Input groups are formed on `order` (order[k] = original FM at position k).
struct PartialSumBundle {
    std::size_t samples = 0;  // N
    std::size_t spatial = 0;  // S_out
    std::size_t in_fms = 0;
    std::size_t out_fms = 0;
    std::size_t in_group_size = 0;
    std::vector<std::size_t> order;
    std::vector<double> pair;
    std::vector<double> group;
    std::vector<double> full;

    std::size_t in_groups() const noexcept { return in_fms / in_group_size; }
    double pair_at(std::size_t n, std::size_t s, std::size_t p, std::size_t q) const noexcept {
        return pair[((n * spatial + s) * in_fms + p) * out_fms + q];
    }
    double group_at(std::size_t n, std::size_t s, std::size_t i, std::size_t q) const noexcept {
        return group[((n * spatial + s) * in_groups() + i) * out_fms + q];
    }
    double full_at(std::size_t n, std::size_t s, std::size_t q) const noexcept {
        return full[(n * spatial + s) * out_fms + q];
    }
};

// `inputs` is [N, H, W, P] for Conv layers; FC layers accept any map whose
// per-sample size is P. An empty `order` means the original FM order.
PartialSumBundle build_bundle(const LayerSpec& layer, const Tensor& weights, const FeatureMaps& inputs,
                              std::span<const std::size_t> order = {});

// Recomputes the group sums for a new input FM order.
void regroup(PartialSumBundle& bundle, std::span<const std::size_t> order);

// Design matrix for output group j. Rows run over (n, sampled position, q in
// group j); column i holds the group-i partial sums, y the complete sums.
struct SampledDesign {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
    std::vector<std::vector<std::size_t>> positions;  // positions[n] = sampled spatial indices
};

// `count` distinct spatial positions in [0, spatial) per sample n, uniform
// without replacement, returned in ascending order.
std::vector<std::vector<std::size_t>> sample_positions(std::size_t samples, std::size_t spatial, std::size_t count,
                                                       std::uint64_t seed);

SampledDesign sample_design(const PartialSumBundle& bundle, std::size_t out_group_size, std::size_t j,
                            std::size_t count, std::uint64_t seed);

// Shapes the activations entering a layer: FC layers see the flattened map.
FeatureMaps layer_input_view(const LayerSpec& layer, FeatureMaps input);

// Bias-free pre-activation of one layer. Connections pruned by `state` are
// dropped.
FeatureMaps layer_preactivation(const LayerSpec& layer, const Tensor& weights, const FeatureMaps& input,
                                const LayerPruneState* state = nullptr);

// ReLU (if enabled) followed by non-overlapping max pooling.
FeatureMaps activate(const LayerSpec& layer, FeatureMaps preact);

// Weights with every pruned (input FM, output FM) connection zeroed.
Tensor masked_weights(const LayerSpec& layer, const Tensor& weights, const LayerPruneState& state);

struct ForwardResult {
    FeatureMaps outputs;             // last-layer pre-activation if it has no ReLU
    std::optional<double> accuracy;  // when labels were supplied
};

ForwardResult forward(const Model& model, const FeatureMaps& inputs, std::span<const double> labels = {});

// Input of every layer followed by the network output: result[l] feeds layer l.
std::vector<FeatureMaps> forward_trace(const Model& model, const FeatureMaps& inputs);

// Index of the largest output per sample.
std::vector<std::size_t> predictions(const FeatureMaps& outputs);
double accuracy(const FeatureMaps& outputs, std::span<const double> labels);

}  // namespace xbprune
