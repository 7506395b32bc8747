#include "xbprune/conv.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "xbprune/error.hpp"

namespace xbprune {

namespace {

std::size_t out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
    const std::size_t padded = in + 2 * padding;
    if (stride == 0 || padded < kernel) return 0;
    return (padded - kernel) / stride + 1;
}

// Input coordinate for output position `o` and kernel tap `k`; false when it
// lands in the zero padding.
inline bool source(std::size_t o, std::size_t k, std::size_t stride, std::size_t padding, std::size_t extent,
                   std::size_t& out) {
    const std::size_t pos = o * stride + k;
    if (pos < padding || pos - padding >= extent) return false;
    out = pos - padding;
    return true;
}

void check_layer_input(const LayerSpec& layer, const FeatureMaps& input) {
    if (input.c != layer.in_fms)
        throw GeometryError("layer '" + layer.name + "': input has " + std::to_string(input.c) +
                            " channels, expected P=" + std::to_string(layer.in_fms));
    if (layer.kind == LayerKind::Conv && out_extent(input.h, layer.kernel_h, layer.stride, layer.padding) == 0)
        throw GeometryError("layer '" + layer.name + "': output height would be non-positive");
    if (layer.kind == LayerKind::Conv && out_extent(input.w, layer.kernel_w, layer.stride, layer.padding) == 0)
        throw GeometryError("layer '" + layer.name + "': output width would be non-positive");
}

void check_weights(const LayerSpec& layer, const Tensor& weights) {
    const std::vector<std::size_t> expected{layer.kernel_h, layer.kernel_w, layer.in_fms, layer.out_fms};
    if (weights.shape != expected)
        throw GeometryError("layer '" + layer.name + "': weights must have shape [kernel_h, kernel_w, P, Q]");
}

}  // namespace

FeatureMaps conv_pair(const FeatureMaps& input, std::span<const double> kernel, std::size_t kernel_h,
                      std::size_t kernel_w, std::size_t stride, std::size_t padding) {
    if (input.c != 1) throw GeometryError("conv_pair expects single-channel input");
    if (kernel.size() != kernel_h * kernel_w) throw GeometryError("conv_pair: kernel size mismatch");
    const std::size_t oh = out_extent(input.h, kernel_h, stride, padding);
    const std::size_t ow = out_extent(input.w, kernel_w, stride, padding);
    if (oh == 0 || ow == 0) throw GeometryError("conv_pair: non-positive output dimensions");

    FeatureMaps out(input.n, oh, ow, 1);
    for (std::size_t b = 0; b < input.n; ++b)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (std::size_t kh = 0; kh < kernel_h; ++kh) {
                    std::size_t iy;
                    if (!source(y, kh, stride, padding, input.h, iy)) continue;
                    for (std::size_t kw = 0; kw < kernel_w; ++kw) {
                        std::size_t ix;
                        if (!source(x, kw, stride, padding, input.w, ix)) continue;
                        acc += input.at(b, iy, ix, 0) * kernel[kh * kernel_w + kw];
                    }
                }
                out.at(b, y, x, 0) = acc;
            }
    return out;
}

FeatureMaps layer_input_view(const LayerSpec& layer, FeatureMaps input) {
    if (layer.kind == LayerKind::FC) {
        const std::size_t features = input.per_sample();
        input.h = 1;
        input.w = 1;
        input.c = features;
    }
    return input;
}

PartialSumBundle build_bundle(const LayerSpec& layer, const Tensor& weights, const FeatureMaps& raw_inputs,
                              std::span<const std::size_t> order) {
    check_weights(layer, weights);
    const FeatureMaps inputs = layer_input_view(layer, raw_inputs);
    check_layer_input(layer, inputs);

    const std::size_t oh = out_extent(inputs.h, layer.kernel_h, layer.stride, layer.padding);
    const std::size_t ow = out_extent(inputs.w, layer.kernel_w, layer.stride, layer.padding);
    PartialSumBundle b;
    b.samples = inputs.n;
    b.spatial = oh * ow;
    b.in_fms = layer.in_fms;
    b.out_fms = layer.out_fms;
    b.in_group_size = layer.in_group_size;
    b.pair.assign(b.samples * b.spatial * b.in_fms * b.out_fms, 0.0);

    const std::size_t P = layer.in_fms, Q = layer.out_fms;
    for (std::size_t n = 0; n < b.samples; ++n)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                double* dst = &b.pair[((n * b.spatial + y * ow + x) * P) * Q];
                for (std::size_t kh = 0; kh < layer.kernel_h; ++kh) {
                    std::size_t iy;
                    if (!source(y, kh, layer.stride, layer.padding, inputs.h, iy)) continue;
                    for (std::size_t kw = 0; kw < layer.kernel_w; ++kw) {
                        std::size_t ix;
                        if (!source(x, kw, layer.stride, layer.padding, inputs.w, ix)) continue;
                        const double* w = &weights.data[(kh * layer.kernel_w + kw) * P * Q];
                        for (std::size_t p = 0; p < P; ++p) {
                            const double v = inputs.at(n, iy, ix, p);
                            if (v == 0.0) continue;
                            for (std::size_t q = 0; q < Q; ++q) dst[p * Q + q] += v * w[p * Q + q];
                        }
                    }
                }
            }

    regroup(b, order.empty() ? std::span<const std::size_t>(identity_order(P)) : order);
    return b;
}

void regroup(PartialSumBundle& b, std::span<const std::size_t> order) {
    if (!is_permutation(order, b.in_fms)) throw GeometryError("regroup: order must be a permutation of [0, P)");
    b.order.assign(order.begin(), order.end());
    const std::size_t I = b.in_groups(), P = b.in_fms, Q = b.out_fms;
    b.group.assign(b.samples * b.spatial * I * Q, 0.0);
    b.full.assign(b.samples * b.spatial * Q, 0.0);
    for (std::size_t ns = 0; ns < b.samples * b.spatial; ++ns) {
        const double* src = &b.pair[ns * P * Q];
        double* grp = &b.group[ns * I * Q];
        double* full = &b.full[ns * Q];
        for (std::size_t pos = 0; pos < P; ++pos) {
            const double* row = src + b.order[pos] * Q;
            double* g = grp + (pos / b.in_group_size) * Q;
            for (std::size_t q = 0; q < Q; ++q) g[q] += row[q];
        }
        for (std::size_t i = 0; i < I; ++i)
            for (std::size_t q = 0; q < Q; ++q) full[q] += grp[i * Q + q];
    }
}

std::vector<std::vector<std::size_t>> sample_positions(std::size_t samples, std::size_t spatial, std::size_t count,
                                                       std::uint64_t seed) {
    if (count == 0 || count > spatial)
        throw GeometryError("sampling " + std::to_string(count) + " points from feature maps of size " +
                            std::to_string(spatial));
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> pool(spatial);
    std::vector<std::vector<std::size_t>> positions(samples);
    for (std::size_t n = 0; n < samples; ++n) {
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        // Partial Fisher-Yates: the first `count` slots form the sample.
        for (std::size_t k = 0; k < count; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, spatial - 1);
            std::swap(pool[k], pool[pick(rng)]);
        }
        positions[n].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
        std::sort(positions[n].begin(), positions[n].end());
    }
    return positions;
}

SampledDesign sample_design(const PartialSumBundle& bundle, std::size_t out_group_size, std::size_t j,
                            std::size_t count, std::uint64_t seed) {
    if (out_group_size == 0 || bundle.out_fms % out_group_size != 0)
        throw GeometryError("sample_design: K_out must divide Q");
    if ((j + 1) * out_group_size > bundle.out_fms) throw GeometryError("sample_design: output group out of range");
    SampledDesign d;
    d.positions = sample_positions(bundle.samples, bundle.spatial, count, seed);
    const std::size_t I = bundle.in_groups();
    const std::size_t rows = bundle.samples * count * out_group_size;
    d.x.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(I));
    d.y.resize(static_cast<Eigen::Index>(rows));
    Eigen::Index r = 0;
    for (std::size_t n = 0; n < bundle.samples; ++n)
        for (std::size_t s : d.positions[n])
            for (std::size_t k = 0; k < out_group_size; ++k, ++r) {
                const std::size_t q = j * out_group_size + k;
                for (std::size_t i = 0; i < I; ++i) d.x(r, static_cast<Eigen::Index>(i)) = bundle.group_at(n, s, i, q);
                d.y(r) = bundle.full_at(n, s, q);
            }
    return d;
}

Tensor masked_weights(const LayerSpec& layer, const Tensor& weights, const LayerPruneState& state) {
    check_weights(layer, weights);
    if (state.masks.in_groups() != layer.in_groups() || state.masks.out_groups() != layer.out_groups() ||
        !is_permutation(state.order, layer.in_fms))
        throw GeometryError("layer '" + layer.name + "': pruning mask does not match the layer's group geometry");
    Tensor w = weights;
    const auto group = state.group_of_input(layer.in_group_size);
    const std::size_t P = layer.in_fms, Q = layer.out_fms;
    for (std::size_t k = 0; k < layer.kernel_h * layer.kernel_w; ++k)
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t q = 0; q < Q; ++q)
                if (!state.masks.at(group[p], q / layer.out_group_size)) w.data[(k * P + p) * Q + q] = 0.0;
    return w;
}

FeatureMaps layer_preactivation(const LayerSpec& layer, const Tensor& weights, const FeatureMaps& raw_input,
                                const LayerPruneState* state) {
    check_weights(layer, weights);
    const FeatureMaps input = layer_input_view(layer, raw_input);
    check_layer_input(layer, input);
    const Tensor effective = state ? masked_weights(layer, weights, *state) : Tensor{};
    const Tensor& w = state ? effective : weights;

    const std::size_t oh = out_extent(input.h, layer.kernel_h, layer.stride, layer.padding);
    const std::size_t ow = out_extent(input.w, layer.kernel_w, layer.stride, layer.padding);
    const std::size_t P = layer.in_fms, Q = layer.out_fms;
    FeatureMaps out(input.n, oh, ow, Q);
    for (std::size_t n = 0; n < input.n; ++n)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                double* dst = &out.data[out.index(n, y, x, 0)];
                for (std::size_t kh = 0; kh < layer.kernel_h; ++kh) {
                    std::size_t iy;
                    if (!source(y, kh, layer.stride, layer.padding, input.h, iy)) continue;
                    for (std::size_t kw = 0; kw < layer.kernel_w; ++kw) {
                        std::size_t ix;
                        if (!source(x, kw, layer.stride, layer.padding, input.w, ix)) continue;
                        const double* wk = &w.data[(kh * layer.kernel_w + kw) * P * Q];
                        const double* src = &input.data[input.index(n, iy, ix, 0)];
                        for (std::size_t p = 0; p < P; ++p) {
                            const double v = src[p];
                            if (v == 0.0) continue;
                            for (std::size_t q = 0; q < Q; ++q) dst[q] += v * wk[p * Q + q];
                        }
                    }
                }
            }
    return out;
}

FeatureMaps activate(const LayerSpec& layer, FeatureMaps preact) {
    if (layer.relu)
        for (double& v : preact.data) v = std::max(v, 0.0);
    if (layer.pool <= 1) return preact;

    const std::size_t k = layer.pool;
    FeatureMaps out(preact.n, preact.h / k, preact.w / k, preact.c);
    for (std::size_t n = 0; n < out.n; ++n)
        for (std::size_t y = 0; y < out.h; ++y)
            for (std::size_t x = 0; x < out.w; ++x)
                for (std::size_t ch = 0; ch < out.c; ++ch) {
                    double m = preact.at(n, y * k, x * k, ch);
                    for (std::size_t dy = 0; dy < k; ++dy)
                        for (std::size_t dx = 0; dx < k; ++dx) m = std::max(m, preact.at(n, y * k + dy, x * k + dx, ch));
                    out.at(n, y, x, ch) = m;
                }
    return out;
}

std::vector<FeatureMaps> forward_trace(const Model& model, const FeatureMaps& inputs) {
    std::vector<FeatureMaps> trace;
    trace.reserve(model.spec.layers.size() + 1);
    trace.push_back(inputs);
    for (std::size_t l = 0; l < model.spec.layers.size(); ++l) {
        const LayerSpec& layer = model.spec.layers[l];
        trace.push_back(activate(layer, layer_preactivation(layer, model.weights[l], trace.back(), model.prune_state(l))));
    }
    return trace;
}

ForwardResult forward(const Model& model, const FeatureMaps& inputs, std::span<const double> labels) {
    FeatureMaps x = inputs;
    for (std::size_t l = 0; l < model.spec.layers.size(); ++l) {
        const LayerSpec& layer = model.spec.layers[l];
        x = activate(layer, layer_preactivation(layer, model.weights[l], x, model.prune_state(l)));
    }
    ForwardResult r;
    if (!labels.empty()) r.accuracy = accuracy(x, labels);
    r.outputs = std::move(x);
    return r;
}

std::vector<std::size_t> predictions(const FeatureMaps& outputs) {
    const std::size_t per = outputs.per_sample();
    std::vector<std::size_t> pred(outputs.n);
    for (std::size_t n = 0; n < outputs.n; ++n) {
        const auto first = outputs.data.begin() + static_cast<std::ptrdiff_t>(n * per);
        pred[n] = static_cast<std::size_t>(std::max_element(first, first + static_cast<std::ptrdiff_t>(per)) - first);
    }
    return pred;
}

double accuracy(const FeatureMaps& outputs, std::span<const double> labels) {
    if (labels.size() != outputs.n) throw GeometryError("label count does not match the batch size");
    if (outputs.n == 0) return 0.0;
    const auto pred = predictions(outputs);
    std::size_t hit = 0;
    for (std::size_t n = 0; n < outputs.n; ++n) hit += static_cast<double>(pred[n]) == labels[n];
    return static_cast<double>(hit) / static_cast<double>(outputs.n);
}

}  // namespace xbprune
