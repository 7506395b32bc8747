#include "xbprune/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "xbprune/error.hpp"

namespace xbprune {

std::size_t Tensor::element_count(std::span<const std::size_t> shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, Dtype dtype) {
    Tensor t;
    t.dtype = dtype;
    t.data.assign(element_count(shape), 0.0);
    t.shape = std::move(shape);
    return t;
}

FeatureMaps FeatureMaps::head(std::size_t count) const {
    count = std::min(count, n);
    FeatureMaps out(count, h, w, c);
    std::copy_n(data.begin(), count * per_sample(), out.data.begin());
    return out;
}

Tensor FeatureMaps::to_tensor(Dtype dtype) const {
    Tensor t;
    t.dtype = dtype;
    t.shape = {n, h, w, c};
    t.data = data;
    return t;
}

FeatureMaps FeatureMaps::from_tensor(const Tensor& t) {
    FeatureMaps fm;
    switch (t.rank()) {
    case 4:
        fm = FeatureMaps(t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
        break;
    case 3:  // [N, H, W] single channel
        fm = FeatureMaps(t.shape[0], t.shape[1], t.shape[2], 1);
        break;
    case 2:  // [N, features]
        fm = FeatureMaps(t.shape[0], 1, 1, t.shape[1]);
        break;
    default:
        throw GeometryError("feature maps need a tensor of rank 2, 3 or 4 (NHWC)");
    }
    fm.data = t.data;
    return fm;
}

}  // namespace xbprune
