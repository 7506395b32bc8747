#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace xbprune {

enum class Dtype { Float32, Float64 };

// Dense row-major tensor. Values are always held as double; dtype records the
// on-disk element type so that save(load(f)) reproduces the file bit-exactly.
struct Tensor {
    Dtype dtype = Dtype::Float64;
    std::vector<std::size_t> shape;
    std::vector<double> data;

    static Tensor zeros(std::vector<std::size_t> shape, Dtype dtype = Dtype::Float64);

    std::size_t size() const noexcept { return data.size(); }
    std::size_t rank() const noexcept { return shape.size(); }
    static std::size_t element_count(std::span<const std::size_t> shape) noexcept;

    bool operator==(const Tensor&) const = default;
};

// Activations in NHWC order: batch, rows, columns, channels.
struct FeatureMaps {
    std::size_t n = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t c = 0;
    std::vector<double> data;

    FeatureMaps() = default;
    FeatureMaps(std::size_t n, std::size_t h, std::size_t w, std::size_t c)
        : n(n), h(h), w(w), c(c), data(n * h * w * c, 0.0) {}

    std::size_t index(std::size_t b, std::size_t y, std::size_t x, std::size_t ch) const noexcept {
        return ((b * h + y) * w + x) * c + ch;
    }
    double& at(std::size_t b, std::size_t y, std::size_t x, std::size_t ch) noexcept {
        return data[index(b, y, x, ch)];
    }
    double at(std::size_t b, std::size_t y, std::size_t x, std::size_t ch) const noexcept {
        return data[index(b, y, x, ch)];
    }
    std::size_t spatial() const noexcept { return h * w; }
    std::size_t per_sample() const noexcept { return h * w * c; }

    // First `count` samples.
    FeatureMaps head(std::size_t count) const;
    // Tensor view [N,H,W,C] for persistence.
    Tensor to_tensor(Dtype dtype = Dtype::Float64) const;
    static FeatureMaps from_tensor(const Tensor& t);
};

}  // namespace xbprune
