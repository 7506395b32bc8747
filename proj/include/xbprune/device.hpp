#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "xbprune/network.hpp"

namespace xbprune {

// Conductance non-idealities. `levels` unset means unlimited resolution.
struct DeviceConfig {
    std::optional<std::size_t> levels;
    double sigma = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Snaps every value onto `levels` evenly spaced points spanning
// [min, max] of the values (ties to the lower point). Constant input is left
// unchanged. Unset levels is the identity.
void quantize(std::span<double> values, std::optional<std::size_t> levels);

// w <- w * exp(sigma * z) with z ~ N(0, 1) drawn per value in order.
// sigma = 0 leaves the values untouched and consumes no draws.
void perturb(std::span<double> values, double sigma, std::mt19937_64& rng);

// Quantizes then perturbs every layer's active weights (connections kept by
// its pruning state). Layer l uses the stream derive_seed(seed, name, 0).
Model apply_device(const Model& model, const DeviceConfig& config);

struct NoiseGrid {
    std::vector<double> sigmas;
    std::vector<std::optional<std::size_t>> levels;
    std::vector<std::vector<double>> mean_accuracy;  // [sigma][levels]
    double clean_accuracy = 0.0;
    std::size_t trials = 0;
};

// Mean accuracy over `trials` device draws per (sigma, levels) cell. Trial t
// uses seed derive_seed(seed, "noise-trial", t) in every cell, so cells
// differ only through sigma and levels.
NoiseGrid noise_sweep(const Model& model, const FeatureMaps& inputs, std::span<const double> labels,
                      std::span<const double> sigmas, std::span<const std::optional<std::size_t>> levels,
                      std::size_t trials, std::uint64_t seed);

std::string levels_label(std::optional<std::size_t> levels);
std::optional<std::size_t> parse_levels(const std::string& text);

}  // namespace xbprune
