#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "xbprune/network.hpp"
#include "xbprune/tensor.hpp"

namespace xbprune {

struct LabeledSet {
    FeatureMaps x;
    std::vector<double> y;  // class index per sample
};

// Small seeded classification task and a bias-free 4-layer network for it:
// conv 3->16 (3x3), conv 16->16 (3x3), conv 16->16 (3x3, 2x2 pool), FC 256->8.
// Inputs are noisy copies of one random 8x8x3 prototype per class. The conv
// weights are random; the FC head is a ridge fit of one-hot targets on the
// training features, so the network is accurate without any training loop.
struct SyntheticTask {
    Model model;
    LabeledSet train;
    LabeledSet calibration;
    LabeledSet evaluation;
};

struct SyntheticOptions {
    std::uint64_t seed = 1;
    std::size_t classes = 8;
    std::size_t train = 512;
    std::size_t calibration = 128;
    std::size_t evaluation = 512;
    double input_noise = 1.6;  // per-pixel noise std; prototypes have unit std
};

SyntheticTask make_synthetic_task(const SyntheticOptions& options = {});

// Writes <dir>/net.json with its weights, <dir>/eval.npz and <dir>/calib.npz
// (keys x and y). Returns the network path.
std::filesystem::path write_synthetic_task(const SyntheticTask& task, const std::filesystem::path& dir);

}  // namespace xbprune
