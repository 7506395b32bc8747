#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xbprune/mapper.hpp"
#include "xbprune/network.hpp"
#include "xbprune/pruner.hpp"

namespace xbprune {

enum class StopReason { AccuracyDrop, RatioCap, CrossbarFloor, SweepEnd };

// How the pruning-ratio cap binds. StopAfter keeps the first swept ratio
// above the cap (when nothing else stops the walk there); Clamp falls back to
// the largest swept ratio not above it.
enum class CapMode { StopAfter, Clamp };

const char* to_string(StopReason reason) noexcept;
const char* to_string(CapMode mode) noexcept;
CapMode parse_cap_mode(const std::string& text);

struct SensitivityRow {
    double ratio = 0.0;
    double accuracy = 0.0;
    double drop = 0.0;  // baseline accuracy minus accuracy, as a fraction
    std::size_t compute_crossbars = 0;
};

struct SensitivityTable {
    std::string layer;
    double baseline_accuracy = 0.0;
    std::vector<SensitivityRow> rows;  // ascending ratio; the first row is the dense baseline
};

// Drops and ratios are fractions (0.04 == 4%).
struct PolicyThresholds {
    double initial_drop = 0.01;
    double max_drop = 0.04;
    double max_ratio = 0.60;
    std::size_t min_crossbars = 400;
    CapMode cap_mode = CapMode::StopAfter;

    void validate() const;
};

struct LayerDecision {
    std::string layer;
    double start_ratio = 0.0;
    double ratio = 0.0;
    StopReason reason = StopReason::SweepEnd;
};

// 0.20, 0.25, ..., 0.70.
std::vector<double> default_ratio_grid();

// Accuracy of a model on some held-out data.
using Evaluator = std::function<double(const Model&)>;

struct SweepOptions {
    std::vector<double> ratios = default_ratio_grid();
    PruneOptions prune;  // grain is taken from each layer's description
};

// Prunes only `layer` (every other layer dense) at each ratio, repairs its
// weights without fine-tuning, and evaluates. `calibration` are network
// inputs. A ratio-0 baseline row is prepended.
SensitivityTable sweep_layer(const Model& model, std::size_t layer, const FeatureMaps& calibration,
                             const Evaluator& evaluate, const SweepOptions& options);

// Among rows with drop > initial_drop, the one with the smallest drop (ties:
// smallest ratio); if no row exceeds it, the largest swept ratio.
double initial_ratio(const SensitivityTable& table, double initial_drop);

// Walks the swept ratios upward from `start_ratio` and stops at the first row
// where a condition fires. Accuracy and crossbar conditions report the
// previous swept ratio. At any one row the accuracy condition is checked
// first, then the ratio cap (Clamp mode), the crossbar floor, and last the
// ratio cap in StopAfter mode.
LayerDecision finalize_ratio(const SensitivityTable& table, double start_ratio, const PolicyThresholds& thresholds);

std::vector<LayerDecision> decide(const std::vector<SensitivityTable>& tables, const PolicyThresholds& thresholds);

// Every layer except the first Conv layer and the last FC layer.
std::vector<std::size_t> prunable_layers(const NetworkSpec& network);

struct NetworkPruneResult {
    Model model;
    OverheadReport overhead;
    std::map<std::string, LayerPruneResult> layers;
};

// Prunes layers in order at their chosen ratios. Each layer's calibration
// input is recomputed through the already pruned predecessors; its repair
// target is the original network's pre-activation. Layers with ratio 0 or no
// decision stay dense.
NetworkPruneResult prune_network(const Model& model, const std::map<std::string, double>& ratios,
                                 const FeatureMaps& calibration, const PruneOptions& options);

}  // namespace xbprune
