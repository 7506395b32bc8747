#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xbprune/device.hpp"
#include "xbprune/mapper.hpp"
#include "xbprune/policy.hpp"
#include "xbprune/pruner.hpp"

namespace xbprune {

// Text renderings of toolkit results. JSON objects keep a fixed key order and
// numbers are printed round-trip exact, so equal results give equal bytes.

// {"layer", "grain", "permutation", "masks": [[0/1 ...] per input group]}
std::string masks_json(const std::string& layer, const LayerPruneState& state);

// Layer pruning summary: budgets, per-group solver loss, repair losses.
std::string prune_report_json(const std::string& layer, const LayerPruneResult& result);

std::string layout_json(const std::vector<CrossbarLayout>& layouts);

std::string overhead_json(const OverheadReport& report);
// Header: layer,dense_T,dense_C,pruned_T,pruned_C; a final "total" row.
std::string overhead_csv(const OverheadReport& report);

// Header: layer,ratio,accuracy,drop,compute_crossbars
std::string sensitivity_csv(const std::vector<SensitivityTable>& tables);
std::string sensitivity_json(const std::vector<SensitivityTable>& tables);

std::string decisions_json(const std::vector<LayerDecision>& decisions, const PolicyThresholds& thresholds);

// Rows: sigma; columns: levels; cells: mean accuracy.
std::string noise_csv(const NoiseGrid& grid);

// Shortest decimal form that reads back to the same double.
std::string format_double(double v);

void write_text(const std::filesystem::path& path, const std::string& text);

// Provenance of one CLI run.
struct RunManifest {
    std::string command;
    std::vector<std::string> arguments;
    std::vector<std::string> config_paths;
    std::uint64_t seed = 0;
    std::string version;
    std::string started;
    std::string finished;
    std::map<std::string, std::string> outputs;  // path -> FNV-1a 64 hex digest of the file

    void add_output(const std::filesystem::path& path);
    std::string to_json() const;
};

std::string utc_timestamp();
std::string file_digest(const std::filesystem::path& path);

}  // namespace xbprune
