#include "xbprune/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xbprune/error.hpp"

namespace xbprune {

const char* to_string(StopReason reason) noexcept {
    switch (reason) {
        case StopReason::AccuracyDrop: return "AccuracyDrop";
        case StopReason::RatioCap: return "RatioCap";
        case StopReason::CrossbarFloor: return "CrossbarFloor";
        case StopReason::SweepEnd: return "SweepEnd";
    }
    return "SweepEnd";
}

const char* to_string(CapMode mode) noexcept { return mode == CapMode::Clamp ? "clamp" : "stop_after"; }

CapMode parse_cap_mode(const std::string& text) {
    if (text == "stop_after") return CapMode::StopAfter;
    if (text == "clamp") return CapMode::Clamp;
    throw ValidationError("", "cap_mode", "expected 'stop_after' or 'clamp', got '" + text + "'");
}

void PolicyThresholds::validate() const {
    auto fraction = [](double v, const char* field) {
        if (!(v > 0.0 && v <= 1.0)) throw ValidationError("", field, "must lie in (0, 1]");
    };
    fraction(initial_drop, "T_d_initial");
    fraction(max_drop, "T_d");
    fraction(max_ratio, "T_p");
    if (min_crossbars == 0) throw ValidationError("", "T_c", "must be positive");
    if (max_drop < initial_drop) throw ValidationError("", "T_d", "must be at least T_d_initial");
}

std::vector<double> default_ratio_grid() {
    std::vector<double> grid;
    for (int pct = 20; pct <= 70; pct += 5) grid.push_back(pct / 100.0);
    return grid;
}

SensitivityTable sweep_layer(const Model& model, std::size_t layer, const FeatureMaps& calibration,
                             const Evaluator& evaluate, const SweepOptions& options) {
    const LayerSpec& spec = model.spec.layers.at(layer);
    for (std::size_t k = 0; k < options.ratios.size(); ++k) {
        const double r = options.ratios[k];
        if (!(r > 0.0 && r < 1.0)) throw ValidationError(spec.name, "ratio", "swept ratios must lie in (0, 1)");
        if (k > 0 && !(r > options.ratios[k - 1]))
            throw ValidationError(spec.name, "ratio", "swept ratios must be strictly increasing");
    }

    SensitivityTable table;
    table.layer = spec.name;
    table.baseline_accuracy = evaluate(model);
    table.rows.push_back({0.0, table.baseline_accuracy, 0.0,
                          map_layer(spec, model.prune_state(layer), model.spec.crossbar).compute_count});

    const FeatureMaps input = forward_trace(model, calibration).at(layer);
    PruneOptions prune = options.prune;
    prune.grain = spec.grain;
    for (double ratio : options.ratios) {
        const LayerPruneResult result =
            prune_layer(spec, model.weights[layer], input, PruneTarget::from_ratio(ratio), prune);
        Model trial = model;
        trial.weights[layer] = result.repaired_weights;
        trial.pruning.resize(model.spec.layers.size());
        trial.pruning[layer] = result.state;
        const double acc = evaluate(trial);
        table.rows.push_back({ratio, acc, table.baseline_accuracy - acc,
                              map_layer(spec, &result.state, model.spec.crossbar).compute_count});
    }
    return table;
}

double initial_ratio(const SensitivityTable& table, double initial_drop) {
    if (table.rows.empty()) throw ValidationError(table.layer, "sensitivity", "empty sensitivity table");
    const SensitivityRow* best = nullptr;
    for (const auto& row : table.rows)
        if (row.drop > initial_drop && (!best || row.drop < best->drop)) best = &row;
    if (best) return best->ratio;
    double top = table.rows.front().ratio;
    for (const auto& row : table.rows) top = std::max(top, row.ratio);
    return top;
}

LayerDecision finalize_ratio(const SensitivityTable& table, double start_ratio, const PolicyThresholds& thresholds) {
    thresholds.validate();
    const auto& rows = table.rows;
    if (rows.empty()) throw ValidationError(table.layer, "sensitivity", "empty sensitivity table");
    for (std::size_t k = 1; k < rows.size(); ++k)
        if (!(rows[k].ratio > rows[k - 1].ratio))
            throw ValidationError(table.layer, "sensitivity", "ratios must be strictly increasing");

    std::size_t start = rows.size();
    for (std::size_t k = 0; k < rows.size(); ++k)
        if (std::abs(rows[k].ratio - start_ratio) < 1e-9) start = k;
    if (start == rows.size())
        throw ValidationError(table.layer, "start_ratio", "start ratio does not appear in the sweep");

    LayerDecision decision;
    decision.layer = table.layer;
    decision.start_ratio = rows[start].ratio;
    const auto previous = [&](std::size_t k) { return k > 0 ? rows[k - 1].ratio : 0.0; };
    const auto clamped = [&] {
        double best = 0.0;
        for (const auto& row : rows)
            if (row.ratio <= thresholds.max_ratio + 1e-12) best = std::max(best, row.ratio);
        return best;
    };

    for (std::size_t k = start; k < rows.size(); ++k) {
        const SensitivityRow& row = rows[k];
        const bool over_cap = row.ratio > thresholds.max_ratio + 1e-12;
        if (row.drop > thresholds.max_drop) {
            decision.ratio = previous(k);
            decision.reason = StopReason::AccuracyDrop;
            return decision;
        }
        if (over_cap && thresholds.cap_mode == CapMode::Clamp) {
            decision.ratio = clamped();
            decision.reason = StopReason::RatioCap;
            return decision;
        }
        if (row.compute_crossbars < thresholds.min_crossbars) {
            decision.ratio = previous(k);
            decision.reason = StopReason::CrossbarFloor;
            return decision;
        }
        if (over_cap) {
            decision.ratio = row.ratio;
            decision.reason = StopReason::RatioCap;
            return decision;
        }
    }
    decision.ratio = rows.back().ratio;
    decision.reason = StopReason::SweepEnd;
    return decision;
}

std::vector<LayerDecision> decide(const std::vector<SensitivityTable>& tables, const PolicyThresholds& thresholds) {
    std::vector<LayerDecision> decisions;
    for (const auto& table : tables)
        decisions.push_back(finalize_ratio(table, initial_ratio(table, thresholds.initial_drop), thresholds));
    return decisions;
}

std::vector<std::size_t> prunable_layers(const NetworkSpec& network) {
    const auto& layers = network.layers;
    std::size_t first_conv = layers.size(), last_fc = layers.size();
    for (std::size_t l = 0; l < layers.size(); ++l)
        if (layers[l].kind == LayerKind::Conv) {
            first_conv = l;
            break;
        }
    for (std::size_t l = layers.size(); l-- > 0;)
        if (layers[l].kind == LayerKind::FC) {
            last_fc = l;
            break;
        }
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < layers.size(); ++l)
        if (l != first_conv && l != last_fc) out.push_back(l);
    return out;
}

NetworkPruneResult prune_network(const Model& model, const std::map<std::string, double>& ratios,
                                 const FeatureMaps& calibration, const PruneOptions& options) {
    for (const auto& [name, ratio] : ratios) {
        model.spec.index_of(name);
        if (!(ratio >= 0.0 && ratio < 1.0)) throw ValidationError(name, "ratio", "pruning ratio must lie in [0, 1)");
    }

    NetworkPruneResult out;
    out.model = model;
    out.model.pruning.resize(model.spec.layers.size());
    const std::vector<FeatureMaps> dense_trace = forward_trace(model, calibration);

    for (std::size_t l = 0; l < model.spec.layers.size(); ++l) {
        const LayerSpec& spec = model.spec.layers[l];
        const auto it = ratios.find(spec.name);
        if (it == ratios.end() || it->second == 0.0) continue;

        // Inputs flow through the layers pruned so far.
        const FeatureMaps input = forward_trace(out.model, calibration).at(l);
        const FeatureMaps target = layer_preactivation(spec, model.weights[l], dense_trace[l], model.prune_state(l));
        PruneOptions layer_options = options;
        layer_options.grain = spec.grain;
        LayerPruneResult result = prune_layer(spec, model.weights[l], input, PruneTarget::from_ratio(it->second),
                                              layer_options, &target);
        out.model.weights[l] = result.repaired_weights;
        out.model.pruning[l] = result.state;
        out.layers.emplace(spec.name, std::move(result));
    }
    out.overhead = count_overhead(out.model);
    return out;
}

}  // namespace xbprune
