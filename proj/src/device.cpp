#include "xbprune/device.hpp"

#include <algorithm>
#include <cmath>

#include "xbprune/conv.hpp"
#include "xbprune/error.hpp"
#include "xbprune/util.hpp"

namespace xbprune {

void DeviceConfig::validate() const {
    if (levels && *levels < 2) throw ValidationError("", "levels", "need at least 2 levels");
    if (!(sigma >= 0.0 && std::isfinite(sigma))) throw ValidationError("", "sigma", "must be finite and non-negative");
}

void quantize(std::span<double> values, std::optional<std::size_t> levels) {
    if (!levels || values.empty()) return;
    if (*levels < 2) throw ValidationError("", "levels", "need at least 2 levels");
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) return;
    const double steps = static_cast<double>(*levels - 1);
    const auto level = [&](std::size_t k) {
        return k == *levels - 1 ? hi : lo + (hi - lo) * (static_cast<double>(k) / steps);
    };
    for (double& v : values) {
        const double pos = (v - lo) / (hi - lo) * steps;
        auto k = static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, steps));
        // Compare against the materialized grid so snapped values map to themselves.
        if (k + 1 < *levels && (level(k + 1) - v) < (v - level(k))) ++k;
        if (k > 0 && (v - level(k - 1)) <= (level(k) - v)) --k;
        v = level(k);
    }
}

void perturb(std::span<double> values, double sigma, std::mt19937_64& rng) {
    if (sigma == 0.0) return;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : values) v *= std::exp(sigma * normal(rng));
}

Model apply_device(const Model& model, const DeviceConfig& config) {
    config.validate();
    Model out = model;
    for (std::size_t l = 0; l < out.spec.layers.size(); ++l) {
        const LayerSpec& layer = out.spec.layers[l];
        Tensor& w = out.weights[l];
        const LayerPruneState* state = model.prune_state(l);

        std::vector<std::size_t> active;
        if (state) {
            const Tensor mask = masked_weights(layer, Tensor{Dtype::Float64, w.shape, std::vector<double>(w.size(), 1.0)},
                                               *state);
            for (std::size_t k = 0; k < w.size(); ++k)
                if (mask.data[k] != 0.0) active.push_back(k);
        } else {
            active.resize(w.size());
            for (std::size_t k = 0; k < w.size(); ++k) active[k] = k;
        }

        std::vector<double> values(active.size());
        for (std::size_t k = 0; k < active.size(); ++k) values[k] = w.data[active[k]];
        quantize(values, config.levels);
        std::mt19937_64 rng(derive_seed(config.seed, layer.name, 0));
        perturb(values, config.sigma, rng);
        for (std::size_t k = 0; k < active.size(); ++k) w.data[active[k]] = values[k];
    }
    return out;
}

NoiseGrid noise_sweep(const Model& model, const FeatureMaps& inputs, std::span<const double> labels,
                      std::span<const double> sigmas, std::span<const std::optional<std::size_t>> levels,
                      std::size_t trials, std::uint64_t seed) {
    if (trials == 0) throw ValidationError("", "trials", "must be at least 1");
    if (sigmas.empty() || levels.empty()) throw ValidationError("", "grid", "need at least one sigma and one level");
    for (double s : sigmas) DeviceConfig{std::nullopt, s, 0}.validate();
    for (const auto& l : levels) DeviceConfig{l, 0.0, 0}.validate();

    NoiseGrid grid;
    grid.sigmas.assign(sigmas.begin(), sigmas.end());
    grid.levels.assign(levels.begin(), levels.end());
    grid.trials = trials;
    grid.clean_accuracy = *forward(model, inputs, labels).accuracy;

    const std::size_t cells = sigmas.size() * levels.size();
    std::vector<double> acc(cells * trials);
    parallel_for(cells * trials, [&](std::size_t idx) {
        const std::size_t cell = idx / trials, t = idx % trials;
        const DeviceConfig config{levels[cell % levels.size()], sigmas[cell / levels.size()],
                                  derive_seed(seed, "noise-trial", t)};
        acc[idx] = *forward(apply_device(model, config), inputs, labels).accuracy;
    });

    grid.mean_accuracy.assign(sigmas.size(), std::vector<double>(levels.size(), 0.0));
    for (std::size_t cell = 0; cell < cells; ++cell) {
        double sum = 0.0;
        for (std::size_t t = 0; t < trials; ++t) sum += acc[cell * trials + t];
        grid.mean_accuracy[cell / levels.size()][cell % levels.size()] = sum / static_cast<double>(trials);
    }
    return grid;
}

std::string levels_label(std::optional<std::size_t> levels) { return levels ? std::to_string(*levels) : "inf"; }

std::optional<std::size_t> parse_levels(const std::string& text) {
    if (text == "inf" || text == "Inf" || text == "INF") return std::nullopt;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || v < 2) throw ValidationError("", "levels", "expected an integer >= 2 or 'inf', got '" + text + "'");
    return static_cast<std::size_t>(v);
}

}  // namespace xbprune
