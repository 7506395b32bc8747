#include "xbprune/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "xbprune/conv.hpp"
#include "xbprune/device.hpp"
#include "xbprune/error.hpp"
#include "xbprune/mapper.hpp"
#include "xbprune/npy.hpp"
#include "xbprune/policy.hpp"
#include "xbprune/pruner.hpp"
#include "xbprune/serialize.hpp"
#include "xbprune/synthetic.hpp"

namespace xbprune {

namespace fs = std::filesystem;

namespace {

// "4%" is a percentage, "0.04" a fraction.
double parse_fraction(const std::string& text, const char* field) {
    std::string body = text;
    double scale = 1.0;
    if (!body.empty() && body.back() == '%') {
        body.pop_back();
        scale = 0.01;
    }
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(body, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (body.empty() || used != body.size()) throw ValidationError("", field, "not a number: '" + text + "'");
    return v * scale;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> items;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) items.push_back(item);
    return items;
}

struct LabeledData {
    FeatureMaps x;
    std::vector<double> y;
};

LabeledData load_data(const fs::path& path, bool need_labels) {
    const auto arrays = load_npz(path);
    const auto x = arrays.find("x");
    if (x == arrays.end()) throw FormatError("'" + path.string() + "': missing array 'x'");
    LabeledData data{FeatureMaps::from_tensor(x->second), {}};
    const auto y = arrays.find("y");
    if (need_labels) {
        if (y == arrays.end()) throw FormatError("'" + path.string() + "': missing array 'y' (labels)");
        if (y->second.size() != data.x.n)
            throw ValidationError("", "y", "label count " + std::to_string(y->second.size()) +
                                               " does not match " + std::to_string(data.x.n) + " samples");
        data.y = y->second.data;
    }
    return data;
}

Evaluator make_evaluator(const LabeledData& data) {
    return [&data](const Model& m) { return *forward(m, data.x, data.y).accuracy; };
}

void finish_manifest(RunManifest& manifest, const fs::path& path) {
    manifest.finished = utc_timestamp();
    write_text(path, manifest.to_json());
}

RunManifest start_manifest(const std::string& command, const std::vector<std::string>& args, std::uint64_t seed) {
    RunManifest m;
    m.command = command;
    m.arguments = args;
    m.seed = seed;
    m.version = kVersion;
    m.started = utc_timestamp();
    return m;
}

struct Options {
    std::string network;
    std::string out;
    std::string format = "json";
    std::string layer;
    std::string ratio;
    std::string grain;
    bool reorder = false;
    std::uint64_t seed = 0;
    std::string calib;
    std::string eval;
    bool sweep = false;
    bool sweep_only = false;
    std::string decisions;
    std::string td_init = "1%";
    std::string td = "4%";
    std::string tp = "60%";
    std::size_t tc = 400;
    std::string cap_mode = "stop_after";
    std::string ratios;
    std::string sigmas = "0,0.05,0.1,0.2";
    std::string levels = "inf";
    std::size_t trials = 10;
    std::size_t iterations = 50;
};

int cmd_map(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
    RunManifest manifest = start_manifest("map", args, o.seed);
    manifest.config_paths = {o.network};
    const Model model = load_model(o.network);
    std::vector<CrossbarLayout> layouts;
    for (std::size_t l = 0; l < model.spec.layers.size(); ++l)
        layouts.push_back(map_layer(model.spec.layers[l], model.prune_state(l), model.spec.crossbar));
    const OverheadReport report = count_overhead(model);

    for (std::size_t l = 0; l < layouts.size(); ++l)
        out << layouts[l].layer << ": compute=" << layouts[l].compute_count << " total=" << layouts[l].total_count
            << " splits=" << layouts[l].plan.slices.size() << "\n";
    out << "network: compute=" << report.pruned_compute << " total=" << report.pruned_total
        << " dense_compute=" << report.dense_compute << "\n";

    if (o.format == "json")
        write_text(o.out, layout_json(layouts));
    else
        write_text(o.out, overhead_csv(report));
    manifest.add_output(o.out);
    finish_manifest(manifest, o.out + ".manifest.json");
    return 0;
}

int cmd_prune_layer(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
    RunManifest manifest = start_manifest("prune-layer", args, o.seed);
    manifest.config_paths = {o.network, o.calib};
    Model model = load_model(o.network);
    const std::size_t l = model.spec.index_of(o.layer);
    const LayerSpec& layer = model.spec.layers[l];
    const LabeledData calib = load_data(o.calib, false);

    PruneOptions options;
    options.grain = o.grain.empty() ? layer.grain : parse_grain(o.grain);
    options.reorder = o.reorder;
    options.seed = o.seed;
    options.solver.iterations = o.iterations;
    const FeatureMaps input = forward_trace(model, calib.x).at(l);
    const LayerPruneResult result = prune_layer(layer, model.weights[l], input,
                                                PruneTarget::from_ratio(parse_fraction(o.ratio, "ratio")), options);

    const fs::path dir = o.out;
    const fs::path masks = dir / (layer.name + ".masks.json");
    const fs::path report = dir / (layer.name + ".report.json");
    write_text(masks, masks_json(layer.name, result.state));
    write_text(report, prune_report_json(layer.name, result));
    model.weights[l] = result.repaired_weights;
    model.pruning.resize(model.spec.layers.size());
    model.pruning[l] = result.state;
    const fs::path net = save_model(model, dir, "pruned");
    for (const auto& p : {masks, report, net, dir / ("pruned." + layer.name + ".npy")}) manifest.add_output(p);

    out << layer.name << ": kept " << result.state.masks.count() << " of "
        << layer.in_groups() * layer.out_groups() << " group connections, relative loss "
        << format_double(result.relative_loss_before()) << " -> " << format_double(result.relative_loss_after())
        << (result.ridge_fallback ? " (ridge fallback)" : "") << "\n";
    finish_manifest(manifest, dir / "manifest.json");
    return 0;
}

PolicyThresholds thresholds_from(const Options& o) {
    PolicyThresholds t;
    t.initial_drop = parse_fraction(o.td_init, "T_d_initial");
    t.max_drop = parse_fraction(o.td, "T_d");
    t.max_ratio = parse_fraction(o.tp, "T_p");
    t.min_crossbars = o.tc;
    t.cap_mode = parse_cap_mode(o.cap_mode);
    t.validate();
    return t;
}

std::vector<LayerDecision> read_decisions(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open decisions file '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("decisions file: " + std::string(e.what()));
    }
    std::vector<LayerDecision> out;
    try {
        for (const auto& d : j.at("decisions")) {
            LayerDecision decision;
            decision.layer = d.at("layer").get<std::string>();
            decision.ratio = d.at("ratio").get<double>();
            out.push_back(decision);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("decisions file: " + std::string(e.what()));
    }
    return out;
}

int cmd_prune_net(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
    RunManifest manifest = start_manifest("prune-net", args, o.seed);
    const int sources = (o.sweep || o.sweep_only) + !o.decisions.empty() + !o.ratio.empty();
    if (sources != 1) throw ValidationError("", "prune-net", "give exactly one of --sweep/--sweep-only, --decisions, --ratio");
    const bool sweeping = o.sweep || o.sweep_only;
    if (sweeping && o.eval.empty()) throw ValidationError("", "eval", "--sweep needs --eval data.npz");

    manifest.config_paths = {o.network};
    const Model model = load_model(o.network);
    const PolicyThresholds thresholds = thresholds_from(o);
    LabeledData eval;
    if (!o.eval.empty()) {
        eval = load_data(o.eval, true);
        manifest.config_paths.push_back(o.eval);
    }
    const std::string calib_path = o.calib.empty() ? o.eval : o.calib;
    if (calib_path.empty()) throw ValidationError("", "calib", "need --calib or --eval for calibration inputs");
    if (!o.calib.empty()) manifest.config_paths.push_back(o.calib);
    const LabeledData calib = o.calib.empty() ? eval : load_data(o.calib, false);

    PruneOptions prune;
    prune.reorder = o.reorder;
    prune.seed = o.seed;
    prune.solver.iterations = o.iterations;

    const fs::path dir = o.out;
    const std::vector<std::size_t> prunable = prunable_layers(model.spec);
    std::vector<LayerDecision> decisions;
    if (sweeping) {
        SweepOptions sweep;
        sweep.prune = prune;
        if (!o.ratios.empty()) {
            sweep.ratios.clear();
            for (const auto& r : split_list(o.ratios)) sweep.ratios.push_back(parse_fraction(r, "ratios"));
        }
        const Evaluator evaluate = make_evaluator(eval);
        std::vector<SensitivityTable> tables;
        for (std::size_t l : prunable) {
            tables.push_back(sweep_layer(model, l, calib.x, evaluate, sweep));
            out << "swept " << tables.back().layer << "\n";
        }
        write_text(dir / "sensitivity.csv", sensitivity_csv(tables));
        write_text(dir / "sensitivity.json", sensitivity_json(tables));
        manifest.add_output(dir / "sensitivity.csv");
        manifest.add_output(dir / "sensitivity.json");
        if (o.sweep_only) {
            finish_manifest(manifest, dir / "manifest.json");
            return 0;
        }
        decisions = decide(tables, thresholds);
    } else if (!o.decisions.empty()) {
        manifest.config_paths.push_back(o.decisions);
        decisions = read_decisions(o.decisions);
    } else {
        const double ratio = parse_fraction(o.ratio, "ratio");
        for (std::size_t l : prunable) decisions.push_back({model.spec.layers[l].name, ratio, ratio, StopReason::SweepEnd});
    }

    std::map<std::string, double> ratios;
    for (const auto& d : decisions) {
        const std::size_t l = model.spec.index_of(d.layer);
        if (std::find(prunable.begin(), prunable.end(), l) == prunable.end())
            throw ValidationError(d.layer, "decisions", "the first conv and the last FC layer are not pruned");
        ratios[d.layer] = d.ratio;
    }
    const NetworkPruneResult result = prune_network(model, ratios, calib.x, prune);

    write_text(dir / "decisions.json", decisions_json(decisions, thresholds));
    write_text(dir / "overhead.csv", overhead_csv(result.overhead));
    write_text(dir / "overhead.json", overhead_json(result.overhead));
    manifest.add_output(dir / "decisions.json");
    manifest.add_output(dir / "overhead.csv");
    manifest.add_output(dir / "overhead.json");
    for (const auto& [name, layer_result] : result.layers) {
        const fs::path masks = dir / "masks" / (name + ".json");
        write_text(masks, masks_json(name, layer_result.state));
        manifest.add_output(masks);
    }
    const fs::path net = save_model(result.model, dir, "pruned");
    manifest.add_output(net);
    for (const auto& layer : result.model.spec.layers) manifest.add_output(dir / ("pruned." + layer.name + ".npy"));

    for (const auto& d : decisions)
        out << d.layer << ": ratio " << format_double(d.ratio) << " (" << to_string(d.reason) << ")\n";
    out << "compute crossbars " << result.overhead.dense_compute << " -> " << result.overhead.pruned_compute << "\n";
    if (!eval.y.empty()) {
        out << "accuracy " << format_double(*forward(model, eval.x, eval.y).accuracy) << " -> "
            << format_double(*forward(result.model, eval.x, eval.y).accuracy) << "\n";
    }
    finish_manifest(manifest, dir / "manifest.json");
    return 0;
}

int cmd_noise(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
    RunManifest manifest = start_manifest("noise", args, o.seed);
    manifest.config_paths = {o.network, o.eval};
    const Model model = load_model(o.network);
    const LabeledData eval = load_data(o.eval, true);
    std::vector<double> sigmas;
    for (const auto& s : split_list(o.sigmas)) sigmas.push_back(parse_fraction(s, "sigmas"));
    std::vector<std::optional<std::size_t>> levels;
    for (const auto& l : split_list(o.levels)) levels.push_back(parse_levels(l));
    const NoiseGrid grid = noise_sweep(model, eval.x, eval.y, sigmas, levels, o.trials, o.seed);
    write_text(o.out, noise_csv(grid));
    manifest.add_output(o.out);
    out << "clean accuracy " << format_double(grid.clean_accuracy) << "\n" << noise_csv(grid);
    finish_manifest(manifest, o.out + ".manifest.json");
    return 0;
}

int cmd_demo(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
    RunManifest manifest = start_manifest("demo", args, o.seed);
    SyntheticOptions options;
    options.seed = o.seed;
    const SyntheticTask task = make_synthetic_task(options);
    const fs::path net = write_synthetic_task(task, o.out);
    manifest.add_output(net);
    for (const auto& layer : task.model.spec.layers) manifest.add_output(fs::path(o.out) / ("net." + layer.name + ".npy"));
    manifest.add_output(fs::path(o.out) / "eval.npz");
    manifest.add_output(fs::path(o.out) / "calib.npz");
    out << "wrote " << net.string() << " (eval accuracy "
        << format_double(*forward(task.model, task.evaluation.x, task.evaluation.y).accuracy) << ")\n";
    finish_manifest(manifest, fs::path(o.out) / "manifest.json");
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Crossbar-aware structured pruning toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);
    Options o;

    auto* map = app.add_subcommand("map", "Map a network onto crossbars and count them");
    map->add_option("network", o.network, "Network JSON")->required();
    map->add_option("--out", o.out, "Output file (layout JSON or overhead CSV)")->required();
    map->add_option("--format", o.format, "json (layout) or csv (overhead)")->check(CLI::IsMember({"json", "csv"}));

    auto* layer = app.add_subcommand("prune-layer", "Prune one layer and repair its weights");
    layer->add_option("network", o.network, "Network JSON")->required();
    layer->add_option("--layer", o.layer, "Layer name")->required();
    layer->add_option("--ratio", o.ratio, "Pruning ratio, e.g. 0.5 or 50%")->required();
    layer->add_option("--grain", o.grain, "column or crossbar (default: the layer's grain)")
        ->check(CLI::IsMember({"column", "crossbar"}));
    layer->add_flag("--reorder", o.reorder, "Reorder input FMs by importance before grouping");
    layer->add_option("--calib", o.calib, "Calibration inputs (.npz with array x)")->required();
    layer->add_option("--iterations", o.iterations, "Solver iterations");
    layer->add_option("--seed", o.seed, "Random seed");
    layer->add_option("--out", o.out, "Output directory")->required();

    auto* net = app.add_subcommand("prune-net", "Sensitivity sweep, ratio policy and network pruning");
    net->add_option("network", o.network, "Network JSON")->required();
    net->add_flag("--sweep", o.sweep, "Run the per-layer sensitivity sweep and derive ratios");
    net->add_flag("--sweep-only", o.sweep_only, "Write the sensitivity tables and stop");
    net->add_option("--decisions", o.decisions, "Reuse ratios from a decisions JSON");
    net->add_option("--ratio", o.ratio, "Prune every prunable layer at this ratio");
    net->add_option("--ratios", o.ratios, "Comma-separated sweep ratios (default 20%..70% step 5%)");
    net->add_option("--eval", o.eval, "Held-out data (.npz with x and float labels y)");
    net->add_option("--calib", o.calib, "Calibration inputs (.npz with x; default: --eval)");
    net->add_option("--Td-init", o.td_init, "Accuracy drop for the initial ratio");
    net->add_option("--Td", o.td, "Maximum accuracy drop");
    net->add_option("--Tp", o.tp, "Maximum pruning ratio");
    net->add_option("--Tc", o.tc, "Minimum remaining compute crossbars");
    net->add_option("--cap-mode", o.cap_mode, "stop_after or clamp")->check(CLI::IsMember({"stop_after", "clamp"}));
    net->add_flag("--reorder", o.reorder, "Reorder input FMs by importance before grouping");
    net->add_option("--iterations", o.iterations, "Solver iterations");
    net->add_option("--seed", o.seed, "Random seed");
    net->add_option("--out", o.out, "Output directory")->required();

    auto* noise = app.add_subcommand("noise", "Accuracy under conductance quantization and variation");
    noise->add_option("network", o.network, "Network JSON")->required();
    noise->add_option("--eval", o.eval, "Held-out data (.npz with x and float labels y)")->required();
    noise->add_option("--sigmas", o.sigmas, "Comma-separated variation sigmas");
    noise->add_option("--levels", o.levels, "Comma-separated level counts or inf");
    noise->add_option("--trials", o.trials, "Draws per cell");
    noise->add_option("--seed", o.seed, "Random seed");
    noise->add_option("--out", o.out, "Output CSV")->required();

    auto* demo = app.add_subcommand("demo", "Write a small synthetic network and data set");
    demo->add_option("--seed", o.seed, "Random seed");
    demo->add_option("--out", o.out, "Output directory")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (map->parsed()) return cmd_map(o, args, out);
        if (layer->parsed()) return cmd_prune_layer(o, args, out);
        if (net->parsed()) return cmd_prune_net(o, args, out);
        if (noise->parsed()) return cmd_noise(o, args, out);
        if (demo->parsed()) return cmd_demo(o, args, out);
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace xbprune
