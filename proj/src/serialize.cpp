#include "xbprune/serialize.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "xbprune/error.hpp"
#include "xbprune/util.hpp"

namespace xbprune {

using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json mask_rows(const GroupMask& masks) {
    ordered_json rows = ordered_json::array();
    for (std::size_t i = 0; i < masks.in_groups(); ++i) {
        std::vector<int> row(masks.out_groups());
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = masks.at(i, j) ? 1 : 0;
        rows.push_back(row);
    }
    return rows;
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

}  // namespace

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string masks_json(const std::string& layer, const LayerPruneState& state) {
    ordered_json j;
    j["layer"] = layer;
    j["grain"] = to_string(state.grain);
    j["permutation"] = state.order;
    j["masks"] = mask_rows(state.masks);
    return dump(j);
}

std::string prune_report_json(const std::string& layer, const LayerPruneResult& result) {
    ordered_json j;
    j["layer"] = layer;
    j["grain"] = to_string(result.state.grain);
    j["budgets"] = result.budgets;
    j["surviving_connections"] = result.state.masks.count();
    j["solver_loss"] = result.solver_loss;
    j["loss_before"] = result.loss_before;
    j["loss_after"] = result.loss_after;
    j["relative_loss_before"] = result.relative_loss_before();
    j["relative_loss_after"] = result.relative_loss_after();
    j["ridge_fallback"] = result.ridge_fallback;
    return dump(j);
}

std::string layout_json(const std::vector<CrossbarLayout>& layouts) {
    ordered_json arr = ordered_json::array();
    for (const auto& layout : layouts) {
        ordered_json j;
        j["layer"] = layout.layer;
        j["grain"] = to_string(layout.grain);
        j["compute_count"] = layout.compute_count;
        j["non_compute"] = layout.non_compute;
        j["total_count"] = layout.total_count;
        j["order"] = layout.order;
        ordered_json slices = ordered_json::array();
        for (const auto& s : layout.plan.slices)
            slices.push_back({{"out_first", s.out_first}, {"out_count", s.out_count},
                              {"in_first", s.in_first}, {"in_count", s.in_count}});
        j["width_slices"] = slices;
        ordered_json xbs = ordered_json::array();
        for (const auto& xb : layout.crossbars) {
            ordered_json c;
            c["input_group"] = xb.input_group;
            c["slice"] = xb.slice;
            c["rows_used"] = xb.rows_used;
            c["cols_used"] = xb.cols_used;
            ordered_json cols = ordered_json::array();
            for (const auto& col : xb.columns) cols.push_back({col.out_fm, col.window});
            c["columns"] = cols;
            xbs.push_back(c);
        }
        j["crossbars"] = xbs;
        arr.push_back(j);
    }
    return dump(ordered_json{{"layers", arr}});
}

std::string overhead_json(const OverheadReport& report) {
    ordered_json layers = ordered_json::array();
    for (const auto& l : report.layers)
        layers.push_back({{"layer", l.layer},
                          {"dense_total", l.dense_total},
                          {"dense_compute", l.dense_compute},
                          {"pruned_total", l.pruned_total},
                          {"pruned_compute", l.pruned_compute}});
    ordered_json j;
    j["layers"] = layers;
    j["dense_total"] = report.dense_total;
    j["dense_compute"] = report.dense_compute;
    j["pruned_total"] = report.pruned_total;
    j["pruned_compute"] = report.pruned_compute;
    j["compute_saving"] = report.compute_saving();
    return dump(j);
}

std::string overhead_csv(const OverheadReport& report) {
    std::ostringstream out;
    out << "layer,dense_T,dense_C,pruned_T,pruned_C\n";
    for (const auto& l : report.layers)
        out << l.layer << ',' << l.dense_total << ',' << l.dense_compute << ',' << l.pruned_total << ','
            << l.pruned_compute << '\n';
    out << "total," << report.dense_total << ',' << report.dense_compute << ',' << report.pruned_total << ','
        << report.pruned_compute << '\n';
    return out.str();
}

std::string sensitivity_csv(const std::vector<SensitivityTable>& tables) {
    std::ostringstream out;
    out << "layer,ratio,accuracy,drop,compute_crossbars\n";
    for (const auto& t : tables)
        for (const auto& r : t.rows)
            out << t.layer << ',' << format_double(r.ratio) << ',' << format_double(r.accuracy) << ','
                << format_double(r.drop) << ',' << r.compute_crossbars << '\n';
    return out.str();
}

std::string sensitivity_json(const std::vector<SensitivityTable>& tables) {
    ordered_json arr = ordered_json::array();
    for (const auto& t : tables) {
        ordered_json rows = ordered_json::array();
        for (const auto& r : t.rows)
            rows.push_back({{"ratio", r.ratio},
                            {"accuracy", r.accuracy},
                            {"drop", r.drop},
                            {"compute_crossbars", r.compute_crossbars}});
        arr.push_back({{"layer", t.layer}, {"baseline_accuracy", t.baseline_accuracy}, {"rows", rows}});
    }
    return dump(ordered_json{{"layers", arr}});
}

std::string decisions_json(const std::vector<LayerDecision>& decisions, const PolicyThresholds& thresholds) {
    ordered_json j;
    j["thresholds"] = {{"T_d_initial", thresholds.initial_drop},
                       {"T_d", thresholds.max_drop},
                       {"T_p", thresholds.max_ratio},
                       {"T_c", thresholds.min_crossbars},
                       {"cap_mode", to_string(thresholds.cap_mode)}};
    ordered_json arr = ordered_json::array();
    for (const auto& d : decisions)
        arr.push_back({{"layer", d.layer},
                       {"start_ratio", d.start_ratio},
                       {"ratio", d.ratio},
                       {"stop_reason", to_string(d.reason)}});
    j["decisions"] = arr;
    return dump(j);
}

std::string noise_csv(const NoiseGrid& grid) {
    std::ostringstream out;
    out << "sigma";
    for (const auto& l : grid.levels) out << ",levels_" << levels_label(l);
    out << '\n';
    for (std::size_t s = 0; s < grid.sigmas.size(); ++s) {
        out << format_double(grid.sigmas[s]);
        for (double acc : grid.mean_accuracy[s]) out << ',' << format_double(acc);
        out << '\n';
    }
    return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + path.string() + "'");
    out << text;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(ss.str())));
    return buf;
}

void RunManifest::add_output(const std::filesystem::path& path) { outputs[path.string()] = file_digest(path); }

std::string RunManifest::to_json() const {
    ordered_json j;
    j["command"] = command;
    j["arguments"] = arguments;
    j["config_paths"] = config_paths;
    j["seed"] = seed;
    j["version"] = version;
    j["started"] = started;
    j["finished"] = finished;
    ordered_json outs = ordered_json::object();
    for (const auto& [path, digest] : outputs) outs[path] = digest;
    j["outputs"] = outs;
    return dump(j);
}

}  // namespace xbprune
