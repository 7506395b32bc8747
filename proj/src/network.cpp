#include "xbprune/network.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "xbprune/error.hpp"
#include "xbprune/npy.hpp"

namespace xbprune {

using nlohmann::json;
using nlohmann::ordered_json;

const char* to_string(LayerKind kind) noexcept { return kind == LayerKind::Conv ? "conv" : "fc"; }

const char* to_string(Grain grain) noexcept { return grain == Grain::Column ? "column" : "crossbar"; }

Grain parse_grain(const std::string& text) {
    if (text == "column") return Grain::Column;
    if (text == "crossbar") return Grain::Crossbar;
    throw ValidationError("", "grain", "expected 'column' or 'crossbar', got '" + text + "'");
}

std::size_t LayerSpec::out_h() const noexcept {
    const std::size_t padded = in_h + 2 * padding;
    return padded < kernel_h ? 0 : (padded - kernel_h) / stride + 1;
}

std::size_t LayerSpec::out_w() const noexcept {
    const std::size_t padded = in_w + 2 * padding;
    return padded < kernel_w ? 0 : (padded - kernel_w) / stride + 1;
}

void LayerSpec::validate() const {
    if (name.empty()) throw ValidationError("", "name", "layer name must be non-empty");
    if (in_fms == 0) throw ValidationError(name, "P", "must be positive");
    if (out_fms == 0) throw ValidationError(name, "Q", "must be positive");
    if (in_group_size == 0) throw ValidationError(name, "K_in", "must be positive");
    if (out_group_size == 0) throw ValidationError(name, "K_out", "must be positive");
    if (in_fms % in_group_size != 0)
        throw ValidationError(name, "K_in",
                              "P=" + std::to_string(in_fms) + " is not divisible by K_in=" + std::to_string(in_group_size));
    if (out_fms % out_group_size != 0)
        throw ValidationError(name, "K_out",
                              "Q=" + std::to_string(out_fms) + " is not divisible by K_out=" +
                                  std::to_string(out_group_size));
    if (stride == 0) throw ValidationError(name, "stride", "must be positive");
    if (kernel_h == 0 || kernel_w == 0) throw ValidationError(name, "kernel", "dimensions must be positive");
    if (pool == 0) throw ValidationError(name, "pool", "must be positive");
    if (kind == LayerKind::FC) {
        if (kernel_h != 1 || kernel_w != 1) throw ValidationError(name, "kernel", "FC layers require a 1x1 kernel");
        if (stride != 1 || padding != 0) throw ValidationError(name, "stride", "FC layers require stride 1, padding 0");
        if (pool != 1) throw ValidationError(name, "pool", "FC layers cannot pool");
    }
}

IndexRange group_range(std::size_t index, std::size_t group_size) noexcept {
    return {index * group_size, group_size};
}

std::size_t GroupMask::column_count(std::size_t j) const noexcept {
    std::size_t c = 0;
    for (std::size_t i = 0; i < in_groups_; ++i) c += at(i, j);
    return c;
}

std::size_t GroupMask::row_count(std::size_t i) const noexcept {
    std::size_t c = 0;
    for (std::size_t j = 0; j < out_groups_; ++j) c += at(i, j);
    return c;
}

std::size_t GroupMask::count() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::vector<std::size_t> LayerPruneState::group_of_input(std::size_t group_size) const {
    std::vector<std::size_t> g(order.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos) g[order[pos]] = pos / group_size;
    return g;
}

std::vector<std::size_t> identity_order(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t k = 0; k < n; ++k) v[k] = k;
    return v;
}

std::vector<std::size_t> invert_permutation(std::span<const std::size_t> order) {
    std::vector<std::size_t> inv(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) inv[order[k]] = k;
    return inv;
}

bool is_permutation(std::span<const std::size_t> order, std::size_t n) {
    if (order.size() != n) return false;
    std::vector<bool> seen(n, false);
    for (std::size_t v : order) {
        if (v >= n || seen[v]) return false;
        seen[v] = true;
    }
    return true;
}

void NetworkSpec::resolve_and_validate() {
    if (crossbar.rows == 0 || crossbar.cols == 0)
        throw ValidationError("", "crossbar", "rows and cols must be positive");
    if (layers.empty()) throw ValidationError("", "layers", "network has no layers");
    std::set<std::string> names;
    std::size_t h = input_h, w = input_w, c = input_c;
    for (auto& layer : layers) {
        layer.validate();
        if (!names.insert(layer.name).second) throw ValidationError(layer.name, "name", "duplicate layer name");
        if (layer.kind == LayerKind::Conv) {
            if (layer.in_fms != c)
                throw ValidationError(layer.name, "P",
                                      "expects " + std::to_string(layer.in_fms) + " input FMs but receives " +
                                          std::to_string(c));
            layer.in_h = h;
            layer.in_w = w;
            if (layer.out_h() == 0 || layer.out_w() == 0)
                throw ValidationError(layer.name, "kernel", "output feature map would be empty");
            if (layer.pooled_h() == 0 || layer.pooled_w() == 0)
                throw ValidationError(layer.name, "pool", "pooling window exceeds the output feature map");
            h = layer.pooled_h();
            w = layer.pooled_w();
        } else {
            if (layer.in_fms != h * w * c)
                throw ValidationError(layer.name, "P",
                                      "expects " + std::to_string(layer.in_fms) + " inputs but receives " +
                                          std::to_string(h * w * c) + " (flattened)");
            layer.in_h = 1;
            layer.in_w = 1;
            h = 1;
            w = 1;
        }
        c = layer.out_fms;
    }
}

std::size_t NetworkSpec::index_of(const std::string& layer_name) const {
    for (std::size_t k = 0; k < layers.size(); ++k)
        if (layers[k].name == layer_name) return k;
    throw ValidationError(layer_name, "name", "no such layer");
}

namespace {

template <typename T>
T required(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key)) throw FormatError(where + ": missing key '" + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw FormatError(where + ": key '" + key + "' has the wrong type (" + e.what() + ")");
    }
}

template <typename T>
T optional_key(const json& obj, const char* key, T fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw FormatError(where + ": key '" + key + "' has the wrong type (" + e.what() + ")");
    }
}

std::size_t count_field(const json& obj, const char* key, const std::string& layer) {
    const auto v = required<long long>(obj, key, "layer '" + layer + "'");
    if (v < 0) throw ValidationError(layer, key, "must be non-negative");
    return static_cast<std::size_t>(v);
}

LayerPruneState parse_prune_state(const json& node, const LayerSpec& layer) {
    const std::string where = "layer '" + layer.name + "' prune";
    LayerPruneState state;
    state.grain = parse_grain(required<std::string>(node, "grain", where));
    state.order = optional_key<std::vector<std::size_t>>(node, "permutation", identity_order(layer.in_fms), where);
    if (!is_permutation(state.order, layer.in_fms))
        throw ValidationError(layer.name, "permutation", "must be a permutation of [0, P)");
    const auto rows = required<std::vector<std::vector<int>>>(node, "masks", where);
    if (rows.size() != layer.in_groups())
        throw ValidationError(layer.name, "masks", "expected " + std::to_string(layer.in_groups()) + " rows (I)");
    state.masks = GroupMask(layer.in_groups(), layer.out_groups(), false);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != layer.out_groups())
            throw ValidationError(layer.name, "masks",
                                  "expected " + std::to_string(layer.out_groups()) + " columns (J)");
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            if (rows[i][j] != 0 && rows[i][j] != 1) throw ValidationError(layer.name, "masks", "entries must be 0 or 1");
            state.masks.set(i, j, rows[i][j] == 1);
        }
    }
    return state;
}

LayerSpec parse_layer(const json& node, const std::filesystem::path& base_dir, std::size_t position) {
    LayerSpec layer;
    layer.name = optional_key<std::string>(node, "name", "", "layer #" + std::to_string(position));
    if (layer.name.empty()) throw FormatError("layer #" + std::to_string(position) + ": missing key 'name'");
    const std::string where = "layer '" + layer.name + "'";

    const auto kind = required<std::string>(node, "kind", where);
    if (kind == "conv" || kind == "Conv")
        layer.kind = LayerKind::Conv;
    else if (kind == "fc" || kind == "FC")
        layer.kind = LayerKind::FC;
    else
        throw ValidationError(layer.name, "kind", "expected 'conv' or 'fc', got '" + kind + "'");

    layer.in_fms = count_field(node, "P", layer.name);
    layer.out_fms = count_field(node, "Q", layer.name);
    layer.in_group_size = count_field(node, "K_in", layer.name);
    layer.out_group_size = node.contains("K_out") ? count_field(node, "K_out", layer.name)
                                                  : (layer.kind == LayerKind::FC ? 8 : 1);
    if (node.contains("kernel")) {
        const auto k = required<std::vector<long long>>(node, "kernel", where);
        if (k.size() != 2 || k[0] <= 0 || k[1] <= 0)
            throw ValidationError(layer.name, "kernel", "expected [h, w] with positive entries");
        layer.kernel_h = static_cast<std::size_t>(k[0]);
        layer.kernel_w = static_cast<std::size_t>(k[1]);
    } else if (layer.kind == LayerKind::Conv) {
        throw FormatError(where + ": missing key 'kernel'");
    }
    layer.stride = node.contains("stride") ? count_field(node, "stride", layer.name) : 1;
    layer.padding = node.contains("padding") ? count_field(node, "padding", layer.name) : 0;
    layer.pool = node.contains("pool") ? count_field(node, "pool", layer.name) : 1;
    layer.non_compute_overhead =
        node.contains("non_compute_overhead") ? count_field(node, "non_compute_overhead", layer.name) : 0;
    layer.relu = optional_key<bool>(node, "relu", true, where);

    const bool column_default = layer.kind == LayerKind::FC || layer.out_group_size == 1;
    layer.grain = parse_grain(optional_key<std::string>(node, "grain", column_default ? "column" : "crossbar", where));

    const auto weights = optional_key<std::string>(node, "weights", "", where);
    if (weights.empty()) throw ValidationError(layer.name, "weights", "missing weights path");
    layer.weights_path = std::filesystem::path(weights).is_absolute() ? std::filesystem::path(weights)
                                                                      : base_dir / weights;
    if (!std::filesystem::exists(layer.weights_path))
        throw ValidationError(layer.name, "weights", "file not found: " + layer.weights_path.string());
    return layer;
}

}  // namespace

NetworkSpec parse_network(const std::string& json_text, const std::filesystem::path& base_dir) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("network JSON: ") + e.what());
    }
    if (!root.is_object()) throw FormatError("network JSON: top level must be an object");

    NetworkSpec net;
    net.base_dir = base_dir;
    const json crossbar = required<json>(root, "crossbar", "network");
    net.crossbar.rows = required<std::size_t>(crossbar, "rows", "crossbar");
    net.crossbar.cols = required<std::size_t>(crossbar, "cols", "crossbar");

    const json layers = required<json>(root, "layers", "network");
    if (!layers.is_array()) throw FormatError("network: 'layers' must be an array");
    for (std::size_t k = 0; k < layers.size(); ++k) net.layers.push_back(parse_layer(layers[k], base_dir, k));

    if (!net.layers.empty()) net.input_c = net.layers.front().in_fms;
    if (root.contains("input")) {
        const json input = root.at("input");
        net.input_h = required<std::size_t>(input, "height", "input");
        net.input_w = required<std::size_t>(input, "width", "input");
        net.input_c = optional_key<std::size_t>(input, "channels", net.input_c, "input");
    } else if (!net.layers.empty() && net.layers.front().kind == LayerKind::Conv) {
        throw FormatError("network: missing key 'input' (height, width) required by conv layers");
    }
    net.resolve_and_validate();
    return net;
}

NetworkSpec load_network(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open network file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_network(ss.str(), path.parent_path());
}

Model load_model(const std::filesystem::path& path) {
    Model model;
    model.spec = load_network(path);

    std::ifstream in(path);
    const json root = json::parse(in);
    const json& layers = root.at("layers");

    for (std::size_t l = 0; l < model.spec.layers.size(); ++l) {
        const LayerSpec& layer = model.spec.layers[l];
        Tensor w = load_tensor(layer.weights_path);
        const std::vector<std::size_t> expected{layer.kernel_h, layer.kernel_w, layer.in_fms, layer.out_fms};
        if (layer.kind == LayerKind::FC && w.shape == std::vector<std::size_t>{layer.in_fms, layer.out_fms})
            w.shape = expected;
        if (w.shape != expected) {
            std::string got;
            for (auto d : w.shape) got += (got.empty() ? "" : "x") + std::to_string(d);
            throw ValidationError(layer.name, "weights",
                                  "shape " + got + " does not match [kernel_h, kernel_w, P, Q]");
        }
        model.weights.push_back(std::move(w));
        if (layers[l].contains("prune"))
            model.pruning.emplace_back(parse_prune_state(layers[l].at("prune"), layer));
        else
            model.pruning.emplace_back(std::nullopt);
    }
    return model;
}

std::filesystem::path save_model(const Model& model, const std::filesystem::path& dir, const std::string& stem) {
    std::filesystem::create_directories(dir);
    ordered_json root;
    root["crossbar"] = {{"rows", model.spec.crossbar.rows}, {"cols", model.spec.crossbar.cols}};
    root["input"] = {{"height", model.spec.input_h}, {"width", model.spec.input_w}, {"channels", model.spec.input_c}};
    ordered_json layers = ordered_json::array();
    for (std::size_t l = 0; l < model.spec.layers.size(); ++l) {
        const LayerSpec& layer = model.spec.layers[l];
        const std::string file = stem + "." + layer.name + ".npy";
        save_tensor(model.weights[l], dir / file);
        ordered_json node;
        node["name"] = layer.name;
        node["kind"] = to_string(layer.kind);
        node["P"] = layer.in_fms;
        node["Q"] = layer.out_fms;
        node["kernel"] = {layer.kernel_h, layer.kernel_w};
        node["stride"] = layer.stride;
        node["padding"] = layer.padding;
        node["K_in"] = layer.in_group_size;
        node["K_out"] = layer.out_group_size;
        node["weights"] = file;
        node["non_compute_overhead"] = layer.non_compute_overhead;
        node["grain"] = to_string(layer.grain);
        node["relu"] = layer.relu;
        node["pool"] = layer.pool;
        if (const LayerPruneState* state = model.prune_state(l)) {
            ordered_json prune;
            prune["grain"] = to_string(state->grain);
            prune["permutation"] = state->order;
            ordered_json rows = ordered_json::array();
            for (std::size_t i = 0; i < state->masks.in_groups(); ++i) {
                std::vector<int> row(state->masks.out_groups());
                for (std::size_t j = 0; j < row.size(); ++j) row[j] = state->masks.at(i, j) ? 1 : 0;
                rows.push_back(row);
            }
            prune["masks"] = rows;
            node["prune"] = prune;
        }
        layers.push_back(node);
    }
    root["layers"] = layers;
    const auto path = dir / (stem + ".json");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + path.string() + "'");
    out << root.dump(2) << "\n";
    return path;
}

}  // namespace xbprune
