#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xbprune/tensor.hpp"

namespace xbprune {

enum class LayerKind { Conv, FC };

// Crossbar grain prunes whole (input group, output group) crossbars; column
// grain prunes column blocks and re-packs the survivors of each input group.
enum class Grain { Crossbar, Column };

const char* to_string(LayerKind kind) noexcept;
const char* to_string(Grain grain) noexcept;
Grain parse_grain(const std::string& text);

struct CrossbarDims {
    std::size_t rows = 0;
    std::size_t cols = 0;
};

struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::Conv;
    std::size_t in_fms = 0;   // P
    std::size_t out_fms = 0;  // Q
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t in_group_size = 1;   // K_in
    std::size_t out_group_size = 1;  // K_out
    std::size_t non_compute_overhead = 0;
    Grain grain = Grain::Column;
    bool relu = true;
    std::size_t pool = 1;  // max-pool window (and stride) applied after the activation
    std::filesystem::path weights_path;

    // Resolved while loading from the network input shape.
    std::size_t in_h = 1;
    std::size_t in_w = 1;

    std::size_t in_groups() const noexcept { return in_fms / in_group_size; }     // I
    std::size_t out_groups() const noexcept { return out_fms / out_group_size; }  // J
    std::size_t out_h() const noexcept;
    std::size_t out_w() const noexcept;
    std::size_t out_spatial() const noexcept { return out_h() * out_w(); }
    // Spatial size after pooling; the next layer's input.
    std::size_t pooled_h() const noexcept { return out_h() / pool; }
    std::size_t pooled_w() const noexcept { return out_w() / pool; }

    // Throws ValidationError naming this layer and the offending field.
    void validate() const;
};

struct NetworkSpec {
    CrossbarDims crossbar;
    std::size_t input_h = 1;
    std::size_t input_w = 1;
    std::size_t input_c = 1;
    std::vector<LayerSpec> layers;
    std::filesystem::path base_dir;

    // Resolves per-layer input geometry and checks every invariant.
    void resolve_and_validate();
    std::size_t index_of(const std::string& layer_name) const;
};

// Contiguous index block [first, first + size) of group `index`.
struct IndexRange {
    std::size_t first = 0;
    std::size_t size = 0;
};
IndexRange group_range(std::size_t index, std::size_t group_size) noexcept;

// Binary I x J pruning mask; bit (i, j) keeps the connection between input
// group i and output group j.
class GroupMask {
public:
    GroupMask() = default;
    GroupMask(std::size_t in_groups, std::size_t out_groups, bool value = true)
        : in_groups_(in_groups), out_groups_(out_groups), bits_(in_groups * out_groups, value ? 1 : 0) {}

    std::size_t in_groups() const noexcept { return in_groups_; }
    std::size_t out_groups() const noexcept { return out_groups_; }
    bool at(std::size_t i, std::size_t j) const noexcept { return bits_[i * out_groups_ + j] != 0; }
    void set(std::size_t i, std::size_t j, bool v) noexcept { bits_[i * out_groups_ + j] = v ? 1 : 0; }
    std::size_t column_count(std::size_t j) const noexcept;
    std::size_t row_count(std::size_t i) const noexcept;
    std::size_t count() const noexcept;

    bool operator==(const GroupMask&) const = default;

private:
    std::size_t in_groups_ = 0;
    std::size_t out_groups_ = 0;
    std::vector<std::uint8_t> bits_;
};

// Persisted outcome of pruning one layer. `order[k]` is the original input
// FM placed at position k; input group i covers positions
// [i*K_in, (i+1)*K_in).
struct LayerPruneState {
    Grain grain = Grain::Column;
    std::vector<std::size_t> order;
    GroupMask masks;

    // Input group of each original input FM.
    std::vector<std::size_t> group_of_input(std::size_t group_size) const;
    bool operator==(const LayerPruneState&) const = default;
};

std::vector<std::size_t> identity_order(std::size_t n);
std::vector<std::size_t> invert_permutation(std::span<const std::size_t> order);
bool is_permutation(std::span<const std::size_t> order, std::size_t n);

// A network with loaded weights. weights[l] has shape [kh, kw, P, Q].
struct Model {
    NetworkSpec spec;
    std::vector<Tensor> weights;
    std::vector<std::optional<LayerPruneState>> pruning;

    const LayerPruneState* prune_state(std::size_t layer) const noexcept {
        return pruning.size() > layer && pruning[layer] ? &*pruning[layer] : nullptr;
    }
};

NetworkSpec load_network(const std::filesystem::path& path);
NetworkSpec parse_network(const std::string& json_text, const std::filesystem::path& base_dir);

// load_network plus weights (FC weights may be stored as [P, Q]) and any
// inline pruning state.
Model load_model(const std::filesystem::path& path);

// Writes <dir>/<stem>.json and one weights file per layer under <dir>.
std::filesystem::path save_model(const Model& model, const std::filesystem::path& dir, const std::string& stem);

}  // namespace xbprune
