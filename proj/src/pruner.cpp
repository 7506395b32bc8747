#include "xbprune/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xbprune/error.hpp"
#include "xbprune/util.hpp"

namespace xbprune {

std::size_t budget_for_ratio(double ratio, std::size_t in_groups) {
    if (!(ratio >= 0.0 && ratio < 1.0)) throw ValidationError("", "ratio", "pruning ratio must lie in [0, 1)");
    const auto kept = static_cast<long long>(std::llround((1.0 - ratio) * static_cast<double>(in_groups)));
    return static_cast<std::size_t>(std::clamp<long long>(kept, 1, static_cast<long long>(in_groups)));
}

std::vector<double> compute_importance(const PartialSumBundle& bundle) {
    std::vector<double> importance(bundle.in_fms, 0.0);
    const std::size_t P = bundle.in_fms, Q = bundle.out_fms;
    for (std::size_t ns = 0; ns < bundle.samples * bundle.spatial; ++ns) {
        const double* row = &bundle.pair[ns * P * Q];
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t q = 0; q < Q; ++q) importance[p] += row[p * Q + q];
    }
    return importance;
}

std::vector<std::size_t> reorder_inputs(std::span<const double> importance) {
    std::vector<std::size_t> order = identity_order(importance.size());
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });
    return order;
}

std::vector<double> contribution_rates(const GroupMask& masks) {
    std::vector<double> rates(masks.in_groups(), 0.0);
    if (masks.out_groups() == 0) return rates;
    for (std::size_t i = 0; i < masks.in_groups(); ++i)
        rates[i] = static_cast<double>(masks.row_count(i)) / static_cast<double>(masks.out_groups());
    return rates;
}

namespace {

struct GroupOutcome {
    std::vector<std::uint8_t> mask;
    double solver_loss = 0.0;
    Eigen::MatrixXd repaired;  // rows: (kh, kw, surviving FM) ; cols: FMs of the group
    std::vector<std::size_t> survivors;  // original FM indices, permuted order
    double loss_before = 0.0;
    double loss_after = 0.0;
    double energy = 0.0;
    bool ridge = false;
    std::vector<std::vector<std::size_t>> positions;
};

// Least squares through the normal equations, with a 1e-8 * trace ridge when
// they are singular or badly conditioned.
Eigen::MatrixXd solve_normal_equations(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, bool& ridge) {
    const Eigen::MatrixXd gram = a.transpose() * a;
    const Eigen::MatrixXd rhs = a.transpose() * b;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() == Eigen::Success && llt.rcond() > 1e-12) {
        ridge = false;
        return llt.solve(rhs);
    }
    ridge = true;
    const double lambda = std::max(1e-8 * gram.trace(), 1e-300);
    Eigen::MatrixXd reg = gram;
    reg.diagonal().array() += lambda;
    return reg.ldlt().solve(rhs);
}

}  // namespace

LayerPruneResult prune_layer(const LayerSpec& layer, const Tensor& weights, const FeatureMaps& raw_inputs,
                             const PruneTarget& target, const PruneOptions& options, const FeatureMaps* dense_preact) {
    layer.validate();
    options.solver.validate();
    if (options.grain == Grain::Column && layer.kind == LayerKind::Conv && layer.out_group_size != 1)
        throw ValidationError(layer.name, "K_out", "column-grain pruning of a conv layer requires K_out = 1");

    const std::size_t I = layer.in_groups(), J = layer.out_groups();
    std::vector<std::size_t> budgets;
    if (target.ratio) {
        budgets.assign(J, budget_for_ratio(*target.ratio, I));
    } else {
        budgets = target.per_group;
        if (budgets.size() != J) throw ValidationError(layer.name, "r", "need one budget per output group");
        for (std::size_t r : budgets)
            if (r == 0 || r > I) throw ValidationError(layer.name, "r", "budget outside [1, I]");
    }

    const FeatureMaps inputs = layer_input_view(layer, raw_inputs);
    PartialSumBundle bundle = build_bundle(layer, weights, inputs);
    std::vector<std::size_t> order = identity_order(layer.in_fms);
    if (options.reorder) {
        order = reorder_inputs(compute_importance(bundle));
        regroup(bundle, order);
    }

    const std::size_t oh = layer.kind == LayerKind::FC ? 1 : layer.out_h();
    const std::size_t ow = layer.kind == LayerKind::FC ? 1 : layer.out_w();
    if (oh * ow != bundle.spatial) throw GeometryError("layer '" + layer.name + "': input size differs from the network description");
    if (dense_preact && (dense_preact->n != inputs.n || dense_preact->spatial() != bundle.spatial ||
                         dense_preact->c != layer.out_fms))
        throw GeometryError("layer '" + layer.name + "': regression target shape mismatch");

    const std::size_t lgd_count = std::min(options.lgd_samples, bundle.spatial);
    const std::size_t lr_count = std::min(options.regression_samples, bundle.spatial);
    const std::size_t K = layer.out_group_size, P = layer.in_fms, Q = layer.out_fms;
    const std::size_t taps = layer.kernel_h * layer.kernel_w;

    std::vector<GroupOutcome> outcomes(J);
    parallel_for(J, [&](std::size_t j) {
        GroupOutcome& out = outcomes[j];
        const SampledDesign design =
            sample_design(bundle, K, j, lgd_count, derive_seed(options.seed, layer.name + "/lgd-sample", j));
        SolverConfig config = options.solver;
        config.seed = derive_seed(options.seed, layer.name, j);
        const L0Solution solution = solve_l0_mask(design.x, design.y, budgets[j], config);
        out.mask = solution.mask;
        out.solver_loss = solution.loss;

        for (std::size_t pos = 0; pos < P; ++pos)
            if (out.mask[pos / layer.in_group_size]) out.survivors.push_back(order[pos]);

        out.positions = sample_positions(inputs.n, bundle.spatial, lr_count,
                                         derive_seed(options.seed, layer.name + "/regression", j));
        const auto rows = static_cast<Eigen::Index>(inputs.n * lr_count);
        const auto cols = static_cast<Eigen::Index>(taps * out.survivors.size());
        Eigen::MatrixXd lr_x = Eigen::MatrixXd::Zero(rows, cols);
        Eigen::MatrixXd lr_y(rows, static_cast<Eigen::Index>(K));
        Eigen::Index r = 0;
        for (std::size_t n = 0; n < inputs.n; ++n)
            for (std::size_t s : out.positions[n]) {
                const std::size_t y = s / ow, x = s % ow;
                for (std::size_t kh = 0; kh < layer.kernel_h; ++kh) {
                    const std::size_t py = y * layer.stride + kh;
                    if (py < layer.padding || py - layer.padding >= inputs.h) continue;
                    for (std::size_t kw = 0; kw < layer.kernel_w; ++kw) {
                        const std::size_t px = x * layer.stride + kw;
                        if (px < layer.padding || px - layer.padding >= inputs.w) continue;
                        const std::size_t tap = kh * layer.kernel_w + kw;
                        for (std::size_t c = 0; c < out.survivors.size(); ++c)
                            lr_x(r, static_cast<Eigen::Index>(tap * out.survivors.size() + c)) =
                                inputs.at(n, py - layer.padding, px - layer.padding, out.survivors[c]);
                    }
                }
                for (std::size_t k = 0; k < K; ++k) {
                    const std::size_t q = j * K + k;
                    lr_y(r, static_cast<Eigen::Index>(k)) =
                        dense_preact ? dense_preact->data[(n * bundle.spatial + s) * Q + q] : bundle.full_at(n, s, q);
                }
                ++r;
            }

        Eigen::MatrixXd original(cols, static_cast<Eigen::Index>(K));
        for (std::size_t tap = 0; tap < taps; ++tap)
            for (std::size_t c = 0; c < out.survivors.size(); ++c)
                for (std::size_t k = 0; k < K; ++k)
                    original(static_cast<Eigen::Index>(tap * out.survivors.size() + c), static_cast<Eigen::Index>(k)) =
                        weights.data[(tap * P + out.survivors[c]) * Q + j * K + k];

        out.repaired = solve_normal_equations(lr_x, lr_y, out.ridge);
        if (!out.repaired.allFinite())
            throw NumericalError("layer '" + layer.name + "': weight repair produced non-finite values");
        out.loss_before = (lr_y - lr_x * original).squaredNorm();
        out.loss_after = (lr_y - lr_x * out.repaired).squaredNorm();
        out.energy = lr_y.squaredNorm();
    });

    LayerPruneResult result;
    result.state.grain = options.grain;
    result.state.order = order;
    result.state.masks = GroupMask(I, J, false);
    result.budgets = budgets;
    result.repaired_weights = Tensor::zeros(weights.shape, Dtype::Float64);
    result.regression_positions.resize(J);
    for (std::size_t j = 0; j < J; ++j) {
        GroupOutcome& out = outcomes[j];
        for (std::size_t i = 0; i < I; ++i) result.state.masks.set(i, j, out.mask[i] != 0);
        result.solver_loss.push_back(out.solver_loss);
        result.loss_before += out.loss_before;
        result.loss_after += out.loss_after;
        result.target_energy += out.energy;
        result.ridge_fallback = result.ridge_fallback || out.ridge;
        for (std::size_t tap = 0; tap < taps; ++tap)
            for (std::size_t c = 0; c < out.survivors.size(); ++c)
                for (std::size_t k = 0; k < K; ++k)
                    result.repaired_weights.data[(tap * P + out.survivors[c]) * Q + j * K + k] =
                        out.repaired(static_cast<Eigen::Index>(tap * out.survivors.size() + c),
                                     static_cast<Eigen::Index>(k));
        result.regression_positions[j] = std::move(out.positions);
    }
    return result;
}

}  // namespace xbprune
