#include "xbprune/synthetic.hpp"

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "xbprune/conv.hpp"
#include "xbprune/npy.hpp"
#include "xbprune/util.hpp"

namespace xbprune {

namespace {

constexpr std::size_t kSide = 8;
constexpr std::size_t kChannels = 3;

LayerSpec conv_layer(const std::string& name, std::size_t p, std::size_t q, std::size_t k_in, std::size_t pool) {
    LayerSpec layer;
    layer.name = name;
    layer.kind = LayerKind::Conv;
    layer.in_fms = p;
    layer.out_fms = q;
    layer.kernel_h = layer.kernel_w = 3;
    layer.padding = 1;
    layer.in_group_size = k_in;
    layer.out_group_size = 1;
    layer.grain = Grain::Column;
    layer.pool = pool;
    layer.non_compute_overhead = 2;
    layer.weights_path = name + ".npy";
    return layer;
}

Tensor random_weights(const LayerSpec& layer, std::mt19937_64& rng) {
    Tensor w = Tensor::zeros({layer.kernel_h, layer.kernel_w, layer.in_fms, layer.out_fms});
    const double fan_in = static_cast<double>(layer.kernel_h * layer.kernel_w * layer.in_fms);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    for (double& v : w.data) v = normal(rng);
    return w;
}

LabeledSet draw(const std::vector<std::vector<double>>& prototypes, std::size_t count, double noise,
                std::mt19937_64& rng) {
    LabeledSet set;
    set.x = FeatureMaps(count, kSide, kSide, kChannels);
    set.y.resize(count);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t per = kSide * kSide * kChannels;
    for (std::size_t n = 0; n < count; ++n) {
        const std::size_t cls = n % prototypes.size();
        set.y[n] = static_cast<double>(cls);
        for (std::size_t k = 0; k < per; ++k) set.x.data[n * per + k] = prototypes[cls][k] + noise * normal(rng);
    }
    return set;
}

}  // namespace

SyntheticTask make_synthetic_task(const SyntheticOptions& options) {
    std::mt19937_64 rng(derive_seed(options.seed, "synthetic", 0));
    std::normal_distribution<double> normal(0.0, 1.0);

    SyntheticTask task;
    NetworkSpec& spec = task.model.spec;
    spec.crossbar = {72, 32};
    spec.input_h = spec.input_w = kSide;
    spec.input_c = kChannels;
    spec.layers.push_back(conv_layer("conv1", kChannels, 16, 3, 1));
    spec.layers.push_back(conv_layer("conv2", 16, 16, 2, 1));
    spec.layers.push_back(conv_layer("conv3", 16, 16, 2, 2));
    LayerSpec fc;
    fc.name = "fc";
    fc.kind = LayerKind::FC;
    fc.in_fms = 16 * (kSide / 2) * (kSide / 2);
    fc.out_fms = options.classes;
    fc.in_group_size = 32;
    fc.out_group_size = options.classes;
    fc.grain = Grain::Column;
    fc.relu = false;
    fc.non_compute_overhead = 1;
    fc.weights_path = "fc.npy";
    spec.layers.push_back(fc);
    spec.resolve_and_validate();

    for (std::size_t l = 0; l + 1 < spec.layers.size(); ++l) task.model.weights.push_back(random_weights(spec.layers[l], rng));
    task.model.weights.push_back(Tensor::zeros({1, 1, fc.in_fms, fc.out_fms}));
    task.model.pruning.assign(spec.layers.size(), std::nullopt);

    std::vector<std::vector<double>> prototypes(options.classes, std::vector<double>(kSide * kSide * kChannels));
    for (auto& proto : prototypes)
        for (double& v : proto) v = normal(rng);
    task.train = draw(prototypes, options.train, options.input_noise, rng);
    task.calibration = draw(prototypes, options.calibration, options.input_noise, rng);
    task.evaluation = draw(prototypes, options.evaluation, options.input_noise, rng);

    // Ridge readout on the features entering the FC layer.
    const std::size_t last = spec.layers.size() - 1;
    const FeatureMaps features = forward_trace(task.model, task.train.x).at(last);
    const auto rows = static_cast<Eigen::Index>(features.n);
    const auto cols = static_cast<Eigen::Index>(features.per_sample());
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> f(
        features.data.data(), rows, cols);
    Eigen::MatrixXd targets = Eigen::MatrixXd::Constant(rows, static_cast<Eigen::Index>(options.classes),
                                                        -1.0 / static_cast<double>(options.classes));
    for (Eigen::Index n = 0; n < rows; ++n) targets(n, static_cast<Eigen::Index>(task.train.y[static_cast<std::size_t>(n)])) += 1.0;
    Eigen::MatrixXd gram = f.transpose() * f;
    gram.diagonal().array() += 1e-2 * gram.trace() / static_cast<double>(cols);
    const Eigen::MatrixXd head = gram.ldlt().solve(f.transpose() * targets);
    Tensor& w = task.model.weights[last];
    for (Eigen::Index p = 0; p < cols; ++p)
        for (Eigen::Index q = 0; q < head.cols(); ++q)
            w.data[static_cast<std::size_t>(p) * options.classes + static_cast<std::size_t>(q)] = head(p, q);
    return task;
}

std::filesystem::path write_synthetic_task(const SyntheticTask& task, const std::filesystem::path& dir) {
    const auto net = save_model(task.model, dir, "net");
    auto labels = [](const std::vector<double>& y) {
        return Tensor{Dtype::Float64, {y.size()}, y};
    };
    save_npz({{"x", task.evaluation.x.to_tensor(Dtype::Float32)}, {"y", labels(task.evaluation.y)}}, dir / "eval.npz");
    save_npz({{"x", task.calibration.x.to_tensor(Dtype::Float32)}, {"y", labels(task.calibration.y)}},
             dir / "calib.npz");
    return net;
}

}  // namespace xbprune
