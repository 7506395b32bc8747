#include "xbprune/lgd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xbprune/error.hpp"

namespace xbprune {

void SolverConfig::validate() const {
    if (learning_rate && !(*learning_rate > 0.0 && std::isfinite(*learning_rate)))
        throw ValidationError("", "learning_rate", "must be positive and finite");
    if (iterations == 0) throw ValidationError("", "iterations", "must be at least 1");
}

std::size_t SparseCoefficients::nnz() const noexcept {
    return static_cast<std::size_t>(std::count(support.begin(), support.end(), std::uint8_t{1}));
}

SparseCoefficients project_l0(const Eigen::VectorXd& beta, std::size_t budget, std::size_t relaxation,
                              std::mt19937_64& rng) {
    const auto dim = static_cast<std::size_t>(beta.size());
    if (budget == 0 || budget > dim)
        throw ValidationError("", "r", "L0 budget " + std::to_string(budget) + " outside [1, " + std::to_string(dim) + "]");
    relaxation = std::min(relaxation, dim - budget);
    const std::size_t pool = budget + relaxation;

    std::vector<double> magnitude(dim);
    for (std::size_t i = 0; i < dim; ++i) magnitude[i] = std::abs(beta(static_cast<Eigen::Index>(i)));

    std::vector<std::size_t> ranked(dim);
    std::iota(ranked.begin(), ranked.end(), std::size_t{0});
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](std::size_t a, std::size_t b) { return magnitude[a] > magnitude[b]; });

    // Remaining candidates and their sampling weights, indexed by coefficient.
    std::vector<std::uint8_t> candidate(dim, 0);
    for (std::size_t k = 0; k < pool; ++k) candidate[ranked[k]] = 1;

    SparseCoefficients out;
    out.support.assign(dim, 0);
    out.values = Eigen::VectorXd::Zero(beta.size());

    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::size_t selected = 0;
    while (selected < budget) {
        double mass = 0.0;
        std::size_t remaining = 0;
        for (std::size_t i = 0; i < dim; ++i)
            if (candidate[i]) {
                mass += magnitude[i];
                ++remaining;
            }
        // Zero mass (e.g. an all-zero beta) falls back to uniform weights.
        const bool uniform_weights = !(mass > 0.0);
        for (std::size_t i = 0; i < dim && selected < budget; ++i) {
            if (!candidate[i]) continue;
            const double prob = uniform_weights ? 1.0 / static_cast<double>(remaining) : magnitude[i] / mass;
            if (prob > uniform(rng)) {
                out.support[i] = 1;
                out.values(static_cast<Eigen::Index>(i)) = beta(static_cast<Eigen::Index>(i));
                candidate[i] = 0;
                ++selected;
            }
        }
    }
    return out;
}

Eigen::VectorXd gradient_step_gram(const Eigen::VectorXd& beta_l0, const Eigen::MatrixXd& gram,
                                   const Eigen::VectorXd& xty, double eta) {
    Eigen::VectorXd beta = beta_l0 - eta * (gram * beta_l0 - xty);
    if (!beta.allFinite())
        throw NumericalError("gradient step diverged (non-finite coefficients); use a smaller learning rate");
    return beta;
}

Eigen::VectorXd gradient_step(const Eigen::VectorXd& beta_l0, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                              double eta) {
    if (x.cols() != beta_l0.size() || x.rows() != y.size()) throw GeometryError("gradient_step: shape mismatch");
    return gradient_step_gram(beta_l0, x.transpose() * x, x.transpose() * y, eta);
}

double fit_scale(const Eigen::VectorXd& beta_l0, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    const Eigen::VectorXd z = x * beta_l0;
    const double zz = z.squaredNorm();
    if (zz < 1e-12 * y.squaredNorm() || zz == 0.0) return 1.0;
    return z.dot(y) / zz;
}

double rescale_to_fit(SparseCoefficients& coeffs, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (coeffs.values.isZero(0.0)) return 1.0;
    const double alpha = fit_scale(coeffs.values, x, y);
    coeffs.values *= alpha;
    return alpha;
}

double masked_loss(const std::vector<std::uint8_t>& mask, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    Eigen::VectorXd b(x.cols());
    for (Eigen::Index i = 0; i < x.cols(); ++i) b(i) = mask[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    const double alpha = fit_scale(b, x, y);
    return (y - alpha * (x * b)).squaredNorm();
}

L0Solution solve_l0_mask(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::size_t budget,
                         const SolverConfig& config) {
    config.validate();
    if (x.rows() != y.size()) throw GeometryError("solve_l0_mask: X and y row counts differ");
    const auto dim = static_cast<std::size_t>(x.cols());
    if (budget == 0 || budget > dim)
        throw ValidationError("", "r", "L0 budget " + std::to_string(budget) + " outside [1, " + std::to_string(dim) + "]");

    const Eigen::MatrixXd gram = x.transpose() * x;
    const Eigen::VectorXd xty = x.transpose() * y;

    double eta = 0.0;
    if (config.learning_rate) {
        eta = *config.learning_rate;
    } else {
        const double top = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram, Eigen::EigenvaluesOnly)
                               .eigenvalues()
                               .maxCoeff();
        eta = top > 0.0 ? 1.0 / top : 1.0;
    }

    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd init(x.cols());
    for (Eigen::Index i = 0; i < init.size(); ++i) init(i) = normal(rng);
    SparseCoefficients current = project_l0(init, budget, config.relaxation, rng);

    L0Solution best;
    best.learning_rate = eta;
    best.loss = std::numeric_limits<double>::infinity();
    best.best_loss.reserve(config.iterations);
    for (std::size_t it = 0; it < config.iterations; ++it) {
        const Eigen::VectorXd beta = gradient_step_gram(current.values, gram, xty, eta);
        current = project_l0(beta, budget, config.relaxation, rng);
        rescale_to_fit(current, x, y);
        const double loss = masked_loss(current.support, x, y);
        if (loss < best.loss) {
            best.loss = loss;
            best.mask = current.support;
            best.coefficients = current.values;
        }
        best.best_loss.push_back(best.loss);
    }
    return best;
}

}  // namespace xbprune
