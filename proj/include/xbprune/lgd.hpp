#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace xbprune {

struct SolverConfig {
    // Gradient step size. When unset, 1 / lambda_max(X^T X) is used.
    std::optional<double> learning_rate;
    std::size_t iterations = 50;
    std::size_t relaxation = 1;  // r0
    std::uint64_t seed = 0;

    void validate() const;
};

// An L0-constrained coefficient vector: `support` marks exactly `budget`
// selected entries, `values` holds their coefficients (zero elsewhere). The
// support is tracked explicitly because a selected coefficient may be zero.
struct SparseCoefficients {
    std::vector<std::uint8_t> support;
    Eigen::VectorXd values;

    std::size_t nnz() const noexcept;
};

// Relaxed probabilistic projection onto the L0 ball of radius `budget`.
// Candidates are the budget + relaxation largest |beta| (ties: lower index
// first). Rounds then draw u ~ U[0,1) per remaining candidate in ascending
// index order and admit it when |beta_i| / sum(|beta| of remaining) > u,
// stopping as soon as `budget` entries are admitted. Selected entries keep
// their signed values. relaxation is clamped to I - budget.
SparseCoefficients project_l0(const Eigen::VectorXd& beta, std::size_t budget, std::size_t relaxation,
                              std::mt19937_64& rng);

// beta = beta_l0 - eta * (X^T X beta_l0 - X^T y). Throws NumericalError on a
// non-finite result.
Eigen::VectorXd gradient_step(const Eigen::VectorXd& beta_l0, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                              double eta);
Eigen::VectorXd gradient_step_gram(const Eigen::VectorXd& beta_l0, const Eigen::MatrixXd& gram,
                                   const Eigen::VectorXd& xty, double eta);

// Least-squares scale alpha of z = X * beta_l0 against y; 1 when z^T z is
// below 1e-12 * |y|^2.
double fit_scale(const Eigen::VectorXd& beta_l0, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

// Scales coeffs.values by fit_scale in place; returns alpha. All-zero values
// are left untouched (alpha reported as 1).
double rescale_to_fit(SparseCoefficients& coeffs, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

struct L0Solution {
    std::vector<std::uint8_t> mask;    // binary, exactly `budget` ones
    Eigen::VectorXd coefficients;      // the iterate that produced `mask`, alpha-scaled
    double loss = 0.0;                 // masked_loss(mask, X, y)
    double learning_rate = 0.0;
    std::vector<double> best_loss;     // best loss seen after each iteration
};

// L0-constrained gradient descent. Starts from the projection of a standard
// normal draw, then runs exactly config.iterations rounds of
// gradient_step -> project_l0 -> rescale_to_fit. Each iterate's support is
// scored as a binary mask with its optimal scale; the best one is returned.
L0Solution solve_l0_mask(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::size_t budget,
                         const SolverConfig& config);

// Loss of a binary support with its optimal scale.
double masked_loss(const std::vector<std::uint8_t>& mask, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

}  // namespace xbprune
