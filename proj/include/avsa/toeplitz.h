#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace avsa {

// Solves T x = rhs for the symmetric Toeplitz matrix whose first column is
// `col`, by Levinson recursion in O(n^2). Returns nullopt when the recursion
// breaks down (T not numerically positive definite).
std::optional<std::vector<double>> levinson_solve(std::span<const double> col,
                                                  std::span<const double> rhs);

Eigen::MatrixXd toeplitz_matrix(std::span<const double> col);

// Dense symmetric positive (semi)definite solve. Uses Cholesky and falls
// back to a pivoted LDL^T factorization; `fallback` reports the latter.
std::vector<double> dense_spd_solve(const Eigen::MatrixXd& a, std::span<const double> rhs,
                                    bool* fallback = nullptr);

struct ToeplitzSolve {
  std::vector<double> x;
  bool used_dense = false;
};

// Levinson first, dense solve when the recursion is ill-conditioned.
ToeplitzSolve toeplitz_solve(std::span<const double> col, std::span<const double> rhs);

}  // namespace avsa
