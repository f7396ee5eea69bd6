#include "avsa/toeplitz.h"

#include <cmath>

#include "avsa/error.h"

namespace avsa {

std::optional<std::vector<double>> levinson_solve(std::span<const double> col,
                                                  std::span<const double> rhs) {
  const size_t n = col.size();
  if (rhs.size() != n) throw LengthError("levinson_solve: rhs length mismatch");
  if (n == 0) return std::vector<double>{};
  const double r0 = col[0];
  if (!(r0 > 0.0)) return std::nullopt;

  // Work on the unit-diagonal matrix T / r0.
  std::vector<double> r(n);
  for (size_t i = 0; i < n; ++i) r[i] = col[i] / r0;
  std::vector<double> b(n);
  for (size_t i = 0; i < n; ++i) b[i] = rhs[i] / r0;

  std::vector<double> x(n, 0.0), y(n, 0.0), tmp(n);
  x[0] = b[0];
  if (n == 1) return x;
  y[0] = -r[1];
  double alpha = -r[1];
  double beta = 1.0;
  constexpr double kBreakdown = 1e-13;

  for (size_t k = 1; k < n; ++k) {
    beta *= (1.0 - alpha * alpha);
    if (!(beta > kBreakdown)) return std::nullopt;
    double acc = 0.0;
    for (size_t i = 0; i < k; ++i) acc += r[i + 1] * x[k - 1 - i];
    const double mu = (b[k] - acc) / beta;
    for (size_t i = 0; i < k; ++i) x[i] += mu * y[k - 1 - i];
    x[k] = mu;
    if (k + 1 < n) {
      acc = 0.0;
      for (size_t i = 0; i < k; ++i) acc += r[i + 1] * y[k - 1 - i];
      alpha = (-r[k + 1] - acc) / beta;
      for (size_t i = 0; i < k; ++i) tmp[i] = y[i] + alpha * y[k - 1 - i];
      for (size_t i = 0; i < k; ++i) y[i] = tmp[i];
      y[k] = alpha;
    }
  }
  for (double v : x)
    if (!std::isfinite(v)) return std::nullopt;
  return x;
}

Eigen::MatrixXd toeplitz_matrix(std::span<const double> col) {
  const auto n = static_cast<Eigen::Index>(col.size());
  Eigen::MatrixXd t(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) t(i, j) = col[static_cast<size_t>(std::abs(i - j))];
  return t;
}

std::vector<double> dense_spd_solve(const Eigen::MatrixXd& a, std::span<const double> rhs,
                                    bool* fallback) {
  if (static_cast<size_t>(a.rows()) != rhs.size() || a.rows() != a.cols())
    throw ShapeError("dense_spd_solve: system dimensions mismatch");
  Eigen::Map<const Eigen::VectorXd> b(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
  Eigen::VectorXd x;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  bool used_fallback = false;
  if (llt.info() == Eigen::Success) {
    x = llt.solve(b);
  } else {
    used_fallback = true;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success) throw NumericError("dense_spd_solve: factorization failed");
    x = ldlt.solve(b);
  }
  if (!x.allFinite()) throw NumericError("dense_spd_solve: non-finite solution");
  if (fallback) *fallback = used_fallback;
  return {x.data(), x.data() + x.size()};
}

ToeplitzSolve toeplitz_solve(std::span<const double> col, std::span<const double> rhs) {
  if (auto x = levinson_solve(col, rhs)) return {std::move(*x), false};
  return {dense_spd_solve(toeplitz_matrix(col), rhs), true};
}

}  // namespace avsa
