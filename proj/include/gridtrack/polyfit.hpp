#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace gridtrack {

// Evaluates a polynomial with ascending-degree coefficients (Horner).
inline double poly_eval(std::span<const double> coeffs, double x) {
  double acc = 0.0;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * x + *it;
  return acc;
}

inline double poly_derivative(std::span<const double> coeffs, double x) {
  double acc = 0.0;
  for (std::size_t k = coeffs.size(); k-- > 1;) acc = acc * x + static_cast<double>(k) * coeffs[k];
  return acc;
}

struct PolyFit {
  std::vector<double> coeffs;  // ascending degree
  double residual_rms{0.0};
};

// Least-squares polynomial fit of y on x.
//
// The design matrix is built in t = (x - mid) / half_range, solved by Householder QR, and the
// coefficients are expanded back to powers of x. Raw Vandermonde matrices over pixel rows
// (x ~ 1e2, degree 3) have condition numbers around 1e9; the normalized one stays below 10.
inline PolyFit fit_polynomial(std::span<const double> x, std::span<const double> y, int degree) {
  if (degree < 0) throw CalibrationError("polynomial degree must be non-negative");
  if (x.size() != y.size()) throw CalibrationError("sample arrays differ in length");
  const auto n = x.size();
  const auto terms = static_cast<std::size_t>(degree) + 1;
  if (n < terms) {
    throw CalibrationError("need at least " + std::to_string(terms) + " samples for degree " +
                           std::to_string(degree) + ", got " + std::to_string(n));
  }
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw CalibrationError("duplicate sample rows");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw CalibrationError("non-finite sample");
  }

  const double mid = 0.5 * (sorted.front() + sorted.back());
  double half = 0.5 * (sorted.back() - sorted.front());
  if (half == 0.0) half = 1.0;

  Eigen::MatrixXd design(n, terms);
  Eigen::VectorXd rhs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = (x[i] - mid) / half;
    double p = 1.0;
    for (std::size_t j = 0; j < terms; ++j) {
      design(i, j) = p;
      p *= t;
    }
    rhs(i) = y[i];
  }
  const Eigen::VectorXd b = design.householderQr().solve(rhs);

  // t = alpha * x + beta; expand sum_j b_j t^j into powers of x.
  const double alpha = 1.0 / half;
  const double beta = -mid / half;
  PolyFit fit;
  fit.coeffs.assign(terms, 0.0);
  for (std::size_t j = 0; j < terms; ++j) {
    double binom = 1.0;  // C(j, k)
    for (std::size_t k = 0; k <= j; ++k) {
      fit.coeffs[k] += b(j) * binom * std::pow(alpha, k) * std::pow(beta, j - k);
      binom = binom * static_cast<double>(j - k) / static_cast<double>(k + 1);
    }
  }

  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = poly_eval(fit.coeffs, x[i]) - y[i];
    sq += r * r;
  }
  fit.residual_rms = std::sqrt(sq / static_cast<double>(n));
  return fit;
}

}  // namespace gridtrack
