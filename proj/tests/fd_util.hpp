#pragma once

#include <functional>

#include "pft/loss.hpp"

namespace pft::testutil {

// Central finite differences of a scalar function over a matrix argument.
// Independent of any analytic gradient path.
inline Mat finite_diff(const std::function<double(const Mat&)>& f, Mat x,
                       double h = 1e-3) {
  Mat g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      double orig = x(i, j);
      x(i, j) = orig + h;
      double up = f(x);
      x(i, j) = orig - h;
      double down = f(x);
      x(i, j) = orig;
      g(i, j) = (up - down) / (2 * h);
    }
  return g;
}

// Max over entries of |a-n| / (abs_tol + rel_tol*max(|a|,|n|)); a value <= 1
// means every entry is within rel_tol relative error (abs_tol near zero).
inline double max_scaled_error(const Mat& analytic, const Mat& numeric,
                               double rel_tol = 1e-4, double abs_tol = 1e-6) {
  double worst = 0;
  for (Eigen::Index i = 0; i < analytic.rows(); ++i)
    for (Eigen::Index j = 0; j < analytic.cols(); ++j) {
      double a = analytic(i, j), n = numeric(i, j);
      double scale = abs_tol + rel_tol * std::max(std::abs(a), std::abs(n));
      worst = std::max(worst, std::abs(a - n) / scale);
    }
  return worst;
}

}  // namespace pft::testutil
