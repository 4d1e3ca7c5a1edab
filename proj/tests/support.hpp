#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "highdan/nn/parameters.hpp"
#include "highdan/rng.hpp"
#include "highdan/tensor.hpp"

namespace highdan::testing {

template <typename Scalar = double>
Tensor<Scalar> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(uniform(rng, lo, hi));
  return t;
}

/// Sum of w ⊙ y; its gradient with respect to y is w.
inline double weighted_sum(const Tensor<double>& y, const Tensor<double>& w) {
  return (y.array() * w.array()).sum();
}

/// Indices to probe: all of them when few, otherwise an even spread.
inline std::vector<Index> probe_indices(Index count, Index max_checks) {
  std::vector<Index> idx;
  if (count <= max_checks) {
    for (Index i = 0; i < count; ++i) idx.push_back(i);
  } else {
    for (Index k = 0; k < max_checks; ++k) idx.push_back(k * (count - 1) / (max_checks - 1));
  }
  return idx;
}

/// Norm-wise relative error ‖a − n‖ / max(‖a‖, ‖n‖) between the analytic
/// gradient and central differences of `loss`, probing `values` in place.
inline double gradient_error(double* values, const double* analytic, Index count, const std::function<double()>& loss,
                             double step, Index max_checks = 48) {
  double diff = 0, na = 0, nn = 0;
  for (Index i : probe_indices(count, max_checks)) {
    const double saved = values[i];
    values[i] = saved + step;
    const double up = loss();
    values[i] = saved - step;
    const double down = loss();
    values[i] = saved;
    const double numeric = (up - down) / (2 * step);
    diff += (analytic[i] - numeric) * (analytic[i] - numeric);
    na += analytic[i] * analytic[i];
    nn += numeric * numeric;
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return std::sqrt(diff) / scale;
}

inline double gradient_error(Tensor<double>& values, const Tensor<double>& analytic,
                             const std::function<double()>& loss, double step, Index max_checks = 48) {
  return gradient_error(values.data(), analytic.data(), values.size(), loss, step, max_checks);
}

inline double gradient_error(nn::Param<double>& p, const std::function<double()>& loss, double step,
                             Index max_checks = 48) {
  const Tensor<double> analytic = p.grad;
  return gradient_error(p.value, analytic, loss, step, max_checks);
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  return (a.array() - b.array()).abs().maxCoeff();
}

}  // namespace highdan::testing
