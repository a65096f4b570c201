#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "styleadv/rng.hpp"
#include "styleadv/tensor.hpp"

namespace styleadv::testing {

template <class T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.span()) v = static_cast<T>(lo + (hi - lo) * uniform01(rng));
  return t;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (Index i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

template <class T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  double s = 0.0;
  for (Index i = 0; i < a.numel(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

/// Central-difference directional derivative of f at x along a random direction.
inline double directional_derivative(const std::function<double(const Tensor<double>&)>& f,
                                     const Tensor<double>& x, const Tensor<double>& dir,
                                     double h = 1e-6) {
  Tensor<double> xp = x, xm = x;
  for (Index i = 0; i < x.numel(); ++i) {
    xp[i] += h * dir[i];
    xm[i] -= h * dir[i];
  }
  return (f(xp) - f(xm)) / (2 * h);
}

}  // namespace styleadv::testing
