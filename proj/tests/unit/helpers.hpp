#pragma once

#include <cmath>
#include <vector>

#include "doctest.h"
#include "mrsn/params.hpp"
#include "mrsn/tensor.hpp"

namespace testing {

template <typename T = float>
mrsn::BasicArray<T> random_array(mrsn::Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  mrsn::Rng rng(seed);
  mrsn::BasicArray<T> out(std::move(shape));
  for (auto& v : out.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return out;
}

template <typename T>
double max_abs_diff(const mrsn::BasicArray<T>& a, const mrsn::BasicArray<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

template <typename T>
mrsn::BasicArray<T> row_of(const mrsn::BasicArray<T>& a, std::size_t r) {
  const std::size_t m = a.cols();
  return mrsn::BasicArray<T>({m}, std::vector<T>(a.ptr() + r * m, a.ptr() + (r + 1) * m));
}

/// Rows of `a` reordered so row i of the result is row perm[i] of `a`.
template <typename T>
mrsn::BasicArray<T> permute_rows(const mrsn::BasicArray<T>& a, const std::vector<std::size_t>& perm) {
  const std::size_t m = a.cols();
  std::vector<T> out;
  for (std::size_t p : perm) out.insert(out.end(), a.ptr() + p * m, a.ptr() + (p + 1) * m);
  return mrsn::BasicArray<T>(a.shape(), std::move(out));
}

template <typename T>
void zero_var(const mrsn::Var<T>& v) {
  for (auto& x : const_cast<mrsn::Var<T>&>(v).mutable_value().data()) x = T(0);
}

}  // namespace testing
