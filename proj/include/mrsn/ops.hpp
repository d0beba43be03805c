#pragma once

#include <cstddef>
#include <vector>

#include "mrsn/autograd.hpp"
#include "mrsn/tensor.hpp"

/// Differentiable primitives. Every op validates shapes, computes its value
/// eagerly and records a backward closure when gradients are requested.
namespace mrsn::ops {

inline constexpr double kLayerNormEps = 1e-5;

// GELU tanh approximation constants.
inline constexpr double kGeluSqrt2OverPi = 0.7978845608;
inline constexpr double kGeluCubic = 0.044715;

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// a @ b^T without materializing the transpose.
template <typename T> Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
/// x[n x m] + bias[m] broadcast over rows.
template <typename T> Var<T> add_bias(const Var<T>& x, const Var<T>& bias);
template <typename T> Var<T> scale(const Var<T>& x, T factor);
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& shift,
                  double eps = kLayerNormEps);
template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T> Var<T> softmax_rows(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);

template <typename T> Var<T> transpose(const Var<T>& x);
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t count);
template <typename T> Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t count);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
/// Mean of rows [begin, begin+count) -> 1 x m.
template <typename T> Var<T> mean_rows(const Var<T>& x, std::size_t begin, std::size_t count);
/// Mean over the leading axis: [T x ...] -> [...].
template <typename T> Var<T> mean_leading(const Var<T>& x);
template <typename T> Var<T> sum_all(const Var<T>& x);
/// sum(x * w) for a constant weight array of the same shape.
template <typename T> Var<T> weighted_sum(const Var<T>& x, const BasicArray<T>& w);

/// Mean sigmoid binary cross-entropy over all elements, log-sum-exp stable.
/// Targets must be 0 or 1.
template <typename T> Var<T> sigmoid_bce(const Var<T>& logits, const BasicArray<T>& targets);

/// Same-size stride-1 convolution. x: Cin x H x W, weight: Cout x Cin x K x K.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Adaptive average pooling C x w x h -> C x S x S; cell (i,j) averages
/// [floor(i*w/S), ceil((i+1)*w/S)) x [floor(j*h/S), ceil((j+1)*h/S)).
template <typename T> Var<T> adaptive_avg_pool(const Var<T>& x, std::size_t side);

/// Non-overlapping p x p patches of a C x S x S map in row-major grid order,
/// each flattened channel-major then row-major -> L x (C*p*p).
template <typename T> Var<T> patchify(const Var<T>& x, std::size_t patch);

struct NormalizedBox {
  double x1, y1, x2, y2;
};

/// RoIAlign of a normalized box over a C x H x W map (x along W, y along H)
/// -> C x pooled x pooled, sampling x sampling bilinear points per bin.
template <typename T>
Var<T> roi_align(const Var<T>& feature, const NormalizedBox& box, std::size_t pooled = 7,
                 std::size_t sampling = 2);

/// Scalar GELU used by the op and by tests.
double gelu_value(double x);

}  // namespace mrsn::ops
