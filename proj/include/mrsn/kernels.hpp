#pragma once

#include <cstddef>

namespace mrsn::kernels {

enum class Backend { Serial, Parallel };

/// Process-wide kernel backend. Defaults to Parallel; both backends produce
/// bit-identical results because every output element is reduced in the
/// same order.
void set_backend(Backend backend);
Backend backend();

/// Scoped backend override (tests and benchmarks).
class BackendGuard {
 public:
  explicit BackendGuard(Backend b) : saved_(backend()) { set_backend(b); }
  ~BackendGuard() { set_backend(saved_); }
  BackendGuard(const BackendGuard&) = delete;
  BackendGuard& operator=(const BackendGuard&) = delete;

 private:
  Backend saved_;
};

int max_threads();

// C[n x m] (+)= op(A) * op(B), op(A) is n x k, op(B) is k x m.
// A is stored n x k (or k x n when trans_a), B is stored k x m (or m x k when trans_b).
template <typename T>
struct GemmArgs {
  const T* a;
  const T* b;
  T* c;
  std::size_t n, k, m;
  bool trans_a = false;
  bool trans_b = false;
  bool accumulate = false;
};

template <typename T>
struct RoiAlignArgs {
  const T* feature;  // C x H x W
  std::size_t channels, height, width;
  // Box in feature-map pixel coordinates (x along width, y along height).
  double x1, y1, x2, y2;
  std::size_t pooled;         // output side
  std::size_t sampling;       // samples per bin side
  T* out;                     // C x pooled x pooled
};

namespace serial {
template <typename T> void gemm(const GemmArgs<T>& args);
template <typename T> void softmax_rows(const T* in, T* out, std::size_t n, std::size_t m);
template <typename T>
void conv2d(const T* in, std::size_t cin, std::size_t h, std::size_t w, const T* weight,
            const T* bias, std::size_t cout, std::size_t ksize, T* out);
template <typename T> void roi_align(const RoiAlignArgs<T>& args);
}  // namespace serial

namespace parallel {
template <typename T> void gemm(const GemmArgs<T>& args);
template <typename T> void softmax_rows(const T* in, T* out, std::size_t n, std::size_t m);
template <typename T>
void conv2d(const T* in, std::size_t cin, std::size_t h, std::size_t w, const T* weight,
            const T* bias, std::size_t cout, std::size_t ksize, T* out);
template <typename T> void roi_align(const RoiAlignArgs<T>& args);
}  // namespace parallel

// Dispatch on backend().
template <typename T> void gemm(const GemmArgs<T>& args);
template <typename T> void softmax_rows(const T* in, T* out, std::size_t n, std::size_t m);
/// Same-size ("padding = ksize/2") stride-1 convolution.
template <typename T>
void conv2d(const T* in, std::size_t cin, std::size_t h, std::size_t w, const T* weight,
            const T* bias, std::size_t cout, std::size_t ksize, T* out);
template <typename T> void roi_align(const RoiAlignArgs<T>& args);

/// Bilinear sample at continuous (y, x) with border clamping; zero outside
/// [-1, size]. Writes the four corner indices and weights for backward use.
template <typename T>
struct BilinearTap {
  std::size_t idx[4];
  T weight[4];
  bool valid;
};
template <typename T>
BilinearTap<T> bilinear_tap(double y, double x, std::size_t height, std::size_t width);

}  // namespace mrsn::kernels
