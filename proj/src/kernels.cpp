#include "mrsn/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mrsn::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::Parallel};

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kMinParallelWork = 1 << 15;

template <typename T>
inline T a_at(const GemmArgs<T>& g, std::size_t i, std::size_t p) {
  return g.trans_a ? g.a[p * g.n + i] : g.a[i * g.k + p];
}
template <typename T>
inline T b_at(const GemmArgs<T>& g, std::size_t p, std::size_t j) {
  return g.trans_b ? g.b[j * g.k + p] : g.b[p * g.m + j];
}

template <typename T>
void conv2d_out_channel(const T* in, std::size_t cin, std::size_t h, std::size_t w,
                        const T* weight, const T* bias, std::size_t ksize, std::size_t oc,
                        T* out) {
  const long pad = static_cast<long>(ksize / 2);
  T* dst = out + oc * h * w;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      T acc = 0;
      for (std::size_t ic = 0; ic < cin; ++ic) {
        const T* src = in + ic * h * w;
        const T* kern = weight + (oc * cin + ic) * ksize * ksize;
        for (std::size_t ky = 0; ky < ksize; ++ky) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - pad;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < ksize; ++kx) {
            const long sx = static_cast<long>(x) + static_cast<long>(kx) - pad;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            acc += kern[ky * ksize + kx] * src[sy * static_cast<long>(w) + sx];
          }
        }
      }
      dst[y * w + x] = acc + (bias ? bias[oc] : T(0));
    }
  }
}

template <typename T>
void softmax_row(const T* in, T* out, std::size_t m) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, in[j]);
  T sum = 0;
  for (std::size_t j = 0; j < m; ++j) {
    out[j] = std::exp(in[j] - mx);
    sum += out[j];
  }
  const T inv = T(1) / sum;
  for (std::size_t j = 0; j < m; ++j) out[j] *= inv;
}

template <typename T>
void roi_align_channel(const RoiAlignArgs<T>& g, std::size_t c) {
  const std::size_t P = g.pooled;
  const double bin_w = (g.x2 - g.x1) / static_cast<double>(P);
  const double bin_h = (g.y2 - g.y1) / static_cast<double>(P);
  const double count = static_cast<double>(g.sampling * g.sampling);
  const T* src = g.feature + c * g.height * g.width;
  T* dst = g.out + c * P * P;
  for (std::size_t ph = 0; ph < P; ++ph) {
    for (std::size_t pw = 0; pw < P; ++pw) {
      T acc = 0;
      for (std::size_t iy = 0; iy < g.sampling; ++iy) {
        // pixel centers sit at integer + 0.5 in continuous coordinates
        const double y = g.y1 + (static_cast<double>(ph) + (iy + 0.5) / g.sampling) * bin_h - 0.5;
        for (std::size_t ix = 0; ix < g.sampling; ++ix) {
          const double x =
              g.x1 + (static_cast<double>(pw) + (ix + 0.5) / g.sampling) * bin_w - 0.5;
          const auto tap = bilinear_tap<T>(y, x, g.height, g.width);
          if (!tap.valid) continue;
          for (int q = 0; q < 4; ++q) acc += tap.weight[q] * src[tap.idx[q]];
        }
      }
      dst[ph * P + pw] = acc / static_cast<T>(count);
    }
  }
}

}  // namespace

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <typename T>
BilinearTap<T> bilinear_tap(double y, double x, std::size_t height, std::size_t width) {
  BilinearTap<T> tap{};
  if (y < -1.0 || y > static_cast<double>(height) || x < -1.0 ||
      x > static_cast<double>(width)) {
    tap.valid = false;
    return tap;
  }
  tap.valid = true;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  auto y_low = static_cast<std::size_t>(y);
  auto x_low = static_cast<std::size_t>(x);
  std::size_t y_high, x_high;
  if (y_low >= height - 1) {
    y_high = y_low = height - 1;
    y = static_cast<double>(y_low);
  } else {
    y_high = y_low + 1;
  }
  if (x_low >= width - 1) {
    x_high = x_low = width - 1;
    x = static_cast<double>(x_low);
  } else {
    x_high = x_low + 1;
  }
  const double ly = y - static_cast<double>(y_low);
  const double lx = x - static_cast<double>(x_low);
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  tap.idx[0] = y_low * width + x_low;
  tap.idx[1] = y_low * width + x_high;
  tap.idx[2] = y_high * width + x_low;
  tap.idx[3] = y_high * width + x_high;
  tap.weight[0] = static_cast<T>(hy * hx);
  tap.weight[1] = static_cast<T>(hy * lx);
  tap.weight[2] = static_cast<T>(ly * hx);
  tap.weight[3] = static_cast<T>(ly * lx);
  return tap;
}

namespace serial {

// Reference: one dot product per output element, k ascending.
template <typename T>
void gemm(const GemmArgs<T>& g) {
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j = 0; j < g.m; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < g.k; ++p) acc += a_at(g, i, p) * b_at(g, p, j);
      T& dst = g.c[i * g.m + j];
      dst = g.accumulate ? dst + acc : acc;
    }
  }
}

template <typename T>
void softmax_rows(const T* in, T* out, std::size_t n, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) softmax_row(in + i * m, out + i * m, m);
}

template <typename T>
void conv2d(const T* in, std::size_t cin, std::size_t h, std::size_t w, const T* weight,
            const T* bias, std::size_t cout, std::size_t ksize, T* out) {
  for (std::size_t oc = 0; oc < cout; ++oc) {
    conv2d_out_channel(in, cin, h, w, weight, bias, ksize, oc, out);
  }
}

template <typename T>
void roi_align(const RoiAlignArgs<T>& args) {
  for (std::size_t c = 0; c < args.channels; ++c) roi_align_channel(args, c);
}

}  // namespace serial

namespace parallel {

// Row-parallel i-p-j order: each output row is owned by one thread and every
// element still accumulates p ascending from zero, matching serial::gemm.
template <typename T>
void gemm(const GemmArgs<T>& g) {
  const std::size_t work = g.n * g.k * g.m;
  const long rows = static_cast<long>(g.n);
#pragma omp parallel if (work > kMinParallelWork)
  {
    std::vector<T> acc(g.m);
#pragma omp for schedule(static)
    for (long ii = 0; ii < rows; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      std::fill(acc.begin(), acc.end(), T(0));
      for (std::size_t p = 0; p < g.k; ++p) {
        const T av = a_at(g, i, p);
        if (g.trans_b) {
          for (std::size_t j = 0; j < g.m; ++j) acc[j] += av * g.b[j * g.k + p];
        } else {
          const T* brow = g.b + p * g.m;
          for (std::size_t j = 0; j < g.m; ++j) acc[j] += av * brow[j];
        }
      }
      T* crow = g.c + i * g.m;
      if (g.accumulate) {
        for (std::size_t j = 0; j < g.m; ++j) crow[j] = crow[j] + acc[j];
      } else {
        for (std::size_t j = 0; j < g.m; ++j) crow[j] = acc[j];
      }
    }
  }
}

template <typename T>
void softmax_rows(const T* in, T* out, std::size_t n, std::size_t m) {
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * m > kMinParallelWork)
  for (long i = 0; i < rows; ++i) softmax_row(in + i * m, out + i * m, m);
}

template <typename T>
void conv2d(const T* in, std::size_t cin, std::size_t h, std::size_t w, const T* weight,
            const T* bias, std::size_t cout, std::size_t ksize, T* out) {
  const long channels = static_cast<long>(cout);
#pragma omp parallel for schedule(static) if (cout * cin * h * w * ksize * ksize > kMinParallelWork)
  for (long oc = 0; oc < channels; ++oc) {
    conv2d_out_channel(in, cin, h, w, weight, bias, ksize, static_cast<std::size_t>(oc), out);
  }
}

template <typename T>
void roi_align(const RoiAlignArgs<T>& args) {
  const long channels = static_cast<long>(args.channels);
  const std::size_t work = args.channels * args.pooled * args.pooled * args.sampling * args.sampling * 4;
#pragma omp parallel for schedule(static) if (work > kMinParallelWork)
  for (long c = 0; c < channels; ++c) roi_align_channel(args, static_cast<std::size_t>(c));
}

}  // namespace parallel

template <typename T>
void gemm(const GemmArgs<T>& args) {
  backend() == Backend::Serial ? serial::gemm(args) : parallel::gemm(args);
}
template <typename T>
void softmax_rows(const T* in, T* out, std::size_t n, std::size_t m) {
  backend() == Backend::Serial ? serial::softmax_rows(in, out, n, m)
                               : parallel::softmax_rows(in, out, n, m);
}
template <typename T>
void conv2d(const T* in, std::size_t cin, std::size_t h, std::size_t w, const T* weight,
            const T* bias, std::size_t cout, std::size_t ksize, T* out) {
  backend() == Backend::Serial ? serial::conv2d(in, cin, h, w, weight, bias, cout, ksize, out)
                               : parallel::conv2d(in, cin, h, w, weight, bias, cout, ksize, out);
}
template <typename T>
void roi_align(const RoiAlignArgs<T>& args) {
  backend() == Backend::Serial ? serial::roi_align(args) : parallel::roi_align(args);
}

#define MRSN_INSTANTIATE_KERNELS(T)                                                         \
  template BilinearTap<T> bilinear_tap<T>(double, double, std::size_t, std::size_t);      \
  template void serial::gemm<T>(const GemmArgs<T>&);                                      \
  template void parallel::gemm<T>(const GemmArgs<T>&);                                    \
  template void gemm<T>(const GemmArgs<T>&);                                              \
  template void serial::softmax_rows<T>(const T*, T*, std::size_t, std::size_t);          \
  template void parallel::softmax_rows<T>(const T*, T*, std::size_t, std::size_t);        \
  template void softmax_rows<T>(const T*, T*, std::size_t, std::size_t);                  \
  template void serial::conv2d<T>(const T*, std::size_t, std::size_t, std::size_t,        \
                                  const T*, const T*, std::size_t, std::size_t, T*);      \
  template void parallel::conv2d<T>(const T*, std::size_t, std::size_t, std::size_t,      \
                                    const T*, const T*, std::size_t, std::size_t, T*);    \
  template void conv2d<T>(const T*, std::size_t, std::size_t, std::size_t, const T*,      \
                          const T*, std::size_t, std::size_t, T*);                        \
  template void serial::roi_align<T>(const RoiAlignArgs<T>&);                             \
  template void parallel::roi_align<T>(const RoiAlignArgs<T>&);                           \
  template void roi_align<T>(const RoiAlignArgs<T>&);

MRSN_INSTANTIATE_KERNELS(float)
MRSN_INSTANTIATE_KERNELS(double)

}  // namespace mrsn::kernels
