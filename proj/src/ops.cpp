#include "mrsn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "mrsn/kernels.hpp"

namespace mrsn {

namespace {
thread_local bool t_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : saved_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = saved_; }
bool grad_enabled() { return t_grad_enabled; }

template <typename T>
void backward(const Var<T>& root) {
  using Node = GraphNode<T>;
  if (root.value().size() != 1) {
    throw DimensionError("backward() needs a single-element root, got " +
                         shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::vector<std::pair<Node*, std::size_t>> stack;
  std::unordered_set<Node*> visited;
  auto mark = [&](Node* n) { return visited.insert(n).second; };
  stack.emplace_back(root.node().get(), 0);
  mark(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && mark(parent)) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->has_grad()) node->backward_fn(*node);
  }
}

}  // namespace mrsn

namespace mrsn::ops {

namespace {

template <typename T>
using Node = GraphNode<T>;

void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

template <typename T>
void require_matrix(const Var<T>& x, const char* op) {
  require(x.value().rank() <= 2, std::string(op) + ": expected a matrix, got " + shape_str(x.shape()));
}

template <typename T>
void add_into(BasicArray<T>& dst, const BasicArray<T>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace

double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x)));
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  require(b.rows() == k, "matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  BasicArray<T> out({n, m});
  kernels::gemm<T>({a.value().ptr(), b.value().ptr(), out.ptr(), n, k, m});
  return make_result<T>(std::move(out), {a, b}, [n, k, m](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      // dA = G B^T
      kernels::gemm<T>({self.grad.ptr(), pb.value.ptr(), pa.grad_buffer().ptr(), n, m, k, false,
                        true, true});
    }
    if (pb.requires_grad) {
      // dB = A^T G
      kernels::gemm<T>({pa.value.ptr(), self.grad.ptr(), pb.grad_buffer().ptr(), k, n, m, true,
                        false, true});
    }
  });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  require(b.cols() == k, "matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
  BasicArray<T> out({n, m});
  kernels::gemm<T>({a.value().ptr(), b.value().ptr(), out.ptr(), n, k, m, false, true});
  return make_result<T>(std::move(out), {a, b}, [n, k, m](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      // dA = G B
      kernels::gemm<T>({self.grad.ptr(), pb.value.ptr(), pa.grad_buffer().ptr(), n, m, k, false,
                        false, true});
    }
    if (pb.requires_grad) {
      // dB = G^T A
      kernels::gemm<T>({self.grad.ptr(), pa.value.ptr(), pb.grad_buffer().ptr(), m, n, k, true,
                        false, true});
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.value().size() == b.value().size() && a.rows() == b.rows(),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  BasicArray<T> out = a.value();
  add_into(out, b.value());
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) add_into(p->grad_buffer(), self.grad);
    }
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  require_matrix(x, "add_bias");
  const std::size_t n = x.rows(), m = x.cols();
  require(bias.value().size() == m, "add_bias: bias of shape " + shape_str(bias.shape()) +
                                        " does not match " + shape_str(x.shape()));
  BasicArray<T> out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bias.value()[j];
  return make_result<T>(std::move(out), {x, bias}, [n, m](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pb = *self.parents[1];
    if (px.requires_grad) add_into(px.grad_buffer(), self.grad);
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += self.grad[i * m + j];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  BasicArray<T> out = x.value();
  for (auto& v : out.data()) v *= factor;
  return make_result<T>(std::move(out), {x}, [factor](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  return add_bias(matmul(x, weight), bias);
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& shift, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t n = x.rows(), d = x.cols();
  require(d >= 1, "layer_norm: zero-width rows");
  require(gain.value().size() == d && shift.value().size() == d,
          "layer_norm: affine parameters " + shape_str(gain.shape()) + "/" +
              shape_str(shift.shape()) + " do not match width " + std::to_string(d));
  BasicArray<T> out(x.shape());
  std::vector<T> xhat(n * d), rstd(n);
  const auto& xv = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xv[i * d + j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const T c = xv[i * d + j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    rstd[i] = T(1) / std::sqrt(var + static_cast<T>(eps));
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (xv[i * d + j] - mean) * rstd[i];
      out[i * d + j] = xhat[i * d + j] * gain.value()[j] + shift.value()[j];
    }
  }
  return make_result<T>(std::move(out), {x, gain, shift},
                        [n, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& ps = *self.parents[2];
    const auto& g = self.grad;
    if (pg.requires_grad) {
      auto& gg = pg.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
    }
    if (ps.requires_grad) {
      auto& gs = ps.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gs[j] += g[i * d + j];
    }
    if (px.requires_grad) {
      auto& gx = px.grad_buffer();
      const auto& gain_v = pg.value;
      for (std::size_t i = 0; i < n; ++i) {
        T mean_dxhat = 0, mean_dxhat_xhat = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const T dxhat = g[i * d + j] * gain_v[j];
          mean_dxhat += dxhat;
          mean_dxhat_xhat += dxhat * xhat[i * d + j];
        }
        mean_dxhat /= static_cast<T>(d);
        mean_dxhat_xhat /= static_cast<T>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const T dxhat = g[i * d + j] * gain_v[j];
          gx[i * d + j] += rstd[i] * (dxhat - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
        }
      }
    }
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  const T c = static_cast<T>(kGeluSqrt2OverPi);
  const T a = static_cast<T>(kGeluCubic);
  BasicArray<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T v = xv[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
  }
  return make_result<T>(std::move(out), {x}, [c, a](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = p.value[i];
      const T th = std::tanh(c * (v + a * v * v * v));
      const T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * c * (T(1) + T(3) * a * v * v);
      g[i] += d * self.grad[i];
    }
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  require_matrix(x, "softmax_rows");
  const std::size_t n = x.rows(), m = x.cols();
  BasicArray<T> out(x.shape());
  kernels::softmax_rows<T>(x.value().ptr(), out.ptr(), n, m);
  return make_result<T>(std::move(out), {x}, [n, m](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& y = self.value;
    for (std::size_t i = 0; i < n; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < m; ++j) dot += self.grad[i * m + j] * y[i * m + j];
      for (std::size_t j = 0; j < m; ++j) g[i * m + j] += y[i * m + j] * (self.grad[i * m + j] - dot);
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  BasicArray<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.value()[i];
    out[i] = v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = self.value[i];
      g[i] += s * (T(1) - s) * self.grad[i];
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  require_matrix(x, "transpose");
  const std::size_t n = x.rows(), m = x.cols();
  BasicArray<T> out({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = x.value()[i * m + j];
  return make_result<T>(std::move(out), {x}, [n, m](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) g[i * m + j] += self.grad[j * n + i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  require(shape_numel(shape) == x.value().size(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  BasicArray<T> out = x.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    add_into(self.parents[0]->grad_buffer(), self.grad);
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_rows");
  const std::size_t m = x.cols();
  require(count >= 1 && begin + count <= x.rows(),
          "slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
              ") out of " + shape_str(x.shape()));
  std::vector<T> data(x.value().ptr() + begin * m, x.value().ptr() + (begin + count) * m);
  BasicArray<T> out({count, m}, std::move(data));
  return make_result<T>(std::move(out), {x}, [begin, m](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * m + i] += self.grad[i];
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t n = x.rows(), m = x.cols();
  require(count >= 1 && begin + count <= m,
          "slice_cols: cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
              ") out of " + shape_str(x.shape()));
  BasicArray<T> out({n, count});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x.value()[i * m + begin + j];
  return make_result<T>(std::move(out), {x}, [n, m, begin, count](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * m + begin + j] += self.grad[i * count + j];
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t m = parts[0].cols();
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    require(p.cols() == m, "concat_rows: width " + std::to_string(p.cols()) + " vs " +
                               std::to_string(m));
    n += p.rows();
  }
  std::vector<T> data;
  data.reserve(n * m);
  for (const auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  BasicArray<T> out({n, m}, std::move(data));
  return make_result<T>(std::move(out), parts, [](Node<T>& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t len = p->value.size();
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offset + i];
      }
      offset += len;
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::size_t m = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    require(p.rows() == n, "concat_cols: rows " + std::to_string(p.rows()) + " vs " +
                               std::to_string(n));
    m += p.cols();
  }
  BasicArray<T> out({n, m});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * m + offset + j] = p.value()[i * w + j];
    offset += w;
  }
  return make_result<T>(std::move(out), parts, [n, m](Node<T>& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t w = p->value.cols();
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * m + offset + j];
      }
      offset += w;
    }
  });
}

template <typename T>
Var<T> mean_rows(const Var<T>& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "mean_rows");
  const std::size_t m = x.cols();
  require(count >= 1 && begin + count <= x.rows(), "mean_rows: row range out of bounds for " +
                                                       shape_str(x.shape()));
  BasicArray<T> out({1, m});
  for (std::size_t i = begin; i < begin + count; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += x.value()[i * m + j];
  for (auto& v : out.data()) v /= static_cast<T>(count);
  return make_result<T>(std::move(out), {x}, [begin, count, m](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T inv = T(1) / static_cast<T>(count);
    for (std::size_t i = begin; i < begin + count; ++i)
      for (std::size_t j = 0; j < m; ++j) g[i * m + j] += self.grad[j] * inv;
  });
}

template <typename T>
Var<T> mean_leading(const Var<T>& x) {
  const Shape& s = x.shape();
  require(s.size() >= 2, "mean_leading: need rank >= 2, got " + shape_str(s));
  const std::size_t t = s[0];
  const Shape rest(s.begin() + 1, s.end());
  const std::size_t inner = shape_numel(rest);
  BasicArray<T> out(rest);
  for (std::size_t k = 0; k < t; ++k)
    for (std::size_t i = 0; i < inner; ++i) out[i] += x.value()[k * inner + i];
  for (auto& v : out.data()) v /= static_cast<T>(t);
  return make_result<T>(std::move(out), {x}, [t, inner](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T inv = T(1) / static_cast<T>(t);
    for (std::size_t k = 0; k < t; ++k)
      for (std::size_t i = 0; i < inner; ++i) g[k * inner + i] += self.grad[i] * inv;
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  return make_result<T>(BasicArray<T>({1}, {acc}), {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g.data()) v += self.grad[0];
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& x, const BasicArray<T>& w) {
  require(w.size() == x.value().size(), "weighted_sum: weight size mismatch");
  T acc = 0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += x.value()[i] * w[i];
  return make_result<T>(BasicArray<T>({1}, {acc}), {x}, [w](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += w[i] * self.grad[0];
  });
}

template <typename T>
Var<T> sigmoid_bce(const Var<T>& logits, const BasicArray<T>& targets) {
  require(targets.shape() == logits.shape(),
          "sigmoid_bce: targets " + shape_str(targets.shape()) + " vs logits " +
              shape_str(logits.shape()));
  for (T t : targets.data()) {
    if (t != T(0) && t != T(1)) throw DataError("sigmoid_bce: targets must be 0 or 1");
  }
  const std::size_t count = targets.size();
  T acc = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const T z = logits.value()[i];
    acc += std::max(z, T(0)) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
  }
  acc /= static_cast<T>(count);
  return make_result<T>(BasicArray<T>({1}, {acc}), {logits}, [targets, count](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    const T scale = self.grad[0] / static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const T z = p.value[i];
      const T s = z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
      g[i] += (s - targets[i]) * scale;
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require(x.value().rank() == 3, "conv2d: input must be C x H x W, got " + shape_str(x.shape()));
  require(weight.value().rank() == 4, "conv2d: weight must be Cout x Cin x K x K");
  const std::size_t cin = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t cout = weight.shape()[0], k = weight.shape()[2];
  require(weight.shape()[1] == cin && weight.shape()[3] == k && k % 2 == 1,
          "conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
              shape_str(x.shape()));
  require(bias.value().size() == cout, "conv2d: bias size mismatch");
  BasicArray<T> out({cout, h, w});
  kernels::conv2d<T>(x.value().ptr(), cin, h, w, weight.value().ptr(), bias.value().ptr(), cout, k,
                     out.ptr());
  return make_result<T>(std::move(out), {x, weight, bias}, [cin, h, w, cout, k](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    const long pad = static_cast<long>(k / 2);
    T* gx = px.requires_grad ? px.grad_buffer().ptr() : nullptr;
    T* gw = pw.requires_grad ? pw.grad_buffer().ptr() : nullptr;
    const T* xv = px.value.ptr();
    const T* wv = pw.value.ptr();
    for (std::size_t oc = 0; oc < cout; ++oc) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          const T g = self.grad[(oc * h + y) * w + xx];
          if (g == T(0)) continue;
          for (std::size_t ic = 0; ic < cin; ++ic) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              const long sy = static_cast<long>(y) + static_cast<long>(ky) - pad;
              if (sy < 0 || sy >= static_cast<long>(h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long sx = static_cast<long>(xx) + static_cast<long>(kx) - pad;
                if (sx < 0 || sx >= static_cast<long>(w)) continue;
                const std::size_t widx = ((oc * cin + ic) * k + ky) * k + kx;
                const std::size_t xidx = (ic * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx);
                if (gx) gx[xidx] += wv[widx] * g;
                if (gw) gw[widx] += xv[xidx] * g;
              }
            }
          }
        }
      }
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t i = 0; i < h * w; ++i) gb[oc] += self.grad[oc * h * w + i];
    }
  });
}

template <typename T>
Var<T> adaptive_avg_pool(const Var<T>& x, std::size_t side) {
  require(x.value().rank() == 3, "adaptive_avg_pool: input must be C x w x h, got " +
                                     shape_str(x.shape()));
  require(side >= 1, "adaptive_avg_pool: output side must be positive");
  const std::size_t c = x.shape()[0], w = x.shape()[1], h = x.shape()[2];
  auto lo = [](std::size_t i, std::size_t in, std::size_t out) { return (i * in) / out; };
  auto hi = [](std::size_t i, std::size_t in, std::size_t out) { return ((i + 1) * in + out - 1) / out; };
  BasicArray<T> out({c, side, side});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < side; ++i) {
      for (std::size_t j = 0; j < side; ++j) {
        const std::size_t r0 = lo(i, w, side), r1 = hi(i, w, side);
        const std::size_t c0 = lo(j, h, side), c1 = hi(j, h, side);
        T acc = 0;
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t q = c0; q < c1; ++q) acc += x.value().at(ch, r, q);
        out.at(ch, i, j) = acc / static_cast<T>((r1 - r0) * (c1 - c0));
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [c, w, h, side, lo, hi](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < side; ++i) {
        for (std::size_t j = 0; j < side; ++j) {
          const std::size_t r0 = lo(i, w, side), r1 = hi(i, w, side);
          const std::size_t c0 = lo(j, h, side), c1 = hi(j, h, side);
          const T share = self.grad.at(ch, i, j) / static_cast<T>((r1 - r0) * (c1 - c0));
          for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t q = c0; q < c1; ++q) g.at(ch, r, q) += share;
        }
      }
    }
  });
}

template <typename T>
Var<T> patchify(const Var<T>& x, std::size_t patch) {
  require(x.value().rank() == 3 && x.shape()[1] == x.shape()[2],
          "patchify: input must be C x S x S, got " + shape_str(x.shape()));
  const std::size_t c = x.shape()[0], s = x.shape()[1];
  require(patch >= 1 && s % patch == 0, "patchify: patch side " + std::to_string(patch) +
                                            " does not divide " + std::to_string(s));
  const std::size_t grid = s / patch, count = grid * grid, width = c * patch * patch;
  // index[k * width + f] is the source offset of feature f of patch k
  std::vector<std::size_t> index(count * width);
  for (std::size_t gi = 0; gi < grid; ++gi)
    for (std::size_t gj = 0; gj < grid; ++gj)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t pi = 0; pi < patch; ++pi)
          for (std::size_t pj = 0; pj < patch; ++pj) {
            const std::size_t k = gi * grid + gj;
            const std::size_t f = (ch * patch + pi) * patch + pj;
            index[k * width + f] = (ch * s + gi * patch + pi) * s + gj * patch + pj;
          }
  BasicArray<T> out({count, width});
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = x.value()[index[i]];
  return make_result<T>(std::move(out), {x}, [index = std::move(index)](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
  });
}

template <typename T>
Var<T> roi_align(const Var<T>& feature, const NormalizedBox& box, std::size_t pooled,
                 std::size_t sampling) {
  require(feature.value().rank() == 3, "roi_align: feature must be C x H x W, got " +
                                           shape_str(feature.shape()));
  if (!(box.x2 > box.x1) || !(box.y2 > box.y1)) {
    throw DimensionError("roi_align: degenerate box with zero area");
  }
  const std::size_t c = feature.shape()[0], h = feature.shape()[1], w = feature.shape()[2];
  kernels::RoiAlignArgs<T> args{feature.value().ptr(), c, h, w,
                                box.x1 * static_cast<double>(w), box.y1 * static_cast<double>(h),
                                box.x2 * static_cast<double>(w), box.y2 * static_cast<double>(h),
                                pooled, sampling, nullptr};
  BasicArray<T> out({c, pooled, pooled});
  args.out = out.ptr();
  kernels::roi_align<T>(args);
  return make_result<T>(std::move(out), {feature}, [args](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const std::size_t P = args.pooled;
    const double bin_w = (args.x2 - args.x1) / static_cast<double>(P);
    const double bin_h = (args.y2 - args.y1) / static_cast<double>(P);
    const T inv = T(1) / static_cast<T>(args.sampling * args.sampling);
    for (std::size_t ph = 0; ph < P; ++ph)
      for (std::size_t pw = 0; pw < P; ++pw)
        for (std::size_t iy = 0; iy < args.sampling; ++iy) {
          const double y = args.y1 + (ph + (iy + 0.5) / args.sampling) * bin_h - 0.5;
          for (std::size_t ix = 0; ix < args.sampling; ++ix) {
            const double x = args.x1 + (pw + (ix + 0.5) / args.sampling) * bin_w - 0.5;
            const auto tap = kernels::bilinear_tap<T>(y, x, args.height, args.width);
            if (!tap.valid) continue;
            for (std::size_t ch = 0; ch < args.channels; ++ch) {
              const T gv = self.grad[(ch * P + ph) * P + pw] * inv;
              for (int q = 0; q < 4; ++q)
                g[ch * args.height * args.width + tap.idx[q]] += tap.weight[q] * gv;
            }
          }
        }
  });
}

#define MRSN_INSTANTIATE_OPS(T)                                                              \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> matmul_nt<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> add_bias<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> scale<T>(const Var<T>&, T);                                              \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                  \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, double);      \
  template Var<T> gelu<T>(const Var<T>&);                                                  \
  template Var<T> softmax_rows<T>(const Var<T>&);                                          \
  template Var<T> sigmoid<T>(const Var<T>&);                                               \
  template Var<T> transpose<T>(const Var<T>&);                                             \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                        \
  template Var<T> slice_rows<T>(const Var<T>&, std::size_t, std::size_t);                 \
  template Var<T> slice_cols<T>(const Var<T>&, std::size_t, std::size_t);                 \
  template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                              \
  template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                              \
  template Var<T> mean_rows<T>(const Var<T>&, std::size_t, std::size_t);                   \
  template Var<T> mean_leading<T>(const Var<T>&);                                          \
  template Var<T> sum_all<T>(const Var<T>&);                                               \
  template Var<T> weighted_sum<T>(const Var<T>&, const BasicArray<T>&);                    \
  template Var<T> sigmoid_bce<T>(const Var<T>&, const BasicArray<T>&);                     \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&);                  \
  template Var<T> adaptive_avg_pool<T>(const Var<T>&, std::size_t);                        \
  template Var<T> patchify<T>(const Var<T>&, std::size_t);                                 \
  template Var<T> roi_align<T>(const Var<T>&, const NormalizedBox&, std::size_t, std::size_t);

MRSN_INSTANTIATE_OPS(float)
MRSN_INSTANTIATE_OPS(double)

}  // namespace mrsn::ops

namespace mrsn {
template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);
}  // namespace mrsn
