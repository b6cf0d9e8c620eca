#include "brainage/autograd.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "brainage/error.hpp"

namespace brainage::ag {

std::size_t numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

namespace {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

[[noreturn]] void shape_error(const std::string& op, const std::string& what) {
  throw Error(ErrorCode::ShapeMismatch, op + ": " + what);
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      std::vector<std::shared_ptr<detail::Node<T>>> parents,
                      std::function<void(detail::Node<T>&)> backward_fn) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs_grad = false;
  for (const auto& p : parents) needs_grad = needs_grad || p->requires_grad;
  if (needs_grad) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

inline void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::size_t m, std::size_t n,
                 std::size_t k, const float* a, std::size_t lda, const float* b, std::size_t ldb,
                 float beta, float* c, std::size_t ldc) {
  cblas_sgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0f, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta,
              c, static_cast<int>(ldc));
}

inline void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::size_t m, std::size_t n,
                 std::size_t k, const double* a, std::size_t lda, const double* b,
                 std::size_t ldb, double beta, double* c, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta,
              c, static_cast<int>(ldc));
}

struct Geometry {
  std::size_t n, c, d, h, w;
  std::size_t spatial() const { return d * h * w; }
};

Geometry geometry5(const Shape& s, const char* op) {
  if (s.size() != 5) shape_error(op, "expected a 5-D input, got " + shape_str(s));
  return {s[0], s[1], s[2], s[3], s[4]};
}

// Valid destination range [lo, hi) along one axis for kernel tap k in {0,1,2}
// (source = destination + k - 1).
inline void tap_range(std::size_t k, std::size_t extent, std::size_t& lo, std::size_t& hi) {
  lo = k == 0 ? 1 : 0;
  hi = k == 2 ? extent - 1 : extent;
  if (hi < lo) hi = lo;
}

// Unfolds one sample [C, D, H, W] into col [C*27, D*H*W].
template <typename T>
void im2col(const T* x, const Geometry& g, T* col) {
  const std::size_t plane = g.h * g.w;
  const std::size_t p = g.spatial();
  for (std::size_t c = 0; c < g.c; ++c) {
    const T* xc = x + c * p;
    for (std::size_t kz = 0; kz < 3; ++kz) {
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          T* row = col + (c * 27 + kz * 9 + ky * 3 + kx) * p;
          std::size_t x_lo, x_hi;
          tap_range(kx, g.w, x_lo, x_hi);
          for (std::size_t z = 0; z < g.d; ++z) {
            const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(z + kz) - 1;
            for (std::size_t y = 0; y < g.h; ++y) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
              T* dst = row + z * plane + y * g.w;
              if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(g.d) || iy < 0 ||
                  iy >= static_cast<std::ptrdiff_t>(g.h)) {
                std::fill(dst, dst + g.w, T(0));
                continue;
              }
              const T* src = xc + static_cast<std::size_t>(iz) * plane +
                             static_cast<std::size_t>(iy) * g.w;
              std::fill(dst, dst + x_lo, T(0));
              for (std::size_t xx = x_lo; xx < x_hi; ++xx) dst[xx] = src[xx + kx - 1];
              std::fill(dst + std::max(x_hi, x_lo), dst + g.w, T(0));
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates col [C*27, P] into dx [C, D, H, W].
template <typename T>
void col2im(const T* col, const Geometry& g, T* dx) {
  const std::size_t plane = g.h * g.w;
  const std::size_t p = g.spatial();
  for (std::size_t c = 0; c < g.c; ++c) {
    T* xc = dx + c * p;
    for (std::size_t kz = 0; kz < 3; ++kz) {
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const T* row = col + (c * 27 + kz * 9 + ky * 3 + kx) * p;
          std::size_t x_lo, x_hi;
          tap_range(kx, g.w, x_lo, x_hi);
          for (std::size_t z = 0; z < g.d; ++z) {
            const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(z + kz) - 1;
            if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(g.d)) continue;
            for (std::size_t y = 0; y < g.h; ++y) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
              const T* src = row + z * plane + y * g.w;
              T* dst = xc + static_cast<std::size_t>(iz) * plane +
                       static_cast<std::size_t>(iy) * g.w;
              for (std::size_t xx = x_lo; xx < x_hi; ++xx) dst[xx + kx - 1] += src[xx];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_forward_reference(const T* x, const T* w, const T* b, const Geometry& g,
                            std::size_t cout, T* out) {
  const std::size_t p = g.spatial();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t z = 0; z < g.d; ++z) {
        for (std::size_t y = 0; y < g.h; ++y) {
          for (std::size_t xx = 0; xx < g.w; ++xx) {
            T acc = T(0);
            for (std::size_t ci = 0; ci < g.c; ++ci) {
              const T* xs = x + (n * g.c + ci) * p;
              const T* ws = w + (co * g.c + ci) * 27;
              for (std::size_t kz = 0; kz < 3; ++kz) {
                const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(z + kz) - 1;
                if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(g.d)) continue;
                for (std::size_t ky = 0; ky < 3; ++ky) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                  for (std::size_t kx = 0; kx < 3; ++kx) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx + kx) - 1;
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                    acc += ws[kz * 9 + ky * 3 + kx] *
                           xs[(static_cast<std::size_t>(iz) * g.h + static_cast<std::size_t>(iy)) *
                                  g.w +
                              static_cast<std::size_t>(ix)];
                  }
                }
              }
            }
            out[((n * cout + co) * g.d + z) * g.h * g.w + y * g.w + xx] = acc + b[co];
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward_reference(const T* x, const T* w, const T* dy, const Geometry& g,
                             std::size_t cout, T* dx, T* dw, T* db) {
  const std::size_t p = g.spatial();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      const T* dys = dy + (n * cout + co) * p;
      for (std::size_t z = 0; z < g.d; ++z) {
        for (std::size_t y = 0; y < g.h; ++y) {
          for (std::size_t xx = 0; xx < g.w; ++xx) {
            const T grad = dys[(z * g.h + y) * g.w + xx];
            if (db) db[co] += grad;
            for (std::size_t ci = 0; ci < g.c; ++ci) {
              const std::size_t xoff = (n * g.c + ci) * p;
              const std::size_t woff = (co * g.c + ci) * 27;
              for (std::size_t kz = 0; kz < 3; ++kz) {
                const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(z + kz) - 1;
                if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(g.d)) continue;
                for (std::size_t ky = 0; ky < 3; ++ky) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                  for (std::size_t kx = 0; kx < 3; ++kx) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx + kx) - 1;
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                    const std::size_t xi =
                        xoff +
                        (static_cast<std::size_t>(iz) * g.h + static_cast<std::size_t>(iy)) * g.w +
                        static_cast<std::size_t>(ix);
                    const std::size_t wi = woff + kz * 9 + ky * 3 + kx;
                    if (dx) dx[xi] += w[wi] * grad;
                    if (dw) dw[wi] += x[xi] * grad;
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (numel(shape) != values.size()) {
    shape_error("Tensor", "shape " + shape_str(shape) + " does not hold " +
                              std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) shape_error("item", "tensor has " + std::to_string(size()) + " elements");
  return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->value, false);
}

template <typename T>
void Tensor<T>::backward() {
  if (size() != 1) shape_error("backward", "root must be a scalar");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// conv3d

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 ConvPath path) {
  const Geometry g = geometry5(input.shape(), "conv3d");
  const Shape& ws = weight.shape();
  if (ws.size() != 5 || ws[1] != g.c || ws[2] != 3 || ws[3] != 3 || ws[4] != 3) {
    shape_error("conv3d", "weight " + shape_str(ws) + " incompatible with input " +
                              shape_str(input.shape()));
  }
  const std::size_t cout = ws[0];
  if (bias.shape() != Shape{cout}) shape_error("conv3d", "bias must be [" + std::to_string(cout) + "]");

  const std::size_t p = g.spatial();
  const std::size_t k = g.c * 27;
  std::vector<T> out(g.n * cout * p);
  const T* x = input.values().data();
  const T* w = weight.values().data();
  const T* b = bias.values().data();

  if (path == ConvPath::Reference) {
    conv_forward_reference(x, w, b, g, cout, out.data());
  } else {
    std::vector<T> col(k * p);
    for (std::size_t n = 0; n < g.n; ++n) {
      im2col(x + n * g.c * p, g, col.data());
      T* o = out.data() + n * cout * p;
      for (std::size_t co = 0; co < cout; ++co) std::fill(o + co * p, o + (co + 1) * p, b[co]);
      gemm(CblasNoTrans, CblasNoTrans, cout, p, k, w, k, col.data(), p, T(1), o, p);
    }
  }

  auto in_node = input.node();
  auto w_node = weight.node();
  auto b_node = bias.node();
  return make_result<T>(
      {g.n, cout, g.d, g.h, g.w}, std::move(out), {in_node, w_node, b_node},
      [in_node, w_node, b_node, g, cout, path](detail::Node<T>& self) {
        const std::size_t p = g.spatial();
        const std::size_t k = g.c * 27;
        const T* dy = self.grad.data();
        T* dx = in_node->requires_grad ? in_node->grad_buffer().data() : nullptr;
        T* dw = w_node->requires_grad ? w_node->grad_buffer().data() : nullptr;
        T* db = b_node->requires_grad ? b_node->grad_buffer().data() : nullptr;
        const T* x = in_node->value.data();
        const T* w = w_node->value.data();
        if (path == ConvPath::Reference) {
          conv_backward_reference(x, w, dy, g, cout, dx, dw, db);
          return;
        }
        std::vector<T> col(k * p);
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* dyn = dy + n * cout * p;
          if (db) {
            for (std::size_t co = 0; co < cout; ++co) {
              T acc = T(0);
              for (std::size_t i = 0; i < p; ++i) acc += dyn[co * p + i];
              db[co] += acc;
            }
          }
          if (dw) {
            im2col(x + n * g.c * p, g, col.data());
            gemm(CblasNoTrans, CblasTrans, cout, k, p, dyn, p, col.data(), p, T(1), dw, k);
          }
          if (dx) {
            gemm(CblasTrans, CblasNoTrans, k, p, cout, w, k, dyn, p, T(0), col.data(), p);
            col2im(col.data(), g, dx + n * g.c * p);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// batchnorm3d

template <typename T>
Tensor<T> batchnorm3d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, Mode mode) {
  const Geometry g = geometry5(input.shape(), "batchnorm3d");
  if (gamma.shape() != Shape{g.c} || beta.shape() != Shape{g.c} ||
      state.running_mean.size() != g.c || state.running_var.size() != g.c) {
    shape_error("batchnorm3d", "per-channel parameters must have " + std::to_string(g.c) +
                                   " entries");
  }
  const std::size_t p = g.spatial();
  const std::size_t m = g.n * p;
  const T* x = input.values().data();

  std::vector<T> mean(g.c), inv_std(g.c);
  if (mode == Mode::Train) {
    for (std::size_t c = 0; c < g.c; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < g.n; ++n) {
        const T* xs = x + (n * g.c + c) * p;
        for (std::size_t i = 0; i < p; ++i) s += xs[i];
      }
      const double mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t n = 0; n < g.n; ++n) {
        const T* xs = x + (n * g.c + c) * p;
        for (std::size_t i = 0; i < p; ++i) {
          const double d = xs[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(m);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + state.eps));
      const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      state.running_mean[c] = static_cast<T>((1.0 - state.momentum) * state.running_mean[c] +
                                             state.momentum * mu);
      state.running_var[c] = static_cast<T>((1.0 - state.momentum) * state.running_var[c] +
                                            state.momentum * unbiased);
    }
  } else {
    for (std::size_t c = 0; c < g.c; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + state.eps));
    }
  }

  const T* ga = gamma.values().data();
  const T* be = beta.values().data();
  std::vector<T> xhat(input.size()), out(input.size());
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t c = 0; c < g.c; ++c) {
      const std::size_t off = (n * g.c + c) * p;
      for (std::size_t i = 0; i < p; ++i) {
        const T h = (x[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = ga[c] * h + be[c];
      }
    }
  }

  auto in_node = input.node();
  auto g_node = gamma.node();
  auto b_node = beta.node();
  return make_result<T>(
      input.shape(), std::move(out), {in_node, g_node, b_node},
      [in_node, g_node, b_node, g, mode, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](detail::Node<T>& self) {
        const std::size_t p = g.spatial();
        const double m = static_cast<double>(g.n * p);
        const T* dy = self.grad.data();
        const T* ga = g_node->value.data();
        T* dx = in_node->requires_grad ? in_node->grad_buffer().data() : nullptr;
        T* dg = g_node->requires_grad ? g_node->grad_buffer().data() : nullptr;
        T* db = b_node->requires_grad ? b_node->grad_buffer().data() : nullptr;
        for (std::size_t c = 0; c < g.c; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t n = 0; n < g.n; ++n) {
            const std::size_t off = (n * g.c + c) * p;
            for (std::size_t i = 0; i < p; ++i) {
              sum_dy += dy[off + i];
              sum_dy_xhat += static_cast<double>(dy[off + i]) * xhat[off + i];
            }
          }
          if (dg) dg[c] += static_cast<T>(sum_dy_xhat);
          if (db) db[c] += static_cast<T>(sum_dy);
          if (!dx) continue;
          const double scale = static_cast<double>(ga[c]) * inv_std[c];
          for (std::size_t n = 0; n < g.n; ++n) {
            const std::size_t off = (n * g.c + c) * p;
            for (std::size_t i = 0; i < p; ++i) {
              if (mode == Mode::Train) {
                dx[off + i] += static_cast<T>(
                    scale / m * (m * dy[off + i] - sum_dy - xhat[off + i] * sum_dy_xhat));
              } else {
                dx[off + i] += static_cast<T>(scale * dy[off + i]);
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// relu, maxpool3d, flatten

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  std::vector<T> out(input.values().begin(), input.values().end());
  for (T& v : out) v = v > T(0) ? v : T(0);
  auto in_node = input.node();
  return make_result<T>(input.shape(), std::move(out), {in_node}, [in_node](detail::Node<T>& self) {
    auto& dx = in_node->grad_buffer();
    const auto& x = in_node->value;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > T(0)) dx[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& input) {
  const Geometry g = geometry5(input.shape(), "maxpool3d");
  const std::size_t od = g.d / 2, oh = g.h / 2, ow = g.w / 2;
  if (od == 0 || oh == 0 || ow == 0) shape_error("maxpool3d", "spatial dims must be >= 2");
  const T* x = input.values().data();
  std::vector<T> out(g.n * g.c * od * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
    const std::size_t base = nc * g.spatial();
    for (std::size_t z = 0; z < od; ++z) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
          std::size_t best = base + ((2 * z) * g.h + 2 * y) * g.w + 2 * xx;
          for (std::size_t dz = 0; dz < 2; ++dz) {
            for (std::size_t dy = 0; dy < 2; ++dy) {
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t i = base + ((2 * z + dz) * g.h + 2 * y + dy) * g.w + 2 * xx + dx;
                if (x[i] > x[best]) best = i;
              }
            }
          }
          out[o] = x[best];
          argmax[o] = best;
        }
      }
    }
  }
  auto in_node = input.node();
  return make_result<T>({g.n, g.c, od, oh, ow}, std::move(out), {in_node},
                        [in_node, argmax = std::move(argmax)](detail::Node<T>& self) {
                          auto& dx = in_node->grad_buffer();
                          for (std::size_t i = 0; i < argmax.size(); ++i) {
                            dx[argmax[i]] += self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& input) {
  const Shape& s = input.shape();
  if (s.empty()) shape_error("flatten", "scalar input");
  const std::size_t n = s[0];
  const std::size_t rest = n == 0 ? 0 : input.size() / n;
  auto in_node = input.node();
  return make_result<T>({n, rest}, std::vector<T>(input.values().begin(), input.values().end()),
                        {in_node}, [in_node](detail::Node<T>& self) {
                          auto& dx = in_node->grad_buffer();
                          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
                        });
}

// ---------------------------------------------------------------------------
// linear

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (is.size() != 2 || ws.size() != 2 || ws[1] != is[1] || bias.shape() != Shape{ws[0]}) {
    shape_error("linear", "input " + shape_str(is) + ", weight " + shape_str(ws) + ", bias " +
                              shape_str(bias.shape()));
  }
  const std::size_t n = is[0], fin = is[1], fout = ws[0];
  const T* x = input.values().data();
  const T* w = weight.values().data();
  const T* b = bias.values().data();
  std::vector<T> out(n * fout);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < fout; ++o) {
      T acc = T(0);
      for (std::size_t i = 0; i < fin; ++i) acc += x[r * fin + i] * w[o * fin + i];
      out[r * fout + o] = acc + b[o];
    }
  }
  auto in_node = input.node();
  auto w_node = weight.node();
  auto b_node = bias.node();
  return make_result<T>(
      {n, fout}, std::move(out), {in_node, w_node, b_node},
      [in_node, w_node, b_node, n, fin, fout](detail::Node<T>& self) {
        const T* dy = self.grad.data();
        const T* x = in_node->value.data();
        const T* w = w_node->value.data();
        if (in_node->requires_grad) {
          T* dx = in_node->grad_buffer().data();
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t o = 0; o < fout; ++o) {
              const T gy = dy[r * fout + o];
              for (std::size_t i = 0; i < fin; ++i) dx[r * fin + i] += gy * w[o * fin + i];
            }
          }
        }
        if (w_node->requires_grad) {
          T* dw = w_node->grad_buffer().data();
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t o = 0; o < fout; ++o) {
              const T gy = dy[r * fout + o];
              for (std::size_t i = 0; i < fin; ++i) dw[o * fin + i] += gy * x[r * fin + i];
            }
          }
        }
        if (b_node->requires_grad) {
          T* db = b_node->grad_buffer().data();
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t o = 0; o < fout; ++o) db[o] += dy[r * fout + o];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// losses and reductions

template <typename T>
Tensor<T> mae_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    shape_error("mae_loss", "pred " + shape_str(pred.shape()) + " vs target " +
                                shape_str(target.shape()));
  }
  const std::size_t n = pred.size();
  const auto p = pred.values();
  const auto t = target.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(p[i]) - t[i]);
  auto p_node = pred.node();
  auto t_node = target.node();
  return make_result<T>({1}, {static_cast<T>(acc / static_cast<double>(n))}, {p_node, t_node},
                        [p_node, t_node, n](detail::Node<T>& self) {
                          const T g = self.grad[0] / static_cast<T>(n);
                          const auto& p = p_node->value;
                          const auto& t = t_node->value;
                          auto sign = [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); };
                          if (p_node->requires_grad) {
                            auto& dp = p_node->grad_buffer();
                            for (std::size_t i = 0; i < n; ++i) dp[i] += g * sign(p[i] - t[i]);
                          }
                          if (t_node->requires_grad) {
                            auto& dt = t_node->grad_buffer();
                            for (std::size_t i = 0; i < n; ++i) dt[i] -= g * sign(p[i] - t[i]);
                          }
                        });
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& input, std::span<const T> weights) {
  if (weights.size() != input.size()) shape_error("weighted_sum", "weight count mismatch");
  double acc = 0.0;
  const auto x = input.values();
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]) * weights[i];
  auto in_node = input.node();
  std::vector<T> w(weights.begin(), weights.end());
  return make_result<T>({1}, {static_cast<T>(acc)}, {in_node},
                        [in_node, w = std::move(w)](detail::Node<T>& self) {
                          auto& dx = in_node->grad_buffer();
                          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[0] * w[i];
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
  std::vector<T> ones(input.size(), T(1));
  return weighted_sum<T>(input, ones);
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, const AdamConfig& cfg) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_values();
    const auto grad = params[k].grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != values.size()) {
      m.assign(values.size(), T(0));
      v.assign(values.size(), T(0));
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
      values[i] = static_cast<T>(static_cast<double>(values[i]) - step);
    }
  }
}

#define BRAINAGE_INSTANTIATE(T)                                                              \
  template class Tensor<T>;                                                                  \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvPath); \
  template Tensor<T> batchnorm3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                 BatchNormState<T>&, Mode);                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                 \
  template Tensor<T> maxpool3d(const Tensor<T>&);                                            \
  template Tensor<T> flatten(const Tensor<T>&);                                              \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> mae_loss(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> weighted_sum(const Tensor<T>&, std::span<const T>);                     \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template void adam_step(std::span<Tensor<T>>, AdamState<T>&, const AdamConfig&);

BRAINAGE_INSTANTIATE(float)
BRAINAGE_INSTANTIATE(double)

#undef BRAINAGE_INSTANTIATE

}  // namespace brainage::ag
