#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "nextscale/gemm.hpp"
#include "nextscale/kernels.hpp"
#include "nextscale/tensor.hpp"

namespace nextscale {

enum class Reduction { kSum, kMean };

namespace detail {

[[noreturn]] inline void shape_error(const char* op, const Shape& a,
                                     const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_str(a) + " and " + shape_str(b));
}

inline Shape broadcast_shapes(const char* op, const Shape& a, const Shape& b) {
  const size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (size_t i = 0; i < rank; ++i) {
    const int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) shape_error(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides of `shape` right-aligned into `rank` dims, with 0 on
// broadcast (size-1) dims.
inline std::vector<int64_t> broadcast_strides(const Shape& shape,
                                              const Shape& out) {
  const size_t rank = out.size();
  std::vector<int64_t> strides(rank, 0);
  int64_t s = 1;
  for (size_t i = shape.size(); i-- > 0;) {
    const size_t oi = i + (rank - shape.size());
    strides[oi] = (shape[i] == 1 && out[oi] != 1) ? 0 : s;
    s *= shape[i];
  }
  return strides;
}

// Calls f(out_flat_index, a_offset, b_offset) over every output element.
// Adjacent dims whose strides are jointly contiguous are merged first so
// the innermost loop stays tight.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<int64_t>& sa,
                        const std::vector<int64_t>& sb, F&& f) {
  const int64_t n = shape_numel(out);
  if (out.empty()) {
    if (n > 0) f(0, 0, 0);
    return;
  }
  Shape dims;
  std::vector<int64_t> ca, cb;
  for (size_t d = 0; d < out.size(); ++d) {
    if (!dims.empty() && ca.back() == sa[d] * out[d] &&
        cb.back() == sb[d] * out[d]) {
      dims.back() *= out[d];
      ca.back() = sa[d];
      cb.back() = sb[d];
    } else {
      dims.push_back(out[d]);
      ca.push_back(sa[d]);
      cb.push_back(sb[d]);
    }
  }
  const size_t rank = dims.size();
  const int64_t inner = dims.back();
  const int64_t step_a = ca.back();
  const int64_t step_b = cb.back();
  std::vector<int64_t> idx(rank, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t flat = 0; flat < n; flat += inner) {
    int64_t ia = oa, ib = ob;
    for (int64_t i = 0; i < inner; ++i) {
      f(flat + i, ia, ib);
      ia += step_a;
      ib += step_b;
    }
    for (size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      oa += ca[d];
      ob += cb[d];
      if (idx[d] < dims[d]) break;
      oa -= ca[d] * dims[d];
      ob -= cb[d] * dims[d];
      idx[d] = 0;
      if (d == 0) return;
    }
    if (rank == 1) return;
  }
}

template <typename T, typename ValFn, typename DaFn, typename DbFn>
Tensor<T> binary_elementwise(const char* op, const Tensor<T>& a,
                             const Tensor<T>& b, ValFn val, DaFn da, DbFn db) {
  check_finite(op, a.values());
  check_finite(op, b.values());
  const Shape out_shape = broadcast_shapes(op, a.shape(), b.shape());
  const int64_t n = shape_numel(out_shape);
  std::vector<T> out(static_cast<size_t>(n));
  if (a.shape() == b.shape()) {
    const T* pa = a.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < n; ++i) out[i] = val(pa[i], pb[i]);
  } else {
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    const T* pa = a.data();
    const T* pb = b.data();
    for_each_broadcast(out_shape, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
      out[static_cast<size_t>(o)] = val(pa[ia], pb[ib]);
    });
  }
  auto an = a.node();
  auto bn = b.node();
  Shape ashape = a.shape(), bshape = b.shape(), oshape = out_shape;
  return make_op<T>(
      out_shape, std::move(out), {an, bn},
      [an, bn, ashape, bshape, oshape, da, db](Node<T>& self) {
        const auto sa = broadcast_strides(ashape, oshape);
        const auto sb = broadcast_strides(bshape, oshape);
        const T* pa = an->values.data();
        const T* pb = bn->values.data();
        const T* go = self.grad.data();
        T* ga = nullptr;
        T* gb = nullptr;
        if (an->requires_grad) {
          an->ensure_grad();
          ga = an->grad.data();
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          gb = bn->grad.data();
        }
        for_each_broadcast(oshape, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
          const T g = go[o];
          if (ga) ga[ia] += da(pa[ia], pb[ib], g);
          if (gb) gb[ib] += db(pa[ia], pb[ib], g);
        });
      });
}

template <typename T, typename ValFn, typename DFn>
Tensor<T> unary_elementwise(const char* op, const Tensor<T>& x, ValFn val,
                            DFn dfn) {
  check_finite(op, x.values());
  const int64_t n = x.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* px = x.data();
  for (int64_t i = 0; i < n; ++i) out[i] = val(px[i]);
  auto xn = x.node();
  return make_op<T>(x.shape(), std::move(out), {xn}, [xn, dfn](Node<T>& self) {
    xn->ensure_grad();
    const T* px = xn->values.data();
    const T* go = self.grad.data();
    T* gx = xn->grad.data();
    const int64_t n = static_cast<int64_t>(self.values.size());
    for (int64_t i = 0; i < n; ++i) gx[i] += dfn(px[i], go[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T g) { return g; }, [](T, T, T g) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T g) { return g; }, [](T, T, T g) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T, T y, T g) { return g * y; }, [](T x, T, T g) { return g * x; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary_elementwise<T>(
      "add_scalar", x, [s](T v) { return v + s; }, [](T, T g) { return g; });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  return detail::unary_elementwise<T>(
      "mul_scalar", x, [s](T v) { return v * s; },
      [s](T, T g) { return g * s; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_elementwise<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T g) { return v > T(0) ? g : T(0); });
}

namespace detail {
inline constexpr double kInvSqrt2 = 0.7071067811865475244;
inline constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace detail

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  using detail::kInvSqrt2;
  using detail::kInvSqrt2Pi;
  return detail::unary_elementwise<T>(
      "gelu", x,
      [](T v) {
        return static_cast<T>(0.5 * static_cast<double>(v) *
                              (1.0 + std::erf(static_cast<double>(v) * kInvSqrt2)));
      },
      [](T v, T g) {
        const double xv = static_cast<double>(v);
        const double cdf = 0.5 * (1.0 + std::erf(xv * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xv * xv);
        return static_cast<T>(static_cast<double>(g) * (cdf + xv * pdf));
      });
}

// ---------------------------------------------------------------------------
// shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    detail::shape_error("reshape", x.shape(), new_shape);
  }
  auto xn = x.node();
  return detail::make_op<T>(std::move(new_shape), x.values(), {xn},
                            [xn](detail::Node<T>& self) {
                              xn->ensure_grad();
                              T* gx = xn->grad.data();
                              const T* go = self.grad.data();
                              const int64_t n =
                                  static_cast<int64_t>(self.values.size());
                              for (int64_t i = 0; i < n; ++i) gx[i] += go[i];
                            });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::vector<int64_t> dims) {
  const size_t rank = x.shape().size();
  if (dims.size() != rank) {
    throw std::invalid_argument("permute: order has " +
                                std::to_string(dims.size()) + " dims, tensor " +
                                shape_str(x.shape()));
  }
  Shape out_shape(rank);
  for (size_t i = 0; i < rank; ++i) out_shape[i] = x.shape()[dims[i]];

  std::vector<int64_t> in_strides(rank, 1);
  for (size_t i = rank - 1; i-- > 0;) {
    in_strides[i] = in_strides[i + 1] * x.shape()[i + 1];
  }
  std::vector<int64_t> src_strides(rank);  // stride in source per out dim
  for (size_t i = 0; i < rank; ++i) src_strides[i] = in_strides[dims[i]];

  const int64_t n = x.numel();
  std::vector<T> out(static_cast<size_t>(n));
  std::vector<int64_t> perm_map(static_cast<size_t>(n));
  {
    std::vector<int64_t> idx(rank, 0);
    int64_t src = 0;
    for (int64_t flat = 0; flat < n; ++flat) {
      out[static_cast<size_t>(flat)] = x.data()[src];
      perm_map[static_cast<size_t>(flat)] = src;
      for (size_t d = rank; d-- > 0;) {
        ++idx[d];
        src += src_strides[d];
        if (idx[d] < out_shape[d]) break;
        src -= src_strides[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  auto xn = x.node();
  return detail::make_op<T>(
      std::move(out_shape), std::move(out), {xn},
      [xn, perm_map = std::move(perm_map)](detail::Node<T>& self) {
        xn->ensure_grad();
        T* gx = xn->grad.data();
        const T* go = self.grad.data();
        const int64_t n = static_cast<int64_t>(self.values.size());
        for (int64_t i = 0; i < n; ++i) gx[perm_map[i]] += go[i];
      });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  if (x.dim() != 2) detail::shape_error("transpose", x.shape(), {});
  return permute(x, {1, 0});
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, Shape target) {
  const Shape check = detail::broadcast_shapes("broadcast", x.shape(), target);
  if (check != target) detail::shape_error("broadcast", x.shape(), target);
  Tensor<T> z = Tensor<T>::zeros(target);
  return add(x, z);
}

// Slice `len` indices starting at `start` along `dim`.
template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int64_t dim, int64_t start, int64_t len) {
  const size_t rank = x.shape().size();
  if (dim < 0 || dim >= static_cast<int64_t>(rank) || start < 0 || len < 0 ||
      start + len > x.shape()[dim]) {
    throw std::invalid_argument("narrow: range [" + std::to_string(start) +
                                "," + std::to_string(start + len) +
                                ") out of bounds for dim " +
                                std::to_string(dim) + " of " +
                                shape_str(x.shape()));
  }
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < dim; ++i) outer *= x.shape()[i];
  for (size_t i = dim + 1; i < rank; ++i) inner *= x.shape()[i];
  const int64_t d = x.shape()[dim];

  Shape out_shape = x.shape();
  out_shape[dim] = len;
  std::vector<T> out(static_cast<size_t>(outer * len * inner));
  for (int64_t o = 0; o < outer; ++o) {
    std::copy_n(x.data() + (o * d + start) * inner, len * inner,
                out.data() + o * len * inner);
  }
  auto xn = x.node();
  return detail::make_op<T>(
      std::move(out_shape), std::move(out), {xn},
      [xn, outer, inner, d, start, len](detail::Node<T>& self) {
        xn->ensure_grad();
        T* gx = xn->grad.data();
        const T* go = self.grad.data();
        for (int64_t o = 0; o < outer; ++o) {
          const T* src = go + o * len * inner;
          T* dst = gx + (o * d + start) * inner;
          for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
      });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int64_t dim) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const size_t rank = parts[0].shape().size();
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != rank) {
      detail::shape_error("concat", parts[0].shape(), p.shape());
    }
    for (size_t i = 0; i < rank; ++i) {
      if (static_cast<int64_t>(i) != dim && p.shape()[i] != parts[0].shape()[i]) {
        detail::shape_error("concat", parts[0].shape(), p.shape());
      }
    }
    total += p.shape()[dim];
  }
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < dim; ++i) outer *= parts[0].shape()[i];
  for (size_t i = dim + 1; i < rank; ++i) inner *= parts[0].shape()[i];

  Shape out_shape = parts[0].shape();
  out_shape[dim] = total;
  std::vector<T> out(static_cast<size_t>(outer * total * inner));
  std::vector<typename Tensor<T>::NodePtr> nodes;
  std::vector<int64_t> lens;
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t len = p.shape()[dim];
    for (int64_t o = 0; o < outer; ++o) {
      std::copy_n(p.data() + o * len * inner, len * inner,
                  out.data() + (o * total + off) * inner);
    }
    nodes.push_back(p.node());
    lens.push_back(len);
    off += len;
  }
  return detail::make_op<T>(
      std::move(out_shape), std::move(out), nodes,
      [nodes, lens, outer, inner, total](detail::Node<T>& self) {
        const T* go = self.grad.data();
        int64_t off = 0;
        for (size_t p = 0; p < nodes.size(); ++p) {
          const int64_t len = lens[p];
          if (nodes[p]->requires_grad) {
            nodes[p]->ensure_grad();
            T* gx = nodes[p]->grad.data();
            for (int64_t o = 0; o < outer; ++o) {
              const T* src = go + (o * total + off) * inner;
              T* dst = gx + o * len * inner;
              for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
            }
          }
          off += len;
        }
      });
}

// Stack same-shape tensors into a new leading dim.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  std::vector<Tensor<T>> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    expanded.push_back(reshape(p, std::move(s)));
  }
  return concat(expanded, 0);
}

template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
  return Tensor<T>::from_values(x.shape(), x.values());
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  detail::check_finite("sum", x.values());
  T acc = 0;
  for (T v : x.values()) acc += v;  // fixed row-major order
  auto xn = x.node();
  return detail::make_op<T>({}, {acc}, {xn}, [xn](detail::Node<T>& self) {
    xn->ensure_grad();
    const T g = self.grad[0];
    for (T& v : xn->grad) v += g;
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  if (x.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  return mul_scalar(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// matmul

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.shape()[1] != b.shape()[0]) {
    detail::shape_error("matmul", a.shape(), b.shape());
  }
  detail::check_finite("matmul", a.values());
  detail::check_finite("matmul", b.values());
  const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<T> out(static_cast<size_t>(m * n));
  gemm(false, false, m, n, k, T(1), a.data(), k, b.data(), n, T(0), out.data(), n);
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op<T>(
      {m, n}, std::move(out), {an, bn}, [an, bn, m, n, k](detail::Node<T>& self) {
        const T* go = self.grad.data();
        if (an->requires_grad) {
          an->ensure_grad();
          // dA += dC * B^T
          gemm(false, true, m, k, n, T(1), go, n, bn->values.data(), n, T(1),
               an->grad.data(), k);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          // dB += A^T * dC
          gemm(true, false, k, n, m, T(1), an->values.data(), k, go, n, T(1),
               bn->grad.data(), n);
        }
      });
}

// a: (B,m,k); b: (B,k,n), or (B,n,k) with trans_b.
template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b,
                         bool trans_b = false) {
  if (a.dim() != 3 || b.dim() != 3 || a.shape()[0] != b.shape()[0]) {
    detail::shape_error("batched_matmul", a.shape(), b.shape());
  }
  const int64_t batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
  const int64_t n = trans_b ? b.shape()[1] : b.shape()[2];
  const int64_t bk = trans_b ? b.shape()[2] : b.shape()[1];
  if (bk != k) detail::shape_error("batched_matmul", a.shape(), b.shape());
  detail::check_finite("batched_matmul", a.values());
  detail::check_finite("batched_matmul", b.values());

  std::vector<T> out(static_cast<size_t>(batch * m * n));
  const int64_t ldb = trans_b ? k : n;
  for (int64_t i = 0; i < batch; ++i) {
    gemm(false, trans_b, m, n, k, T(1), a.data() + i * m * k, k,
         b.data() + i * k * n, ldb, T(0), out.data() + i * m * n, n);
  }
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op<T>(
      {batch, m, n}, std::move(out), {an, bn},
      [an, bn, batch, m, n, k, trans_b](detail::Node<T>& self) {
        const int64_t ldb = trans_b ? k : n;
        for (int64_t i = 0; i < batch; ++i) {
          const T* go = self.grad.data() + i * m * n;
          const T* pa = an->values.data() + i * m * k;
          const T* pb = bn->values.data() + i * k * n;
          if (an->requires_grad) {
            an->ensure_grad();
            // no trans: dA += dC*B^T; trans_b: dA += dC*B
            gemm(false, !trans_b, m, k, n, T(1), go, n, pb, ldb, T(1),
                 an->grad.data() + i * m * k, k);
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            T* gb = bn->grad.data() + i * k * n;
            if (trans_b) {
              // C = A*B^T with B (n,k): dB += dC^T * A
              gemm(true, false, n, k, m, T(1), go, n, pa, k, T(1), gb, k);
            } else {
              // dB += A^T * dC
              gemm(true, false, k, n, m, T(1), pa, k, go, n, T(1), gb, n);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// softmax / layernorm / losses

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.dim() < 1) detail::shape_error("softmax", x.shape(), {});
  detail::check_finite("softmax", x.values());
  const int64_t cols = x.shape().back();
  const int64_t rows = x.numel() / cols;
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* px = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = px + r * cols;
    T* orow = out.data() + r * cols;
    T mx = row[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    T denom = 0;
    for (int64_t c = 0; c < cols; ++c) {
      orow[c] = std::exp(row[c] - mx);
      denom += orow[c];
    }
    const T inv = T(1) / denom;
    for (int64_t c = 0; c < cols; ++c) orow[c] *= inv;
  }
  auto xn = x.node();
  return detail::make_op<T>(
      x.shape(), std::move(out), {xn}, [xn, rows, cols](detail::Node<T>& self) {
        xn->ensure_grad();
        const T* y = self.values.data();
        const T* go = self.grad.data();
        T* gx = xn->grad.data();
        for (int64_t r = 0; r < rows; ++r) {
          const T* yr = y + r * cols;
          const T* gr = go + r * cols;
          T dot = 0;
          for (int64_t c = 0; c < cols; ++c) dot += yr[c] * gr[c];
          T* gxr = gx + r * cols;
          for (int64_t c = 0; c < cols; ++c) gxr[c] += yr[c] * (gr[c] - dot);
        }
      });
}

// Normalizes the last dim to zero mean / unit variance; no learned affine
// here, scale and shift are applied by callers.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, T eps = T(1e-5)) {
  if (x.dim() < 1) detail::shape_error("layernorm", x.shape(), {});
  detail::check_finite("layernorm", x.values());
  const int64_t cols = x.shape().back();
  const int64_t rows = x.numel() / cols;
  std::vector<T> out(static_cast<size_t>(x.numel()));
  std::vector<T> inv_std(static_cast<size_t>(rows));
  const T* px = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = px + r * cols;
    T mean = 0;
    for (int64_t c = 0; c < cols; ++c) mean += row[c];
    mean /= static_cast<T>(cols);
    T var = 0;
    for (int64_t c = 0; c < cols; ++c) {
      const T d = row[c] - mean;
      var += d * d;
    }
    var /= static_cast<T>(cols);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = is;
    T* orow = out.data() + r * cols;
    for (int64_t c = 0; c < cols; ++c) orow[c] = (row[c] - mean) * is;
  }
  auto xn = x.node();
  return detail::make_op<T>(
      x.shape(), std::move(out), {xn},
      [xn, rows, cols, inv_std = std::move(inv_std)](detail::Node<T>& self) {
        xn->ensure_grad();
        const T* y = self.values.data();
        const T* go = self.grad.data();
        T* gx = xn->grad.data();
        for (int64_t r = 0; r < rows; ++r) {
          const T* yr = y + r * cols;
          const T* gr = go + r * cols;
          T mean_g = 0, mean_gy = 0;
          for (int64_t c = 0; c < cols; ++c) {
            mean_g += gr[c];
            mean_gy += gr[c] * yr[c];
          }
          mean_g /= static_cast<T>(cols);
          mean_gy /= static_cast<T>(cols);
          const T is = inv_std[static_cast<size_t>(r)];
          T* gxr = gx + r * cols;
          for (int64_t c = 0; c < cols; ++c) {
            gxr[c] += is * (gr[c] - mean_g - yr[c] * mean_gy);
          }
        }
      });
}

// Row gather from a (N,D) table; also serves as embedding lookup.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int64_t>& idx) {
  if (table.dim() != 2) detail::shape_error("gather", table.shape(), {});
  const int64_t n = table.shape()[0], d = table.shape()[1];
  for (int64_t i : idx) {
    if (i < 0 || i >= n) {
      throw std::out_of_range("gather: index " + std::to_string(i) +
                              " out of range [0," + std::to_string(n) + ")");
    }
  }
  std::vector<T> out(idx.size() * static_cast<size_t>(d));
  for (size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(table.data() + idx[r] * d, d, out.data() + r * d);
  }
  auto tn = table.node();
  return detail::make_op<T>(
      {static_cast<int64_t>(idx.size()), d}, std::move(out), {tn},
      [tn, idx, d](detail::Node<T>& self) {
        tn->ensure_grad();
        T* gt = tn->grad.data();
        const T* go = self.grad.data();
        for (size_t r = 0; r < idx.size(); ++r) {
          T* dst = gt + idx[r] * d;
          const T* src = go + r * d;
          for (int64_t c = 0; c < d; ++c) dst[c] += src[c];
        }
      });
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table,
                           const std::vector<int64_t>& ids) {
  return gather_rows(table, ids);
}

// logits: (N,V); targets: N class ids. Numerically stable log-sum-exp.
template <typename T>
Tensor<T> cross_entropy_with_logits(const Tensor<T>& logits,
                                    const std::vector<int64_t>& targets,
                                    Reduction reduction = Reduction::kMean) {
  if (logits.dim() != 2 ||
      logits.shape()[0] != static_cast<int64_t>(targets.size())) {
    throw std::invalid_argument("cross_entropy: logits " +
                                shape_str(logits.shape()) + " vs " +
                                std::to_string(targets.size()) + " targets");
  }
  detail::check_finite("cross_entropy", logits.values());
  const int64_t n = logits.shape()[0], v = logits.shape()[1];
  std::vector<T> probs(static_cast<size_t>(n * v));
  T loss = 0;
  const T* pl = logits.data();
  for (int64_t r = 0; r < n; ++r) {
    const int64_t t = targets[static_cast<size_t>(r)];
    if (t < 0 || t >= v) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) +
                              " out of range [0," + std::to_string(v) + ")");
    }
    const T* row = pl + r * v;
    T mx = row[0];
    for (int64_t c = 1; c < v; ++c) mx = std::max(mx, row[c]);
    T denom = 0;
    T* prow = probs.data() + r * v;
    for (int64_t c = 0; c < v; ++c) {
      prow[c] = std::exp(row[c] - mx);
      denom += prow[c];
    }
    const T inv = T(1) / denom;
    for (int64_t c = 0; c < v; ++c) prow[c] *= inv;
    loss += std::log(denom) + mx - row[t];
  }
  const T scale = reduction == Reduction::kMean ? T(1) / static_cast<T>(n) : T(1);
  loss *= scale;
  auto ln = logits.node();
  return detail::make_op<T>(
      {}, {loss}, {ln},
      [ln, targets, probs = std::move(probs), n, v, scale](detail::Node<T>& self) {
        ln->ensure_grad();
        const T g = self.grad[0] * scale;
        T* gl = ln->grad.data();
        const T* pp = probs.data();
        for (int64_t r = 0; r < n; ++r) {
          T* grow = gl + r * v;
          const T* prow = pp + r * v;
          for (int64_t c = 0; c < v; ++c) grow[c] += g * prow[c];
          grow[targets[static_cast<size_t>(r)]] -= g;
        }
      });
}

// ---------------------------------------------------------------------------
// spatial ops

// x: (N,C,H,W) -> (N,C,oh,ow). Linear in x for every mode.
template <typename T>
Tensor<T> interpolate(const Tensor<T>& x, int64_t oh, int64_t ow,
                      InterpMode mode) {
  if (x.dim() != 4) detail::shape_error("interpolate", x.shape(), {oh, ow});
  detail::check_finite("interpolate", x.values());
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
                w = x.shape()[3];
  const auto rows = kernels::interp_axis<T>(h, oh, mode);
  const auto cols = kernels::interp_axis<T>(w, ow, mode);
  std::vector<T> out(static_cast<size_t>(n * c * oh * ow));
  for (int64_t p = 0; p < n * c; ++p) {
    kernels::interp_plane_forward(x.data() + p * h * w, h, w,
                                  out.data() + p * oh * ow, rows, cols);
  }
  auto xn = x.node();
  return detail::make_op<T>(
      {n, c, oh, ow}, std::move(out), {xn},
      [xn, n, c, h, w, oh, ow, rows, cols](detail::Node<T>& self) {
        xn->ensure_grad();
        for (int64_t p = 0; p < n * c; ++p) {
          kernels::interp_plane_backward(xn->grad.data() + p * h * w, h, w,
                                         self.grad.data() + p * oh * ow, rows,
                                         cols);
        }
      });
}

// x: (N,Cin,H,W); weight: (Cout,Cin,3,3); bias: (Cout). Padding 1.
template <typename T>
Tensor<T> conv3x3(const Tensor<T>& x, const Tensor<T>& weight,
                  const Tensor<T>& bias, int64_t stride = 1) {
  if (x.dim() != 4 || weight.dim() != 4 || weight.shape()[2] != 3 ||
      weight.shape()[3] != 3 || weight.shape()[1] != x.shape()[1]) {
    detail::shape_error("conv3x3", x.shape(), weight.shape());
  }
  if (bias.dim() != 1 || bias.shape()[0] != weight.shape()[0]) {
    detail::shape_error("conv3x3 bias", bias.shape(), weight.shape());
  }
  detail::check_finite("conv3x3", x.values());
  detail::check_finite("conv3x3", weight.values());
  const int64_t n = x.shape()[0], cin = x.shape()[1], h = x.shape()[2],
                w = x.shape()[3];
  const int64_t cout = weight.shape()[0];
  const int64_t oh = (h + 2 - 3) / stride + 1;
  const int64_t ow = (w + 2 - 3) / stride + 1;
  const int64_t ncols = oh * ow;
  const int64_t krows = cin * 9;

  std::vector<T> out(static_cast<size_t>(n * cout * ncols));
  std::vector<T> col(static_cast<size_t>(krows * ncols));
  for (int64_t i = 0; i < n; ++i) {
    kernels::im2col3x3(x.data() + i * cin * h * w, cin, h, w, stride, col.data());
    T* oi = out.data() + i * cout * ncols;
    gemm(false, false, cout, ncols, krows, T(1), weight.data(), krows,
         col.data(), ncols, T(0), oi, ncols);
    for (int64_t co = 0; co < cout; ++co) {
      const T b = bias.data()[co];
      T* row = oi + co * ncols;
      for (int64_t j = 0; j < ncols; ++j) row[j] += b;
    }
  }
  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.node();
  return detail::make_op<T>(
      {n, cout, oh, ow}, std::move(out), {xn, wn, bn},
      [xn, wn, bn, n, cin, h, w, cout, stride, ncols,
       krows](detail::Node<T>& self) {
        std::vector<T> col(static_cast<size_t>(krows * ncols));
        std::vector<T> dcol(static_cast<size_t>(krows * ncols));
        for (int64_t i = 0; i < n; ++i) {
          const T* go = self.grad.data() + i * cout * ncols;
          const bool need_col = wn->requires_grad;
          if (need_col) {
            kernels::im2col3x3(xn->values.data() + i * cin * h * w, cin, h, w,
                               stride, col.data());
          }
          if (wn->requires_grad) {
            wn->ensure_grad();
            // dW += dOut * col^T
            gemm(false, true, cout, krows, ncols, T(1), go, ncols, col.data(),
                 ncols, T(1), wn->grad.data(), krows);
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (int64_t co = 0; co < cout; ++co) {
              T acc = 0;
              const T* row = go + co * ncols;
              for (int64_t j = 0; j < ncols; ++j) acc += row[j];
              bn->grad[static_cast<size_t>(co)] += acc;
            }
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            // dcol = W^T * dOut, scattered back through the patches
            gemm(true, false, krows, ncols, cout, T(1), wn->values.data(),
                 krows, go, ncols, T(0), dcol.data(), ncols);
            kernels::col2im3x3(dcol.data(), cin, h, w, stride,
                               xn->grad.data() + i * cin * h * w);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// composites

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> d = sub(a, b);
  return mean_all(mul(d, d));
}

// x: (N,D) rows times weight (D,M) plus bias (M).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  return add(matmul(x, weight), bias);
}

}  // namespace nextscale
