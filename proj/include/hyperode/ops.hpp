// Copyright 2026 The HyperODE-RCA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Differentiable primitives. Every function records its result on the tape of
// its first argument. Binary elementwise ops broadcast only over leading
// dimensions: the smaller operand's shape must be a suffix of the larger one
// (or hold a single element).

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hyperode/tape.hpp"

namespace hyperode {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kLayerNormEps = 1e-10;

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_d1(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}
inline double silu_d2(double x) {
  const double s = sigmoid(x);
  return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s));
}
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

/// Result shape of a leading-dimension broadcast, or throws.
inline Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (shape_size(b) == 1 || is_suffix(b, a)) return a;
  if (shape_size(a) == 1 || is_suffix(a, b)) return b;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b) +
                   " (only leading-dimension broadcast is supported)");
}

/// Adds g (shape of the broadcast result) into acc, summing over repeats.
inline void reduce_into(Tensor& acc, const Tensor& g) {
  const std::size_t n = acc.size();
  if (n == g.size()) {
    acc += g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) acc[i % n] += g[i];
}

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}

struct AxisSplit {
  std::size_t outer, n, inner;
};
inline AxisSplit split_axis(const Shape& s, int axis) {
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit sp{1, s[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) sp.inner *= s[static_cast<std::size_t>(i)];
  return sp;
}

// C(m,n) += A(m,k) * B(k,n), optional transposes given as strides.
inline void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, bool ta, const double* b,
                 bool tb, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      if (!tb) {
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      }
    }
  }
}

template <typename F, typename G>
Var unary(const char* op, Var x, F f, G dfdx) {
  Tensor y = map(x.value(), f);
  return x.tape->record(op, std::move(y), {x}, [dfdx](BackwardContext& c) {
    const Tensor& xin = c.in(0);
    const Tensor& yout = c.out();
    const Tensor& g = c.grad();
    Tensor& gx = c.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xin[i], yout[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary

inline Var add(Var a, Var b) {
  const Shape out = detail::broadcast_shape("add", a.shape(), b.shape());
  Tensor y(out);
  const Tensor &av = a.value(), &bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i % av.size()] + bv[i % bv.size()];
  return a.tape->record("add", std::move(y), {a, b}, [](BackwardContext& c) {
    if (c.needs(0)) detail::reduce_into(c.grad_in(0), c.grad());
    if (c.needs(1)) detail::reduce_into(c.grad_in(1), c.grad());
  });
}

inline Var sub(Var a, Var b) {
  const Shape out = detail::broadcast_shape("sub", a.shape(), b.shape());
  Tensor y(out);
  const Tensor &av = a.value(), &bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i % av.size()] - bv[i % bv.size()];
  return a.tape->record("sub", std::move(y), {a, b}, [](BackwardContext& c) {
    if (c.needs(0)) detail::reduce_into(c.grad_in(0), c.grad());
    if (c.needs(1)) {
      Tensor neg = c.grad();
      neg *= -1.0;
      detail::reduce_into(c.grad_in(1), neg);
    }
  });
}

inline Var mul(Var a, Var b) {
  const Shape out = detail::broadcast_shape("mul", a.shape(), b.shape());
  Tensor y(out);
  const Tensor &av = a.value(), &bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i % av.size()] * bv[i % bv.size()];
  return a.tape->record("mul", std::move(y), {a, b}, [](BackwardContext& c) {
    const Tensor &g = c.grad(), &av = c.in(0), &bv = c.in(1);
    if (c.needs(0)) {
      Tensor t(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) t[i] = g[i] * bv[i % bv.size()];
      detail::reduce_into(c.grad_in(0), t);
    }
    if (c.needs(1)) {
      Tensor t(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) t[i] = g[i] * av[i % av.size()];
      detail::reduce_into(c.grad_in(1), t);
    }
  });
}

inline Var div(Var a, Var b) {
  const Shape out = detail::broadcast_shape("div", a.shape(), b.shape());
  const Tensor &av = a.value(), &bv = b.value();
  for (double v : bv.data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  Tensor y(out);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i % av.size()] / bv[i % bv.size()];
  return a.tape->record("div", std::move(y), {a, b}, [](BackwardContext& c) {
    const Tensor &g = c.grad(), &av = c.in(0), &bv = c.in(1);
    if (c.needs(0)) {
      Tensor t(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) t[i] = g[i] / bv[i % bv.size()];
      detail::reduce_into(c.grad_in(0), t);
    }
    if (c.needs(1)) {
      Tensor t(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double d = bv[i % bv.size()];
        t[i] = -g[i] * av[i % av.size()] / (d * d);
      }
      detail::reduce_into(c.grad_in(1), t);
    }
  });
}

/// Elementwise max; ties split the gradient evenly.
inline Var maximum(Var a, Var b) {
  const Shape out = detail::broadcast_shape("maximum", a.shape(), b.shape());
  Tensor y(out);
  const Tensor &av = a.value(), &bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(av[i % av.size()], bv[i % bv.size()]);
  return a.tape->record("maximum", std::move(y), {a, b}, [](BackwardContext& c) {
    const Tensor &g = c.grad(), &av = c.in(0), &bv = c.in(1);
    Tensor ta(g.shape()), tb(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = av[i % av.size()], z = bv[i % bv.size()];
      const double wa = x > z ? 1.0 : (x < z ? 0.0 : 0.5);
      ta[i] = g[i] * wa;
      tb[i] = g[i] * (1.0 - wa);
    }
    if (c.needs(0)) detail::reduce_into(c.grad_in(0), ta);
    if (c.needs(1)) detail::reduce_into(c.grad_in(1), tb);
  });
}

inline Var scale(Var x, double s) {
  return detail::unary("scale", x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}
inline Var add_scalar(Var x, double s) {
  return detail::unary("add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}
inline Var neg(Var x) { return scale(x, -1.0); }

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator+(Var a, double s) { return add_scalar(a, s); }
inline Var operator-(Var a, double s) { return add_scalar(a, -s); }

// ---------------------------------------------------------------------------
// Elementwise unary

inline Var exp(Var x) {
  return detail::unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw DomainError("log: argument must be positive, got " + std::to_string(v));
  }
  return detail::unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var sqrt(Var x) {
  for (double v : x.value().data()) {
    if (v < 0.0) throw DomainError("sqrt: negative argument");
  }
  return detail::unary("sqrt", x, [](double v) { return std::sqrt(v); },
                       [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

inline Var square(Var x) {
  return detail::unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Var tanh(Var x) {
  return detail::unary("tanh", x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var x) {
  return detail::unary("sigmoid", x, detail::sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Var silu(Var x) { return detail::unary("silu", x, detail::silu, [](double v, double) { return detail::silu_d1(v); }); }

/// Derivative of SiLU, itself differentiable (used for on-tape Jacobian-vector products).
inline Var silu_grad(Var x) {
  return detail::unary("silu_grad", x, detail::silu_d1, [](double v, double) { return detail::silu_d2(v); });
}

inline Var relu(Var x) {
  return detail::unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(Var x, double slope = kLeakySlope) {
  return detail::unary("leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
                       [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

inline Var softplus(Var x) {
  return detail::unary("softplus", x, detail::softplus, [](double v, double) { return detail::sigmoid(v); });
}

inline Var abs(Var x) {
  return detail::unary("abs", x, [](double v) { return std::abs(v); },
                       [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record("sum", Tensor::scalar(s), {x}, [](BackwardContext& c) {
    const double g = c.grad()[0];
    Tensor& gx = c.grad_in(0);
    for (double& v : gx.data()) v += g;
  });
}

inline Var mean(Var x) {
  const double n = static_cast<double>(x.size());
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / n);
}

/// Sum along one axis; the axis is removed from the shape.
inline Var sum(Var x, int axis) {
  const auto sp = detail::split_axis(x.shape(), axis);
  Shape out = x.shape();
  out.erase(out.begin() + (axis < 0 ? axis + static_cast<int>(out.size()) : axis));
  Tensor y(out);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.n; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i) y[o * sp.inner + i] += xv[(o * sp.n + k) * sp.inner + i];
  return x.tape->record("sum_axis", std::move(y), {x}, [sp](BackwardContext& c) {
    const Tensor& g = c.grad();
    Tensor& gx = c.grad_in(0);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.n; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i) gx[(o * sp.n + k) * sp.inner + i] += g[o * sp.inner + i];
  });
}

inline Var mean(Var x, int axis) {
  const auto sp = detail::split_axis(x.shape(), axis);
  return scale(sum(x, axis), 1.0 / static_cast<double>(sp.n));
}

inline Var l1_norm(Var x) { return sum(abs(x)); }

inline Var l2_norm(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v * v;
  return x.tape->record("l2_norm", Tensor::scalar(std::sqrt(s)), {x}, [](BackwardContext& c) {
    const double n = c.out()[0];
    if (n == 0.0) return;
    const double g = c.grad()[0] / n;
    const Tensor& xv = c.in(0);
    Tensor& gx = c.grad_in(0);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g * xv[i];
  });
}

// ---------------------------------------------------------------------------
// Normalisations

/// Softmax along an axis. Each slice sums to one.
inline Var softmax(Var x, int axis = -1) {
  const auto sp = detail::split_axis(x.shape(), axis);
  const Tensor& xv = x.value();
  Tensor y(x.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto idx = [&](std::size_t k) { return (o * sp.n + k) * sp.inner + i; };
      double m = -INFINITY;
      for (std::size_t k = 0; k < sp.n; ++k) m = std::max(m, xv[idx(k)]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) z += (y[idx(k)] = std::exp(xv[idx(k)] - m));
      for (std::size_t k = 0; k < sp.n; ++k) y[idx(k)] /= z;
    }
  }
  return x.tape->record("softmax", std::move(y), {x}, [sp](BackwardContext& c) {
    const Tensor &g = c.grad(), &y = c.out();
    Tensor& gx = c.grad_in(0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto idx = [&](std::size_t k) { return (o * sp.n + k) * sp.inner + i; };
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.n; ++k) dot += g[idx(k)] * y[idx(k)];
        for (std::size_t k = 0; k < sp.n; ++k) gx[idx(k)] += y[idx(k)] * (g[idx(k)] - dot);
      }
    }
  });
}

/// Softmax along the last axis restricted to entries where mask != 0. Masked
/// entries are exactly zero; a fully masked row is all zeros.
inline Var masked_softmax(Var x, const Tensor& mask) {
  if (mask.shape() != x.shape()) {
    throw ShapeError("masked_softmax: mask " + shape_str(mask.shape()) + " vs input " + shape_str(x.shape()));
  }
  const std::size_t n = x.value().cols();
  const std::size_t rows = n ? x.size() / n : 0;
  const Tensor& xv = x.value();
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double m = -INFINITY;
    for (std::size_t k = 0; k < n; ++k)
      if (mask[r * n + k] != 0.0) m = std::max(m, xv[r * n + k]);
    if (m == -INFINITY) continue;
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (mask[r * n + k] != 0.0) z += (y[r * n + k] = std::exp(xv[r * n + k] - m));
    for (std::size_t k = 0; k < n; ++k) y[r * n + k] /= z;
  }
  return x.tape->record("masked_softmax", std::move(y), {x}, [n, rows](BackwardContext& c) {
    const Tensor &g = c.grad(), &y = c.out();
    Tensor& gx = c.grad_in(0);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k) dot += g[r * n + k] * y[r * n + k];
      for (std::size_t k = 0; k < n; ++k) gx[r * n + k] += y[r * n + k] * (g[r * n + k] - dot);
    }
  });
}

/// Layer normalisation over the last axis, no affine terms.
inline Var layer_norm(Var x, double eps = kLayerNormEps) {
  const std::size_t n = x.value().cols();
  const std::size_t rows = x.size() / n;
  const Tensor& xv = x.value();
  Tensor y(x.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t k = 0; k < n; ++k) mu += xv[r * n + k];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t k = 0; k < n; ++k) var += (xv[r * n + k] - mu) * (xv[r * n + k] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < n; ++k) y[r * n + k] = (xv[r * n + k] - mu) * inv_std[r];
  }
  return x.tape->record("layer_norm", std::move(y), {x}, [n, rows, inv_std](BackwardContext& c) {
    const Tensor &g = c.grad(), &y = c.out();
    Tensor& gx = c.grad_in(0);
    const double dn = static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r) {
      double mg = 0.0, mgy = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        mg += g[r * n + k];
        mgy += g[r * n + k] * y[r * n + k];
      }
      mg /= dn;
      mgy /= dn;
      for (std::size_t k = 0; k < n; ++k)
        gx[r * n + k] += inv_std[r] * (g[r * n + k] - mg - y[r * n + k] * mgy);
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

/// Matrix product for (m,k)x(k,n), (m,k)x(k) and (k)x(k,n).
inline Var matmul(Var a, Var b) {
  const Shape &as = a.shape(), &bs = b.shape();
  std::size_t m, k, n;
  Shape out;
  if (as.size() == 2 && bs.size() == 2 && as[1] == bs[0]) {
    m = as[0], k = as[1], n = bs[1];
    out = {m, n};
  } else if (as.size() == 2 && bs.size() == 1 && as[1] == bs[0]) {
    m = as[0], k = as[1], n = 1;
    out = {m};
  } else if (as.size() == 1 && bs.size() == 2 && as[0] == bs[0]) {
    m = 1, k = as[0], n = bs[1];
    out = {n};
  } else {
    throw ShapeError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  }
  Tensor y(out);
  detail::gemm(m, n, k, a.value().ptr(), false, b.value().ptr(), false, y.ptr());
  return a.tape->record("matmul", std::move(y), {a, b}, [m, k, n](BackwardContext& c) {
    const Tensor& g = c.grad();
    // dA(m,k) = G(m,n) B^T ; dB(k,n) = A^T G
    if (c.needs(0)) detail::gemm(m, k, n, g.ptr(), false, c.in(1).ptr(), true, c.grad_in(0).ptr());
    if (c.needs(1)) detail::gemm(k, n, m, c.in(0).ptr(), true, g.ptr(), false, c.grad_in(1).ptr());
  });
}

inline Var transpose(Var x) {
  const Shape& s = x.shape();
  if (s.size() != 2) throw ShapeError("transpose expects a matrix, got " + shape_str(s));
  const std::size_t r = s[0], cdim = s[1];
  Tensor y(Shape{cdim, r});
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < cdim; ++j) y[j * r + i] = xv[i * cdim + j];
  return x.tape->record("transpose", std::move(y), {x}, [r, cdim](BackwardContext& c) {
    const Tensor& g = c.grad();
    Tensor& gx = c.grad_in(0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < cdim; ++j) gx[i * cdim + j] += g[j * r + i];
  });
}

inline Var reshape(Var x, Shape s) {
  Tensor y = x.value().reshaped(std::move(s));
  return x.tape->record("reshape", std::move(y), {x}, [](BackwardContext& c) { c.grad_in(0) += c.grad(); });
}

/// Concatenation along an axis; all other dims must agree.
inline Var concat(const std::vector<Var>& xs, int axis = 0) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  Shape out = xs[0].shape();
  const int r = static_cast<int>(out.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
  const auto ax = static_cast<std::size_t>(axis);
  std::size_t total = 0;
  for (const Var& v : xs) {
    const Shape& s = v.shape();
    if (s.size() != out.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != ax && s[i] != out[i])
        throw ShapeError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(out));
    total += s[ax];
  }
  out[ax] = total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= out[i];
  for (std::size_t i = ax + 1; i < out.size(); ++i) inner *= out[i];
  Tensor y(out);
  std::vector<std::size_t> offs;
  std::size_t off = 0;
  for (const Var& v : xs) {
    offs.push_back(off);
    const std::size_t len = v.shape()[ax];
    const Tensor& xv = v.value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(xv.ptr() + o * len * inner, len * inner, y.ptr() + (o * total + off) * inner);
    off += len;
  }
  return xs[0].tape->record("concat", std::move(y), xs, [offs, outer, inner, total, ax](BackwardContext& c) {
    const Tensor& g = c.grad();
    for (std::size_t k = 0; k < offs.size(); ++k) {
      if (!c.needs(k)) continue;
      const std::size_t len = c.in(k).shape()[ax];
      Tensor& gx = c.grad_in(k);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < len * inner; ++j) gx[o * len * inner + j] += g[(o * total + offs[k]) * inner + j];
    }
  });
}

/// Elements [begin, end) along an axis.
inline Var slice(Var x, int axis, std::size_t begin, std::size_t end) {
  const auto sp = detail::split_axis(x.shape(), axis);
  if (begin > end || end > sp.n) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                     shape_str(x.shape()));
  }
  Shape out = x.shape();
  const std::size_t ax = static_cast<std::size_t>(axis < 0 ? axis + static_cast<int>(out.size()) : axis);
  out[ax] = end - begin;
  const std::size_t len = end - begin;
  Tensor y(out);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(xv.ptr() + (o * sp.n + begin) * sp.inner, len * sp.inner, y.ptr() + o * len * sp.inner);
  return x.tape->record("slice", std::move(y), {x}, [sp, begin, len](BackwardContext& c) {
    const Tensor& g = c.grad();
    Tensor& gx = c.grad_in(0);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < len * sp.inner; ++j) gx[(o * sp.n + begin) * sp.inner + j] += g[o * len * sp.inner + j];
  });
}

/// Row lookup: out[k] = table[idx[k]]. Gradient scatters back.
inline Var gather_rows(Var table, const std::vector<std::size_t>& idx) {
  const Shape& s = table.shape();
  if (s.size() != 2) throw ShapeError("gather_rows expects a matrix");
  const std::size_t d = s[1];
  Tensor y(Shape{idx.size(), d});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= s[0]) {
      throw ShapeError("gather_rows: index " + std::to_string(idx[k]) + " out of range " + std::to_string(s[0]));
    }
    std::copy_n(table.value().ptr() + idx[k] * d, d, y.ptr() + k * d);
  }
  return table.tape->record("gather_rows", std::move(y), {table}, [idx, d](BackwardContext& c) {
    const Tensor& g = c.grad();
    Tensor& gt = c.grad_in(0);
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t j = 0; j < d; ++j) gt[idx[k] * d + j] += g[k * d + j];
  });
}

/// Affine map y = W x + b for a vector x, or X W^T + b for row-stacked X.
inline Var linear(Var x, Var w, Var b) {
  if (x.shape().size() == 1) return add(matmul(w, x), b);
  return add(matmul(x, transpose(w)), b);
}
inline Var linear(Var x, Var w) {
  if (x.shape().size() == 1) return matmul(w, x);
  return matmul(x, transpose(w));
}

}  // namespace hyperode
