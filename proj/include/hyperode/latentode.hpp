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

// Continuous-time latent dynamics: a Fourier-time-encoded MLP vector field,
// an adaptive Dormand-Prince 5(4) integrator, GRU jumps at observation times,
// adjoint-sensitivity gradients and velocity / acceleration diagnostics.

#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperode/ops.hpp"
#include "hyperode/params.hpp"
#include "hyperode/rng.hpp"

namespace hyperode::latentode {

/// The integrator shrank its step below 1e-12 of the interval.
class StiffnessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4)

struct SolverOptions {
  double rtol = 1e-6;
  double atol = 1e-8;
  std::size_t max_steps = 200000;
  /// Trailing components that f never reads (pure quadratures). Their stage
  /// arguments are not assembled; results are unchanged.
  std::size_t quadrature_tail = 0;
};

struct StepRecord {
  double t;
  double h;
  double error;
  bool accepted;
};

struct Solution {
  std::vector<double> y;
  std::vector<StepRecord> steps;
  std::size_t evaluations = 0;
  std::size_t accepted() const {
    std::size_t n = 0;
    for (const auto& s : steps) n += s.accepted;
    return n;
  }
};

using Rhs = std::function<void(double t, const std::vector<double>& y, std::vector<double>& dydt)>;

namespace tableau {
inline constexpr std::array<double, 7> c{0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
inline constexpr double a[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
// 5th-order weights equal the last stage row (FSAL); 4th-order embedded weights below.
inline constexpr std::array<double, 7> b{35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0.0};
inline constexpr std::array<double, 7> b_star{5179.0 / 57600, 0.0,         7571.0 / 16695, 393.0 / 640,
                                              -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};
}  // namespace tableau

namespace detail {

inline double scaled_rms(const std::vector<double>& v, const std::vector<double>& y0, const std::vector<double>& y1,
                         const SolverOptions& o) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double sc = o.atol + o.rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    s += (v[i] / sc) * (v[i] / sc);
  }
  return std::sqrt(s / static_cast<double>(v.size()));
}

inline double initial_step(const Rhs& f, double t0, const std::vector<double>& y0, const std::vector<double>& f0,
                           double dir, const SolverOptions& o, std::size_t& nfev) {
  const double d0 = scaled_rms(y0, y0, y0, o);
  const double d1 = scaled_rms(f0, y0, y0, o);
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  std::vector<double> y1(y0.size()), f1(y0.size());
  for (std::size_t i = 0; i < y0.size(); ++i) y1[i] = y0[i] + dir * h0 * f0[i];
  f(t0 + dir * h0, y1, f1);
  ++nfev;
  std::vector<double> df(y0.size());
  for (std::size_t i = 0; i < y0.size(); ++i) df[i] = f1[i] - f0[i];
  const double d2 = scaled_rms(df, y0, y0, o) / h0;
  const double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / std::max(d1, d2), 0.2);
  return std::min(100.0 * h0, h1);
}

}  // namespace detail

/// Integrates dy/dt = f(t, y) from t0 to t1 (either direction) with the
/// Dormand-Prince 5(4) pair and PI step-size control. Error norm: RMS of
/// embedded-error components scaled by atol + rtol * max(|y_old|, |y_new|).
inline Solution dopri5(const Rhs& f, std::vector<double> y0, double t0, double t1, const SolverOptions& o = {}) {
  if (!(o.rtol > 0.0) || !(o.atol > 0.0)) throw std::invalid_argument("dopri5: tolerances must be positive");
  Solution sol;
  if (t1 == t0 || y0.empty()) {
    sol.y = std::move(y0);
    return sol;
  }
  constexpr double kSafety = 0.9, kMinFactor = 0.2, kMaxFactor = 5.0;
  constexpr double kAlpha = 0.7 / 5.0, kBeta = 0.4 / 5.0;
  const double span = std::abs(t1 - t0);
  const double dir = t1 > t0 ? 1.0 : -1.0;
  const std::size_t n = y0.size();
  if (o.quadrature_tail > n) throw std::invalid_argument("dopri5: quadrature tail longer than state");
  const std::size_t active = n - o.quadrature_tail;

  std::vector<std::vector<double>> k(7, std::vector<double>(n));
  std::vector<double> y = std::move(y0), ytmp(n), ynew(n), err(n);
  f(t0, y, k[0]);
  sol.evaluations = 1;
  double h = std::min(detail::initial_step(f, t0, y, k[0], dir, o, sol.evaluations), span);
  double t = t0;
  double err_prev = 1e-4;
  bool last_rejected = false;

  while (dir * (t1 - t) > 0.0) {
    if (sol.steps.size() >= o.max_steps) throw StiffnessError("dopri5: step budget exhausted");
    if (h < 1e-12 * span) throw StiffnessError("dopri5: step size underflow at t=" + std::to_string(t));
    bool final_step = false;
    if (h >= dir * (t1 - t)) {
      h = dir * (t1 - t);
      final_step = true;
    }
    const double hs = dir * h;
    for (int s = 1; s < 7; ++s) {
      for (std::size_t i = 0; i < active; ++i) {
        double acc = 0.0;
        for (int j = 0; j < s; ++j) acc += tableau::a[s][j] * k[j][i];
        ytmp[i] = y[i] + hs * acc;
      }
      f(t + tableau::c[s] * hs, ytmp, k[s]);
      ++sol.evaluations;
    }
    // The stage-7 argument is the 5th-order solution.
    std::copy(ytmp.begin(), ytmp.begin() + static_cast<std::ptrdiff_t>(active), ynew.begin());
    for (std::size_t i = 0; i < n; ++i) {
      double e = 0.0;
      for (int j = 0; j < 7; ++j) e += (tableau::b[j] - tableau::b_star[j]) * k[j][i];
      err[i] = hs * e;
      if (i >= active) {
        double acc = 0.0;
        for (int j = 0; j < 6; ++j) acc += tableau::b[j] * k[j][i];
        ynew[i] = y[i] + hs * acc;
      }
    }
    const double en = detail::scaled_rms(err, y, ynew, o);
    if (en <= 1.0) {
      sol.steps.push_back({t, hs, en, true});
      t = final_step ? t1 : t + hs;
      y.swap(ynew);
      k[0].swap(k[6]);
      double fac = en == 0.0 ? kMaxFactor : kSafety * std::pow(en, -kAlpha) * std::pow(err_prev, kBeta);
      fac = std::clamp(fac, kMinFactor, last_rejected ? 1.0 : kMaxFactor);
      h *= fac;
      err_prev = std::max(en, 1e-4);
      last_rejected = false;
    } else {
      sol.steps.push_back({t, hs, en, false});
      h *= std::max(kMinFactor, kSafety * std::pow(en, -0.2));
      last_rejected = true;
    }
  }
  sol.y = std::move(y);
  return sol;
}

// ---------------------------------------------------------------------------
// Time encoding and vector field

/// [cos(2 pi B t), sin(2 pi B t)]
inline Tensor time_encoding(double t, const Tensor& B) {
  const std::size_t m = B.size();
  Tensor g(Shape{2 * m});
  for (std::size_t i = 0; i < m; ++i) {
    const double w = 2.0 * std::numbers::pi * B[i] * t;
    g[i] = std::cos(w);
    g[m + i] = std::sin(w);
  }
  return g;
}

struct Dims {
  std::size_t latent = 64;
  std::size_t hidden = 128;
  std::size_t time_enc = 16;
  std::size_t input = 128;
};

/// Plain-value copy of the vector-field weights for use inside the solver.
struct FieldWeights {
  Tensor W1, b1, W2, b2, B;

  std::size_t latent() const { return W2.rows(); }
  std::size_t hidden() const { return W2.cols(); }
  std::size_t in_dim() const { return W1.cols(); }

  /// Hidden pre-activation for (z, t); also returns the concatenated input.
  void preact(const double* z, double t, std::vector<double>& in, std::vector<double>& pre) const {
    const std::size_t d = latent(), m = B.size(), dh = hidden(), di = in_dim();
    in.resize(di);
    std::copy_n(z, d, in.begin());
    for (std::size_t i = 0; i < m; ++i) {
      const double w = 2.0 * std::numbers::pi * B[i] * t;
      in[d + i] = std::cos(w);
      in[d + m + i] = std::sin(w);
    }
    pre.assign(b1.data().begin(), b1.data().end());
    for (std::size_t r = 0; r < dh; ++r) {
      const double* row = W1.ptr() + r * di;
      double s = 0.0;
      for (std::size_t c = 0; c < di; ++c) s += row[c] * in[c];
      pre[r] += s;
    }
  }

  void eval(const double* z, double t, double* out) const {
    std::vector<double> in, pre;
    preact(z, t, in, pre);
    const std::size_t d = latent(), dh = hidden();
    for (double& v : pre) v = ops_silu(v);
    for (std::size_t r = 0; r < d; ++r) {
      const double* row = W2.ptr() + r * dh;
      double s = b2[r];
      for (std::size_t c = 0; c < dh; ++c) s += row[c] * pre[c];
      out[r] = s;
    }
  }

  std::vector<double> eval(const std::vector<double>& z, double t) const {
    std::vector<double> out(latent());
    eval(z.data(), t, out.data());
    return out;
  }

  std::size_t param_count() const { return W1.size() + b1.size() + W2.size() + b2.size(); }

  /// Vector-Jacobian products of a^T f(z, t): writes a^T df/dz into gz and the
  /// parameter cotangents, flattened as [W1, b1, W2, b2], into gp.
  void vjp(const double* z, double t, const double* a, double* gz, double* gp) const {
    double* gW1 = gp;
    double* gb1 = gW1 + W1.size();
    double* gW2 = gb1 + b1.size();
    double* gb2 = gW2 + W2.size();
    vjp(z, t, a, gz, gW1, gb1, gW2, gb2);
  }

  /// Splits a flat [W1, b1, W2, b2] buffer into shaped tensors.
  std::array<Tensor, 4> unflatten(const std::vector<double>& flat) const {
    std::array<Tensor, 4> out;
    std::size_t off = 0;
    const Tensor* like[4] = {&W1, &b1, &W2, &b2};
    for (int i = 0; i < 4; ++i) {
      const auto first = flat.begin() + static_cast<std::ptrdiff_t>(off);
      out[i] = Tensor(like[i]->shape(), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(like[i]->size())));
      off += like[i]->size();
    }
    return out;
  }

  void vjp(const double* z, double t, const double* a, double* gz, double* gW1, double* gb1, double* gW2,
           double* gb2) const {
    std::vector<double> in, pre;
    preact(z, t, in, pre);
    const std::size_t d = latent(), dh = hidden(), di = in_dim();
    std::vector<double> gpre(dh, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
      const double* row = W2.ptr() + r * dh;
      for (std::size_t c = 0; c < dh; ++c) gpre[c] += row[c] * a[r];
    }
    for (std::size_t c = 0; c < dh; ++c) {
      const double s = ops_silu(pre[c]);
      for (std::size_t r = 0; r < d; ++r) gW2[r * dh + c] = a[r] * s;
      gpre[c] *= hyperode::detail::silu_d1(pre[c]);
    }
    for (std::size_t r = 0; r < d; ++r) gb2[r] = a[r];
    std::fill_n(gz, d, 0.0);
    for (std::size_t r = 0; r < dh; ++r) {
      gb1[r] = gpre[r];
      const double* row = W1.ptr() + r * di;
      double* grow = gW1 + r * di;
      for (std::size_t c = 0; c < di; ++c) grow[c] = gpre[r] * in[c];
      for (std::size_t c = 0; c < d; ++c) gz[c] += row[c] * gpre[r];
    }
  }

 private:
  static double ops_silu(double x) { return hyperode::detail::silu(x); }
};

/// On-tape handles for the vector field. B is a constant (frozen) node.
struct FieldParams {
  Var W1, b1, W2, b2, B;

  static FieldParams bind(const Bound& b, const std::string& prefix = "latentode") {
    return {b.get(prefix, "W1"), b.get(prefix, "b1"), b.get(prefix, "W2"), b.get(prefix, "b2"), b.get(prefix, "B")};
  }
  FieldWeights weights() const { return {W1.value(), b1.value(), W2.value(), b2.value(), B.value()}; }
};

struct GruParams {
  Var W_xr, W_hr, b_r, W_xu, W_hu, b_u, W_xz, W_hz, b_z;

  static GruParams bind(const Bound& b, const std::string& prefix = "latentode.gru") {
    return {b.get(prefix, "W_xr"), b.get(prefix, "W_hr"), b.get(prefix, "b_r"),
            b.get(prefix, "W_xu"), b.get(prefix, "W_hu"), b.get(prefix, "b_u"),
            b.get(prefix, "W_xz"), b.get(prefix, "W_hz"), b.get(prefix, "b_z")};
  }
};

inline void init_params(ParamStore& store, const Dims& d, SeededRng& rng, const std::string& prefix = "latentode") {
  if (d.time_enc % 2 != 0) throw std::invalid_argument("time encoding width must be even");
  store.add(prefix + ".W1", glorot(rng, d.hidden, d.latent + d.time_enc));
  store.add(prefix + ".b1", Tensor(Shape{d.hidden}));
  store.add(prefix + ".W2", glorot(rng, d.latent, d.hidden));
  store.add(prefix + ".b2", Tensor(Shape{d.latent}));
  store.add(prefix + ".B", sample(rng, Distribution::kNormal, {d.time_enc / 2}), /*frozen=*/true);
  const std::string g = prefix + ".gru";
  for (const char* gate : {"r", "u", "z"}) {
    store.add(g + ".W_x" + gate, glorot(rng, d.latent, d.input));
    store.add(g + ".W_h" + gate, glorot(rng, d.latent, d.latent));
    store.add(g + ".b_" + gate, Tensor(Shape{d.latent}));
  }
}

/// W2 SiLU(W1 [z ; gamma(t)] + b1) + b2 on the tape.
inline Var vector_field(Var z, double t, const FieldParams& p) {
  Var in = concat({z, z.tape->constant(time_encoding(t, p.B.value()))}, 0);
  return add(matmul(p.W2, silu(add(matmul(p.W1, in), p.b1))), p.b2);
}

inline Var gru_update(Var x, Var z, const GruParams& p) {
  Var r = sigmoid(add(add(matmul(p.W_xr, x), matmul(p.W_hr, z)), p.b_r));
  Var u = sigmoid(add(add(matmul(p.W_xu, x), matmul(p.W_hu, z)), p.b_u));
  Var cand = tanh(add(add(matmul(p.W_xz, x), matmul(p.W_hz, mul(r, z))), p.b_z));
  Var one = z.tape->scalar(1.0);
  return add(mul(sub(one, u), z), mul(u, cand));
}

// ---------------------------------------------------------------------------
// Segments: forward solve with adjoint or direct gradients

enum class GradientMode { kAdjoint, kDirect };

struct AdjointResult {
  std::vector<double> z0;      // reconstructed initial state
  std::vector<double> a0;      // dL/dz(t0)
  std::vector<double> params;  // dL/dtheta, flattened in the field's order
  Solution solve;
};

/// Solves the augmented system [z, a, g] backward from t1 to t0 given z(t1)
/// and a(t1) = dL/dz(t1):
///   dz/dt = f,  da/dt = -a^T df/dz,  dg/dt = -a^T df/dtheta.
/// Field needs latent(), param_count(), eval(z, t, out) and
/// vjp(z, t, a, gz, gparams) on raw buffers.
template <class Field>
AdjointResult adjoint_segment(const Field& w, const std::vector<double>& z1, const std::vector<double>& a1,
                              double t0, double t1, const SolverOptions& o) {
  const std::size_t d = w.latent(), off_a = d, off_p = 2 * d, total = off_p + w.param_count();
  if (z1.size() != d || a1.size() != d) throw ShapeError("adjoint_segment: state size mismatch");
  std::vector<double> y(total, 0.0);
  std::copy(z1.begin(), z1.end(), y.begin());
  std::copy(a1.begin(), a1.end(), y.begin() + static_cast<std::ptrdiff_t>(off_a));
  std::vector<double> neg_a(d);
  Rhs rhs = [&](double t, const std::vector<double>& s, std::vector<double>& ds) {
    ds.resize(total);
    w.eval(s.data(), t, ds.data());
    // da/dt = -a^T df/dz and dg/dt = -a^T df/dtheta: a VJP with -a.
    for (std::size_t i = 0; i < d; ++i) neg_a[i] = -s[off_a + i];
    w.vjp(s.data(), t, neg_a.data(), ds.data() + off_a, ds.data() + off_p);
  };
  SolverOptions oq = o;
  oq.quadrature_tail = w.param_count();  // parameter sensitivities never feed back
  AdjointResult r;
  r.solve = dopri5(rhs, std::move(y), t1, t0, oq);
  const auto& s = r.solve.y;
  auto at = [&](std::size_t off) { return s.begin() + static_cast<std::ptrdiff_t>(off); };
  r.z0.assign(at(0), at(d));
  r.a0.assign(at(off_a), at(off_p));
  r.params.assign(at(off_p), s.end());
  return r;
}

/// z(t1) from z(t0). In adjoint mode the result is one tape node whose
/// backward runs adjoint_segment; in direct mode every accepted solver step
/// is replayed with tape primitives.
inline Var integrate(Var z0, const FieldParams& p, double t0, double t1, const SolverOptions& o,
                     GradientMode mode, std::vector<StepRecord>* log = nullptr) {
  if (t1 == t0) return z0;
  const FieldWeights w = p.weights();
  Rhs rhs = [&w](double t, const std::vector<double>& y, std::vector<double>& dy) {
    dy.resize(y.size());
    w.eval(y.data(), t, dy.data());
  };
  Solution sol = dopri5(rhs, z0.value().data(), t0, t1, o);
  if (log) log->insert(log->end(), sol.steps.begin(), sol.steps.end());

  Tape& tape = *z0.tape;
  if (mode == GradientMode::kAdjoint) {
    return tape.record("ode_segment", Tensor::vector(sol.y), {z0, p.W1, p.b1, p.W2, p.b2},
                       [w, t0, t1, o](BackwardContext& c) {
                         const auto& z1 = c.out().data();
                         AdjointResult r = adjoint_segment(w, z1, c.grad().data(), t0, t1, o);
                         if (c.needs(0)) c.grad_in(0) += Tensor::vector(r.a0);
                         const auto g = w.unflatten(r.params);
                         for (int i = 0; i < 4; ++i)
                           if (c.needs(i + 1)) c.grad_in(i + 1) += g[static_cast<std::size_t>(i)];
                       });
  }
  Var y = z0;
  for (const auto& st : sol.steps) {
    if (!st.accepted) continue;
    std::array<Var, 7> k;
    k[0] = vector_field(y, st.t, p);
    for (int s = 1; s < 7; ++s) {
      Var acc = scale(k[0], tableau::a[s][0]);
      for (int j = 1; j < s; ++j)
        if (tableau::a[s][j] != 0.0) acc = add(acc, scale(k[j], tableau::a[s][j]));
      Var ys = add(y, scale(acc, st.h));
      if (s == 6) {
        y = ys;
        break;
      }
      k[s] = vector_field(ys, st.t + tableau::c[s] * st.h, p);
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// ODE-RNN encoder

struct Trajectory {
  std::vector<double> times;
  std::vector<Var> pre;   // z(t_i^-)
  std::vector<Var> post;  // z(t_i^+)
  std::vector<StepRecord> steps;
  Var final_state() const { return post.back(); }
};

struct EncodeOptions {
  SolverOptions solver;
  GradientMode mode = GradientMode::kAdjoint;
};

/// Alternates integration between observation times with GRU updates at each
/// observation. Integration starts at `start` (defaults to the first time).
inline Trajectory ode_rnn_encode(const std::vector<double>& times, const std::vector<Var>& xs, Var z_init,
                                 const FieldParams& field, const GruParams& gru, const EncodeOptions& opt = {},
                                 std::optional<double> start = std::nullopt) {
  if (times.empty()) throw std::invalid_argument("ode_rnn_encode: no observations");
  if (times.size() != xs.size()) throw std::invalid_argument("ode_rnn_encode: times/values length mismatch");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw std::invalid_argument("ode_rnn_encode: times must be strictly increasing");
  double t_prev = start.value_or(times.front());
  if (t_prev > times.front()) throw std::invalid_argument("ode_rnn_encode: start after first observation");
  Trajectory tr;
  tr.times = times;
  Var z = z_init;
  for (std::size_t i = 0; i < times.size(); ++i) {
    Var pre = integrate(z, field, t_prev, times[i], opt.solver, opt.mode, &tr.steps);
    Var post = gru_update(xs[i], pre, gru);
    tr.pre.push_back(pre);
    tr.post.push_back(post);
    z = post;
    t_prev = times[i];
  }
  return tr;
}

/// dL/dz_init and dL/dtheta for a loss whose only dependence on the encoder
/// is through z(t_N^+), given dL/dz(t_N^+). The reverse sweep walks GRU
/// jumps with the tape and ODE segments with the adjoint solve.
inline Gradients adjoint_backward(const Trajectory& tr, const Tensor& dl_dz_final) {
  Var last = tr.final_state();
  return last.tape->backward(last, dl_dz_final);
}

// ---------------------------------------------------------------------------
// Velocity and acceleration

struct Kinematics {
  double velocity = 0.0;
  double acceleration = 0.0;
};

inline constexpr double kMinVelocity = 1e-10;

/// v = ||f||, a = f^T J f / ||f|| with J = df/dz assembled row by row from
/// d reverse sweeps of a scratch tape. `field` builds f(z) on that tape.
inline Kinematics velocity_acceleration(const Tensor& z, const std::function<Var(Var)>& field) {
  Tape tape;
  Var zv = tape.leaf(z);
  Var f = field(zv);
  const Tensor fv = f.value();
  if (fv.shape() != z.shape()) throw ShapeError("velocity_acceleration: field must map z to its own shape");
  Kinematics k;
  k.velocity = l2(fv);
  if (k.velocity <= kMinVelocity) return k;
  const std::size_t d = fv.size();
  double quad = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    Tensor seed(fv.shape());
    seed[j] = 1.0;
    const Tensor row = tape.backward(f, seed)[zv];  // d f_j / dz
    double jf = 0.0;
    for (std::size_t c = 0; c < d; ++c) jf += row[c] * fv[c];
    quad += fv[j] * jf;
  }
  k.acceleration = quad / k.velocity;
  return k;
}

inline Kinematics velocity_acceleration(const Tensor& z, double t, const FieldWeights& w) {
  return velocity_acceleration(z, [&](Var zv) {
    Tape& tape = *zv.tape;
    FieldParams p{tape.constant(w.W1), tape.constant(w.b1), tape.constant(w.W2), tape.constant(w.b2),
                  tape.constant(w.B)};
    return vector_field(zv, t, p);
  });
}

struct KinematicVars {
  Var velocity;
  Var acceleration;
};

/// Differentiable v and a built from the closed-form Jacobian-vector product
/// J f = W2 (SiLU'(pre) * (W1_z f)).
inline KinematicVars velocity_acceleration(Var z, double t, const FieldParams& p) {
  Tape& tape = *z.tape;
  const std::size_t d = z.shape()[0];
  Var in = concat({z, tape.constant(time_encoding(t, p.B.value()))}, 0);
  Var pre = add(matmul(p.W1, in), p.b1);
  Var f = add(matmul(p.W2, silu(pre)), p.b2);
  Var v = l2_norm(f);
  if (v.item() <= kMinVelocity) return {v, tape.scalar(0.0)};
  Var w1z = slice(p.W1, 1, 0, d);
  Var jf = matmul(p.W2, mul(silu_grad(pre), matmul(w1z, f)));
  return {v, div(sum(mul(f, jf)), v)};
}

/// CSV rows "t,znorm,v,a" at each observation (post-update state).
inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr, const FieldWeights& w) {
  os << "t,z_norm,velocity,acceleration\n";
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    const Tensor& z = tr.post[i].value();
    const auto k = velocity_acceleration(z, tr.times[i], w);
    os << tr.times[i] << ',' << l2(z) << ',' << k.velocity << ',' << k.acceleration << '\n';
  }
}

}  // namespace hyperode::latentode
