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

// Training objective: variational bottleneck head, candidate scorer, loss
// terms, AdamW and the learning-rate schedule.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "hyperode/ops.hpp"
#include "hyperode/params.hpp"
#include "hyperode/rng.hpp"

namespace hyperode::objective {

inline constexpr double kSigmaFloor = 1e-6;
inline constexpr double kProbClamp = 1e-7;

struct Dims {
  std::size_t input = 64;   // fused representation width
  std::size_t latent = 32;  // d_z
  std::size_t embed = 64;   // candidate embedding width
  std::size_t rank = 64;    // bilinear rank
};

// ---------------------------------------------------------------------------
// Variational information bottleneck

struct VibParams {
  Var W_mu, b_mu, W_sigma, b_sigma;
  static VibParams bind(const Bound& b, const std::string& prefix = "objective.vib") {
    return {b.get(prefix, "W_mu"), b.get(prefix, "b_mu"), b.get(prefix, "W_sigma"), b.get(prefix, "b_sigma")};
  }
};

/// 1/2 sum_j (mu_j^2 + sigma_j^2 - log sigma_j^2 - 1)
inline Var kl_divergence(Var mu, Var sigma) {
  Var s2 = square(sigma);
  return scale(sum(add_scalar(sub(add(square(mu), s2), log(s2)), -1.0)), 0.5);
}

struct VibOutput {
  Var z, mu, sigma, kl;
};

/// Training draws z = mu + sigma * eps; evaluation returns z = mu.
inline VibOutput vib_sample(Var x, const VibParams& p, SeededRng* rng, bool train) {
  Var mu = linear(x, p.W_mu, p.b_mu);
  Var sigma = add_scalar(softplus(linear(x, p.W_sigma, p.b_sigma)), kSigmaFloor);
  Var z = mu;
  if (train) {
    if (!rng) throw std::invalid_argument("vib_sample: training mode needs an RNG");
    z = add(mu, mul(sigma, x.tape->constant(sample(*rng, Distribution::kNormal, mu.shape()))));
  }
  return {z, mu, sigma, kl_divergence(mu, sigma)};
}

// ---------------------------------------------------------------------------
// Candidate scoring

struct Candidate {
  std::size_t service = 0;
  std::size_t fault = 0;
  friend bool operator==(const Candidate&, const Candidate&) = default;
  friend auto operator<=>(const Candidate&, const Candidate&) = default;
};

struct ScorerParams {
  Var E_svc, E_fault, U, V, w_z, w_c, b;
  static ScorerParams bind(const Bound& bd, const std::string& prefix = "objective.scorer") {
    return {bd.get(prefix, "E_svc"), bd.get(prefix, "E_fault"), bd.get(prefix, "U"), bd.get(prefix, "V"),
            bd.get(prefix, "w_z"),   bd.get(prefix, "w_c"),     bd.get(prefix, "b")};
  }
};

/// e_k = E_svc[service_k] + E_fault[fault_k]
inline Var candidate_embeddings(const std::vector<Candidate>& cands, const ScorerParams& p) {
  if (cands.empty()) throw std::invalid_argument("score_candidates: no candidates");
  std::vector<std::size_t> svc, fault;
  for (const auto& c : cands) {
    if (c.service >= p.E_svc.shape()[0]) throw std::out_of_range("candidate service id out of range");
    if (c.fault >= p.E_fault.shape()[0]) throw std::out_of_range("candidate fault id out of range");
    svc.push_back(c.service);
    fault.push_back(c.fault);
  }
  return add(gather_rows(p.E_svc, svc), gather_rows(p.E_fault, fault));
}

/// Logits s_k = (z^T U)(V^T e_k) + w_z^T z + w_c^T e_k + b.
inline Var score_candidates(Var z, const std::vector<Candidate>& cands, const ScorerParams& p) {
  Var e = candidate_embeddings(cands, p);
  Var bil = matmul(matmul(e, p.V), matmul(z, p.U));
  return add(add(add(bil, matmul(e, p.w_c)), sum(mul(p.w_z, z))), p.b);
}

/// Indices by descending score; ties broken by (service, fault).
inline std::vector<std::size_t> rank_candidates(const Tensor& scores, const std::vector<Candidate>& cands) {
  if (scores.size() != cands.size()) throw ShapeError("rank_candidates: score/candidate count mismatch");
  std::vector<std::size_t> order(cands.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return cands[a] < cands[b];
  });
  return order;
}

// ---------------------------------------------------------------------------
// Loss terms

/// Elementwise clamp; gradient flows only where the input is inside the range.
inline Var clamp(Var x, double lo, double hi) {
  Tensor y = x.value();
  for (double& v : y.data()) v = std::clamp(v, lo, hi);
  return x.tape->record("clamp", std::move(y), {x}, [lo, hi](BackwardContext& c) {
    const Tensor& xin = c.in(0);
    Tensor& g = c.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xin[i] >= lo && xin[i] <= hi) g[i] += c.grad()[i];
  });
}

inline std::vector<double> smoothed_targets(const std::vector<double>& y, double eps) {
  if (eps < 0.0 || eps >= 1.0) throw std::invalid_argument("label smoothing must lie in [0, 1)");
  const double K = static_cast<double>(y.size());
  std::vector<double> t(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) t[k] = (1.0 - eps) * y[k] + eps / K;
  return t;
}

/// Mean binary cross-entropy of probabilities against smoothed targets.
inline Var classification_loss(Var probs, const std::vector<double>& y, double eps) {
  if (probs.size() != y.size() || y.empty()) throw ShapeError("classification_loss: size mismatch");
  Tape& tape = *probs.tape;
  Var p = clamp(probs, kProbClamp, 1.0 - kProbClamp);
  Var t = tape.constant(Tensor(probs.shape(), smoothed_targets(y, eps)));
  Var one = tape.scalar(1.0);
  Var ll = add(mul(t, log(p)), mul(sub(one, t), log(sub(one, p))));
  return neg(mean(ll));
}

inline double population_variance(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

/// Var_e[L_e] + lambda * mean_e ||grad L_e||^2. The gradient-norm term enters
/// as a value (no second-order gradient).
inline Var causal_penalty(const std::vector<Var>& env_losses, const std::vector<double>& grad_sq_norms,
                          double lambda_grad) {
  if (env_losses.size() < 2) throw std::invalid_argument("causal_penalty: needs at least two environments");
  if (!grad_sq_norms.empty() && grad_sq_norms.size() != env_losses.size())
    throw std::invalid_argument("causal_penalty: one gradient norm per environment expected");
  if (lambda_grad < 0.0) throw std::invalid_argument("causal_penalty: lambda_grad must be non-negative");
  Tape& tape = *env_losses.front().tape;
  const double n = static_cast<double>(env_losses.size());
  // Population variance as the mean pairwise squared difference / 2; exactly
  // zero for identical losses, unlike the route through a rounded mean.
  Var var = tape.scalar(0.0);
  for (std::size_t i = 0; i < env_losses.size(); ++i)
    for (std::size_t j = i + 1; j < env_losses.size(); ++j) var = add(var, square(sub(env_losses[i], env_losses[j])));
  var = scale(var, 1.0 / (n * n));
  double g = 0.0;
  for (double x : grad_sq_norms) g += x;
  if (!grad_sq_norms.empty()) g /= n;
  return add(var, tape.scalar(lambda_grad * g));
}

struct LossWeights {
  double alpha_ib = 1e-3;
  double alpha_temp = 0.1;
  double alpha_causal = 0.1;
  double alpha_sparse = 1e-2;
  double lambda_grad = 1e-2;
  double label_smoothing = 0.1;

  void validate() const {
    for (double a : {alpha_ib, alpha_temp, alpha_causal, alpha_sparse, lambda_grad})
      if (!std::isfinite(a) || a < 0.0) throw std::invalid_argument("loss weights must be finite and non-negative");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
      throw std::invalid_argument("label smoothing must lie in [0, 1)");
  }
};

struct LossComponents {
  Var cls, kl, temporal, causal, sparse;
};

inline Var total_loss(const LossComponents& c, const LossWeights& w) {
  for (Var v : {c.cls, c.kl, c.temporal, c.causal, c.sparse})
    if (!std::isfinite(v.item())) throw DomainError("total_loss: non-finite component");
  Var l = add(c.cls, scale(c.kl, w.alpha_ib));
  l = add(l, scale(c.temporal, w.alpha_temp));
  l = add(l, scale(c.causal, w.alpha_causal));
  return add(l, scale(c.sparse, w.alpha_sparse));
}

// ---------------------------------------------------------------------------
// Optimisation

/// Linear warm-up over the first 10% of steps, then half-cosine decay to 0.
inline double lr_schedule(std::size_t step, std::size_t total, double warmup_fraction = 0.1) {
  if (total == 0) return 1.0;
  const double s = static_cast<double>(std::min(step, total)), T = static_cast<double>(total);
  const double warm = warmup_fraction * T;
  if (s < warm) return s / warm;
  if (T <= warm) return 1.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * (s - warm) / (T - warm)));
}

class AdamW {
 public:
  struct Options {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW() = default;
  explicit AdamW(Options o) : opt_(o) {}

  /// One update of every trainable parameter that has a gradient; `lr_scale`
  /// multiplies the base learning rate. Frozen entries are never touched.
  void step(ParamStore& store, const std::map<std::string, Tensor>& grads, double lr_scale = 1.0) {
    ++t_;
    const double lr = opt_.lr * lr_scale;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
      if (store.frozen(name)) continue;
      Tensor& w = store.at(name);
      if (g.size() != w.size()) throw ShapeError("AdamW: gradient shape mismatch for " + name);
      auto& [m, v] = state_.try_emplace(name, Tensor(w.shape()), Tensor(w.shape())).first->second;
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
        v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
        w[i] -= lr * opt_.weight_decay * w[i];
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
      }
    }
  }

  std::size_t steps() const { return t_; }
  const Options& options() const { return opt_; }

 private:
  Options opt_;
  std::size_t t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> state_;
};

inline void init_params(ParamStore& store, const Dims& d, std::size_t services, std::size_t faults, SeededRng& rng) {
  store.add("objective.vib.W_mu", glorot(rng, d.latent, d.input));
  store.add("objective.vib.b_mu", Tensor(Shape{d.latent}));
  store.add("objective.vib.W_sigma", glorot(rng, d.latent, d.input));
  store.add("objective.vib.b_sigma", Tensor(Shape{d.latent}, std::log(std::expm1(0.1))));  // sigma starts at 0.1
  store.add("objective.scorer.E_svc", sample(rng, Distribution::kNormal, {services, d.embed}) * 0.1);
  store.add("objective.scorer.E_fault", sample(rng, Distribution::kNormal, {faults, d.embed}) * 0.1);
  store.add("objective.scorer.U", glorot(rng, d.latent, d.rank));
  store.add("objective.scorer.V", glorot(rng, d.embed, d.rank));
  store.add("objective.scorer.w_z", Tensor(Shape{d.latent}));
  store.add("objective.scorer.w_c", Tensor(Shape{d.embed}));
  store.add("objective.scorer.b", Tensor(Shape{1}));
}

}  // namespace hyperode::objective
