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

#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hyperode/ops.hpp"
#include "hyperode/params.hpp"
#include "hyperode/rng.hpp"

namespace hyperode::fusion {

enum Modality : std::size_t { kLog = 0, kTrace, kMetric, kEntity, kEvent };
inline constexpr std::size_t kModalities = 5;
inline constexpr std::array<const char*, kModalities> kModalityNames{"log", "trace", "metric", "entity", "event"};
inline constexpr std::size_t kContextStats = 4;

struct Dims {
  std::size_t model = 64;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 128;
  std::size_t out = 64;
  std::size_t extra = 2;  // scalars appended before the MLP (velocity, acceleration)
};

// Projections act on row vectors (X W); head i owns columns [i dk, (i+1) dk).
struct MultiHeadParams {
  Var Wq, Wk, Wv, Wo;
  static MultiHeadParams bind(const Bound& b, const std::string& prefix) {
    return {b.get(prefix, "Wq"), b.get(prefix, "Wk"), b.get(prefix, "Wv"), b.get(prefix, "Wo")};
  }
};

struct Attention {
  Var out;
  std::vector<Var> weights;  // one (n_q, n_k) matrix per head
};

inline Attention multihead(Var Q, Var K, Var V, const MultiHeadParams& p, std::size_t heads) {
  const std::size_t d = Q.shape()[1];
  if (heads == 0 || d % heads != 0) throw ShapeError("multihead: model width not divisible by head count");
  if (K.shape() != V.shape() || K.shape()[1] != d) throw ShapeError("multihead: key/value shape mismatch");
  const std::size_t dk = d / heads;
  Var q = matmul(Q, p.Wq), k = matmul(K, p.Wk), v = matmul(V, p.Wv);
  Attention a;
  std::vector<Var> parts;
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = slice(q, 1, h * dk, (h + 1) * dk), kh = slice(k, 1, h * dk, (h + 1) * dk);
    Var w = softmax(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dk))), -1);
    a.weights.push_back(w);
    parts.push_back(matmul(w, slice(v, 1, h * dk, (h + 1) * dk)));
  }
  a.out = matmul(concat(parts, 1), p.Wo);
  return a;
}

/// LayerNorm(Z + MultiHead(Z, Z, Z)).
inline Attention self_attn_block(Var Z, const MultiHeadParams& p, std::size_t heads) {
  Attention a = multihead(Z, Z, Z, p, heads);
  a.out = layer_norm(add(Z, a.out));
  return a;
}

/// Queries from the target modality, keys and values from the source.
inline Attention cross_attention(Var target, Var source, const MultiHeadParams& p, std::size_t heads) {
  return multihead(target, source, source, p, heads);
}

/// beta[m][m'] = softmax over m' != m of w^T [zbar_m ; zbar_m' ; ctx]; the
/// diagonal is zero.
inline Var routing_weights(const std::vector<Var>& means, Var ctx, Var w) {
  const std::size_t M = means.size();
  if (M < 2) throw std::invalid_argument("routing_weights: need at least two modalities");
  Tape& tape = *w.tape;
  std::vector<Var> scores;
  Tensor mask(Shape{M, M});
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t n = 0; n < M; ++n) {
      if (m == n) {
        scores.push_back(tape.constant(Tensor::vector({0.0})));
        continue;
      }
      mask.at(m, n) = 1.0;
      scores.push_back(reshape(sum(mul(w, concat({means[m], means[n], ctx}, 0))), {1}));
    }
  }
  return masked_softmax(reshape(concat(scores, 0), {M, M}), mask);
}

/// Zhat_m + sum_{m' != m} beta[m][m'] C_{m <- m'}. `cross[m']` for m' == m is ignored.
inline Var fuse(Var zhat, const std::vector<Var>& cross, Var beta_row, std::size_t self) {
  Var out = zhat;
  for (std::size_t n = 0; n < cross.size(); ++n) {
    if (n == self) continue;
    out = add(out, mul(cross[n], reshape(slice(beta_row, 0, n, n + 1), {})));
  }
  return out;
}

struct Pooled {
  Var vector;   // (d)
  Var weights;  // (n)
};

/// sum_i softmax_i(w_p^T z_i) z_i
inline Pooled attention_pool(Var Z, Var w_p) {
  Var weights = softmax(matmul(Z, w_p), 0);
  return {matmul(weights, Z), weights};
}

struct MlpParams {
  Var W1, b1, W2, b2;
  static MlpParams bind(const Bound& b, const std::string& prefix) {
    return {b.get(prefix, "W1"), b.get(prefix, "b1"), b.get(prefix, "W2"), b.get(prefix, "b2")};
  }
};

/// MLP([z_log ; ... ; z_event ; extras]) with one SiLU hidden layer.
inline Var aggregate(const std::vector<Var>& pooled, const std::vector<Var>& extras, const MlpParams& p) {
  std::vector<Var> parts = pooled;
  for (Var e : extras) parts.push_back(e.shape().empty() ? reshape(e, {1}) : e);
  Var x = concat(parts, 0);
  if (x.shape()[0] != p.W1.shape()[1])
    throw ShapeError("aggregate: input width " + std::to_string(x.shape()[0]) + " vs MLP " +
                     std::to_string(p.W1.shape()[1]));
  return linear(silu(linear(x, p.W1, p.b1)), p.W2, p.b2);
}

struct Params {
  std::vector<MultiHeadParams> self_attn;   // per modality
  std::vector<MultiHeadParams> cross_attn;  // per target modality
  Var route_w;                              // (3 d)
  Var ctx_W, ctx_b;                         // context projection (d, kContextStats)
  Var pool_w;                               // (d)
  Var null_tokens;                          // (kModalities, d)
  MlpParams mlp;

  static Params bind(const Bound& b, const std::string& prefix = "fusion") {
    Params p;
    for (const char* m : kModalityNames) {
      p.self_attn.push_back(MultiHeadParams::bind(b, prefix + ".self." + m));
      p.cross_attn.push_back(MultiHeadParams::bind(b, prefix + ".cross." + m));
    }
    p.route_w = b.get(prefix, "route_w");
    p.ctx_W = b.get(prefix, "ctx_W");
    p.ctx_b = b.get(prefix, "ctx_b");
    p.pool_w = b.get(prefix, "pool_w");
    p.null_tokens = b.get(prefix, "null_tokens");
    p.mlp = MlpParams::bind(b, prefix + ".mlp");
    return p;
  }
};

inline void init_params(ParamStore& store, const Dims& d, SeededRng& rng, const std::string& prefix = "fusion") {
  auto mh = [&](const std::string& k) {
    for (const char* w : {"Wq", "Wk", "Wv", "Wo"}) store.add(k + "." + w, glorot(rng, d.model, d.model));
  };
  for (const char* m : kModalityNames) {
    mh(prefix + ".self." + m);
    mh(prefix + ".cross." + m);
  }
  store.add(prefix + ".route_w", glorot(rng, 1, 3 * d.model).reshaped({3 * d.model}));
  store.add(prefix + ".ctx_W", glorot(rng, d.model, kContextStats));
  store.add(prefix + ".ctx_b", Tensor(Shape{d.model}));
  store.add(prefix + ".pool_w", glorot(rng, 1, d.model).reshaped({d.model}));
  store.add(prefix + ".null_tokens", sample(rng, Distribution::kNormal, {kModalities, d.model}) * 0.1);
  const std::size_t in = kModalities * d.model + d.extra;
  store.add(prefix + ".mlp.W1", glorot(rng, d.mlp_hidden, in));
  store.add(prefix + ".mlp.b1", Tensor(Shape{d.mlp_hidden}));
  store.add(prefix + ".mlp.W2", glorot(rng, d.out, d.mlp_hidden));
  store.add(prefix + ".mlp.b2", Tensor(Shape{d.out}));
}

struct Trace {
  Var final;
  Var beta;                          // (M, M)
  std::vector<Var> pooling;          // per modality (n_m)
  std::vector<Attention> self_attn;  // per modality
  std::vector<Var> fused;            // per modality (n_m, d)
  std::vector<bool> used_null;       // modality was empty
};

/// Runs one fusion block. Missing modalities (nullopt) are replaced by their
/// learned null token. `context` holds the incident statistics.
inline Trace forward(const std::vector<std::optional<Var>>& tokens, const Tensor& context,
                     const std::vector<Var>& extras, const Params& p, std::size_t heads) {
  if (tokens.size() != kModalities) throw std::invalid_argument("fusion: expected one token set per modality");
  if (context.size() != kContextStats) throw ShapeError("fusion: context must have 4 statistics");
  Tape& tape = *p.route_w.tape;
  Trace tr;
  std::vector<Var> zhat, means;
  for (std::size_t m = 0; m < kModalities; ++m) {
    const bool missing = !tokens[m] || tokens[m]->shape()[0] == 0;
    tr.used_null.push_back(missing);
    Var Z = missing ? slice(p.null_tokens, 0, m, m + 1) : *tokens[m];
    tr.self_attn.push_back(self_attn_block(Z, p.self_attn[m], heads));
    zhat.push_back(tr.self_attn.back().out);
    means.push_back(mean(zhat.back(), 0));
  }
  Var ctx = linear(tape.constant(context), p.ctx_W, p.ctx_b);
  tr.beta = routing_weights(means, ctx, p.route_w);
  std::vector<Var> pooled;
  for (std::size_t m = 0; m < kModalities; ++m) {
    std::vector<Var> cross;
    for (std::size_t n = 0; n < kModalities; ++n)
      cross.push_back(n == m ? zhat[m] : cross_attention(zhat[m], zhat[n], p.cross_attn[m], heads).out);
    tr.fused.push_back(fuse(zhat[m], cross, slice(reshape(tr.beta, {kModalities * kModalities}), 0,
                                                   m * kModalities, (m + 1) * kModalities),
                            m));
    Pooled pl = attention_pool(tr.fused.back(), p.pool_w);
    tr.pooling.push_back(pl.weights);
    pooled.push_back(pl.vector);
  }
  tr.final = aggregate(pooled, extras, p.mlp);
  return tr;
}

}  // namespace hyperode::fusion
