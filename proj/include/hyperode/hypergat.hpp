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

// Hypergraph attention over services: candidate hyperedges mined from the
// call graph and log co-occurrence, a Gumbel-sigmoid relaxed incidence
// matrix, two-stage vertex -> hyperedge -> vertex attention, and the
// temporal-precedence and sparsity regularisers.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "hyperode/ops.hpp"
#include "hyperode/params.hpp"
#include "hyperode/rng.hpp"

namespace hyperode::hypergat {

inline constexpr std::size_t kLayers = 3;
inline constexpr std::size_t kDefaultMaxSize = 4;
inline constexpr std::size_t kDefaultMaxCount = 32;
inline constexpr double kDegreeEps = 1e-8;
inline constexpr double kOnsetThreshold = 3.0;
inline constexpr double kTauStart = 1.0;
inline constexpr double kTauEnd = 0.1;

using VertexId = std::size_t;
using VertexPair = std::pair<VertexId, VertexId>;

struct ServiceGraph {
  explicit ServiceGraph(std::size_t n = 0) : num_vertices(n) {}

  std::size_t num_vertices;
  /// Directed caller -> callee pairs with span counts.
  std::map<VertexPair, double> call_edges;
  /// Undirected pairs (first < second) with co-occurrence counts.
  std::map<VertexPair, double> cooccur_edges;

  void add_call(VertexId from, VertexId to, double weight = 1.0) {
    if (from == to) return;  // self calls carry no relational signal
    check(from), check(to);
    call_edges[{from, to}] += weight;
  }
  void add_cooccurrence(VertexId a, VertexId b, double weight) {
    if (a == b) return;
    check(a), check(b);
    cooccur_edges[{std::min(a, b), std::max(a, b)}] += weight;
  }

  /// Total weight of every edge (either kind, either direction) between u and v.
  double pair_weight(VertexId u, VertexId v) const {
    double w = 0.0;
    if (auto it = call_edges.find({u, v}); it != call_edges.end()) w += it->second;
    if (auto it = call_edges.find({v, u}); it != call_edges.end()) w += it->second;
    if (auto it = cooccur_edges.find({std::min(u, v), std::max(u, v)}); it != cooccur_edges.end()) w += it->second;
    return w;
  }

 private:
  void check(VertexId v) const {
    if (v >= num_vertices) throw std::out_of_range("edge endpoint " + std::to_string(v) + " not a service");
  }
};

enum class CandidateSource { kCallMotif, kCooccurClique };

struct CandidateHyperedge {
  std::vector<VertexId> members;  // sorted, distinct, size >= 2
  CandidateSource source = CandidateSource::kCallMotif;
  double weight = 0.0;
};

namespace detail {

inline void subsets_of_size(const std::vector<VertexId>& pool, std::size_t k, std::size_t start,
                            std::vector<VertexId>& cur, std::vector<std::vector<VertexId>>& out) {
  if (cur.size() == k) {
    out.push_back(cur);
    return;
  }
  for (std::size_t i = start; i < pool.size(); ++i) {
    cur.push_back(pool[i]);
    subsets_of_size(pool, k, i + 1, cur, out);
    cur.pop_back();
  }
}

}  // namespace detail

/// Candidate hyperedges: every call edge, every vertex together with 2..max_size-1
/// of its call-graph neighbours (callers and callees), and every co-occurrence
/// triangle. Deduplicated by member set, ordered by descending total edge
/// weight (ties by lexicographic member order) and truncated to max_count.
inline std::vector<CandidateHyperedge> generate_candidates(const ServiceGraph& g,
                                                           std::size_t max_size = kDefaultMaxSize,
                                                           std::size_t max_count = kDefaultMaxCount) {
  if (max_size < 2) throw std::invalid_argument("generate_candidates: max_size must be >= 2");
  std::map<std::vector<VertexId>, CandidateSource> found;
  auto add = [&](std::vector<VertexId> m, CandidateSource s) {
    std::sort(m.begin(), m.end());
    found.emplace(std::move(m), s);
  };

  std::vector<std::set<VertexId>> nbrs(g.num_vertices);
  for (const auto& [e, w] : g.call_edges) {
    add({e.first, e.second}, CandidateSource::kCallMotif);
    nbrs[e.first].insert(e.second);
    nbrs[e.second].insert(e.first);
  }
  for (VertexId v = 0; v < g.num_vertices; ++v) {
    const std::vector<VertexId> pool(nbrs[v].begin(), nbrs[v].end());
    for (std::size_t k = 2; k + 1 <= max_size && k <= pool.size(); ++k) {
      std::vector<std::vector<VertexId>> subs;
      std::vector<VertexId> cur;
      detail::subsets_of_size(pool, k, 0, cur, subs);
      for (auto& s : subs) {
        s.push_back(v);
        add(std::move(s), CandidateSource::kCallMotif);
      }
    }
  }
  if (max_size >= 3) {
    std::vector<std::set<VertexId>> co(g.num_vertices);
    for (const auto& [e, w] : g.cooccur_edges) {
      co[e.first].insert(e.second);
      co[e.second].insert(e.first);
    }
    for (const auto& [e, w] : g.cooccur_edges) {
      for (VertexId c : co[e.second]) {
        if (c > e.second && co[e.first].count(c)) add({e.first, e.second, c}, CandidateSource::kCooccurClique);
      }
    }
  }

  std::vector<CandidateHyperedge> out;
  out.reserve(found.size());
  for (const auto& [members, src] : found) {
    double w = 0.0;
    for (std::size_t i = 0; i < members.size(); ++i)
      for (std::size_t j = i + 1; j < members.size(); ++j) w += g.pair_weight(members[i], members[j]);
    out.push_back({members, src, w});
  }
  std::stable_sort(out.begin(), out.end(), [](const CandidateHyperedge& a, const CandidateHyperedge& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.members < b.members;
  });
  if (out.size() > max_count) out.resize(max_count);
  return out;
}

/// |V| x |E| 0/1 membership matrix of the candidate set.
inline Tensor membership_matrix(const std::vector<CandidateHyperedge>& cands, std::size_t num_vertices) {
  Tensor m(Shape{num_vertices, cands.size()});
  for (std::size_t e = 0; e < cands.size(); ++e)
    for (VertexId v : cands[e].members) m.at(v, e) = 1.0;
  return m;
}

/// Exponential annealing from 1.0 at step 0 to 0.1 at the last step.
inline double anneal_tau(std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return kTauEnd;
  if (step > total_steps) throw std::invalid_argument("anneal_tau: step beyond total");
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return kTauStart * std::pow(kTauEnd / kTauStart, frac);
}

/// Two-way Gumbel-softmax membership probability for one candidate; algebraically
/// the logistic function of (2*logit + g1 - g2) / tau.
inline double gumbel_membership(double logit, double g1, double g2, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
  const double z = (2.0 * logit + g1 - g2) / tau;
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline double binary_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -(p * std::log(p) + (1.0 - p) * std::log(1.0 - p));
}

// ---------------------------------------------------------------------------
// Parameters

struct LayerParams {
  Var W_v, W_e, W_q, a;
};

struct Params {
  Var phi_W, phi_b, w_e;
  std::vector<LayerParams> layers;

  static Params bind(const Bound& b, const std::string& prefix = "hypergat") {
    Params p{b.get(prefix, "phi.W"), b.get(prefix, "phi.b"), b.get(prefix, "w_e"), {}};
    for (std::size_t l = 0; l < kLayers; ++l) {
      const std::string lp = prefix + ".layer" + std::to_string(l);
      p.layers.push_back({b.get(lp, "W_v"), b.get(lp, "W_e"), b.get(lp, "W_q"), b.get(lp, "a")});
    }
    return p;
  }
};

inline void init_params(ParamStore& store, std::size_t d, SeededRng& rng, const std::string& prefix = "hypergat") {
  store.add(prefix + ".phi.W", glorot(rng, d, d));
  store.add(prefix + ".phi.b", Tensor(Shape{d}));
  store.add(prefix + ".w_e", glorot(rng, 1, d).reshaped({d}));
  for (std::size_t l = 0; l < kLayers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    store.add(lp + ".W_v", glorot(rng, d, d));
    store.add(lp + ".W_e", glorot(rng, d, d));
    store.add(lp + ".W_q", glorot(rng, d, d));
    store.add(lp + ".a", glorot(rng, 1, 2 * d).reshaped({2 * d}));
  }
}

// ---------------------------------------------------------------------------
// Soft incidence

struct SoftIncidence {
  Var values;         // |V| x |E|, zero outside candidate membership
  Var logits;         // |E|
  Tensor membership;  // |V| x |E| 0/1
  double tau = 1.0;
  std::size_t num_edges() const { return membership.cols(); }
};

/// Builds H~ from vertex features h (|V| x d). With rng == nullptr the Gumbel
/// noise is zero (evaluation mode); otherwise g1, g2 are drawn once per
/// candidate and shared by all of its members.
inline SoftIncidence soft_incidence(const std::vector<CandidateHyperedge>& cands, Var h, const Params& p,
                                    double tau, SeededRng* rng) {
  if (!(tau > 0.0)) throw std::invalid_argument("soft_incidence: temperature must be positive");
  Tape& t = *h.tape;
  const std::size_t nv = h.shape()[0];
  SoftIncidence out;
  out.tau = tau;
  out.membership = membership_matrix(cands, nv);
  const std::size_t ne = cands.size();
  if (ne == 0) {
    out.values = t.constant(Tensor(Shape{nv, 0}));
    out.logits = t.constant(Tensor(Shape{0}));
    return out;
  }
  // Mean feature per candidate: (|E| x |V| averaging matrix) * h.
  Tensor avg(Shape{ne, nv});
  for (std::size_t e = 0; e < ne; ++e)
    for (VertexId v : cands[e].members) avg.at(e, v) = 1.0 / static_cast<double>(cands[e].members.size());
  Var pooled = matmul(t.constant(avg), h);
  out.logits = matmul(silu(linear(pooled, p.phi_W, p.phi_b)), p.w_e);

  Tensor noise(Shape{ne});
  if (rng) {
    for (std::size_t e = 0; e < ne; ++e) {
      const double g1 = rng->gumbel();
      const double g2 = rng->gumbel();
      noise[e] = g1 - g2;
    }
  }
  Var z = scale(add(scale(out.logits, 2.0), t.constant(noise)), 1.0 / tau);
  out.values = mul(t.constant(out.membership), sigmoid(z));
  return out;
}

// ---------------------------------------------------------------------------
// Message passing

struct LayerTrace {
  Var h;         // |V| x d output (input + update)
  Var alpha;     // |V| x |E| hyperedge -> vertex attention
  Var messages;  // |E| x d
  Var edge_degree;
};

inline LayerTrace hypergat_layer(Var h, const SoftIncidence& H, const LayerParams& lp) {
  Tape& t = *h.tape;
  const std::size_t nv = h.shape()[0];
  const std::size_t ne = H.num_edges();
  if (ne == 0) {
    Var empty = t.constant(Tensor(Shape{nv, 0}));
    return {h, empty, t.constant(Tensor(Shape{0, h.shape()[1]})), t.constant(Tensor(Shape{0}))};
  }
  const std::size_t d = h.shape()[1];
  Var de = add_scalar(sum(H.values, 0), kDegreeEps);
  Var h_norm = div(H.values, de);
  Var m = matmul(transpose(h_norm), linear(h, lp.W_v));
  Var q = linear(h, lp.W_q);
  Var sq = matmul(q, slice(lp.a, 0, 0, d));
  Var sm = matmul(m, slice(lp.a, 0, d, 2 * d));
  Var scores = add(matmul(reshape(sq, {nv, 1}), t.constant(Tensor(Shape{1, ne}, 1.0))), sm);
  Var alpha = masked_softmax(leaky_relu(scores), H.membership);
  Var update = silu(matmul(alpha, linear(m, lp.W_e)));
  return {add(h, update), alpha, m, de};
}

struct ForwardTrace {
  Var h;
  std::vector<LayerTrace> layers;
};

inline ForwardTrace hypergat_forward(Var h0, const SoftIncidence& H, const Params& p) {
  if (p.layers.size() != kLayers) throw std::invalid_argument("hypergat_forward expects exactly 3 layers");
  ForwardTrace out{h0, {}};
  for (const auto& lp : p.layers) {
    out.layers.push_back(hypergat_layer(out.h, H, lp));
    out.h = out.layers.back().h;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Regularisers

struct TimedValue {
  double t;
  double value;
};

/// Mean time of the first (up to) three samples with |value| > 3 across all
/// metrics of each vertex; vertices with no exceedance get the window end.
inline std::vector<double> estimate_onsets(const std::vector<std::vector<TimedValue>>& per_vertex,
                                           double window_end) {
  std::vector<double> out;
  out.reserve(per_vertex.size());
  for (const auto& samples : per_vertex) {
    std::vector<double> hits;
    for (const auto& s : samples)
      if (std::abs(s.value) > kOnsetThreshold) hits.push_back(s.t);
    if (hits.empty()) {
      out.push_back(window_end);
      continue;
    }
    std::sort(hits.begin(), hits.end());
    const std::size_t k = std::min<std::size_t>(3, hits.size());
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += hits[i];
    out.push_back(s / static_cast<double>(k));
  }
  return out;
}

/// Attention mass flowing u -> v through shared hyperedges:
/// sum_e H[u,e] * alpha[v,e] / D_e[e].
inline Var pairwise_attention(const SoftIncidence& H, const LayerTrace& layer) {
  return matmul(div(H.values, layer.edge_degree), transpose(layer.alpha));
}

/// sum_e sum_{u,v} H[u,e] H[v,e] alpha_{u->v} max(0, t_u - t_v).
inline Var temporal_causal_loss(Var incidence, Var pair_alpha, const std::vector<double>& onsets) {
  Tape& t = *incidence.tape;
  const std::size_t nv = onsets.size();
  if (incidence.shape()[0] != nv) throw ShapeError("temporal_causal_loss: onset count != vertex count");
  if (incidence.shape()[1] == 0) return t.scalar(0.0);
  Tensor lag(Shape{nv, nv});
  for (std::size_t u = 0; u < nv; ++u)
    for (std::size_t v = 0; v < nv; ++v) lag.at(u, v) = std::max(0.0, onsets[u] - onsets[v]);
  Var co = matmul(incidence, transpose(incidence));
  return sum(mul(mul(co, pair_alpha), t.constant(lag)));
}

/// ||H~||_1 / (|V| |E|).
inline Var sparsity_loss(Var incidence) {
  if (incidence.size() == 0) return incidence.tape->scalar(0.0);
  return scale(l1_norm(incidence), 1.0 / static_cast<double>(incidence.size()));
}

/// Mean binary entropy over member entries of H~.
inline double mean_membership_entropy(const SoftIncidence& H) {
  double s = 0.0;
  std::size_t n = 0;
  const Tensor& v = H.values.value();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (H.membership[i] == 0.0) continue;
    s += binary_entropy(v[i]);
    ++n;
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

}  // namespace hyperode::hypergat
