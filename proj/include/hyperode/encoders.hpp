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

// Per-modality encoders. Logs use feature hashing in place of a pretrained
// language model.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hyperode/latentode.hpp"
#include "hyperode/ops.hpp"
#include "hyperode/params.hpp"
#include "hyperode/rng.hpp"

namespace hyperode::encoders {

inline constexpr double kTemplateTemperature = 0.07;

struct Dims {
  std::size_t model = 64;
  std::size_t log = 64;
  std::size_t prototypes = 16;
  std::size_t service_embedding = 16;
  std::size_t trace_layers = 2;
  std::size_t dcc_layers = 4;
};

// ---------------------------------------------------------------------------
// Logs

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0) {
  std::uint64_t h = 14695981039346656037ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Mean of signed one-hot token hashes over 2d buckets (bucket b maps to
/// dimension b mod d with sign + for b < d), L2-normalised.
inline Tensor log_embed(const std::vector<std::string>& tokens, std::size_t d, std::uint64_t seed = 0) {
  if (d == 0) throw std::invalid_argument("log_embed: dimension must be positive");
  if (tokens.empty()) throw std::invalid_argument("log_embed: empty token list");
  Tensor v(Shape{d});
  for (const auto& tok : tokens) {
    const std::uint64_t b = fnv1a(tok, seed) % (2 * d);
    v[b % d] += b < d ? 1.0 : -1.0;
  }
  v *= 1.0 / static_cast<double>(tokens.size());
  const double n = l2(v);
  // Every token cancelled out: fall back to the first token's own bucket.
  if (n == 0.0) {
    const std::uint64_t b = fnv1a(tokens.front(), seed) % (2 * d);
    v[b % d] = b < d ? 1.0 : -1.0;
    return v;
  }
  v *= 1.0 / n;
  return v;
}

struct TemplateAssignment {
  Var probs;  // (J)
  Var loss;   // -log p(j* | l)
  std::size_t argmax = 0;
};

/// softmax_j(cos(h, p_j) / tau_c) with the self-labelled clustering loss.
inline TemplateAssignment template_assign(Var h, Var prototypes, double tau = kTemplateTemperature) {
  if (prototypes.shape().size() != 2 || prototypes.shape()[0] == 0)
    throw ShapeError("template_assign: prototypes must be a nonempty (J, d) matrix");
  Var cos = div(matmul(prototypes, h), mul(sqrt(sum(square(prototypes), 1)), l2_norm(h)));
  Var probs = softmax(scale(cos, 1.0 / tau), 0);
  const auto& p = probs.value();
  std::size_t best = 0;
  for (std::size_t j = 1; j < p.size(); ++j)
    if (p[j] > p[best]) best = j;
  return {probs, neg(sum(log(slice(probs, 0, best, best + 1)))), best};
}

/// Greedy farthest-point (max of min cosine distance) selection of J unit
/// prototypes, seeded with the first vector. Tops up with random unit
/// vectors when fewer distinct vectors than J are available.
inline Tensor init_prototypes(const std::vector<Tensor>& vectors, std::size_t J, std::size_t d, SeededRng& rng) {
  Tensor out(Shape{J, d});
  std::vector<Tensor> chosen;
  auto unit = [](Tensor v) {
    const double n = l2(v);
    if (n > 0) v *= 1.0 / n;
    return v;
  };
  std::vector<double> closest(vectors.size(), std::numeric_limits<double>::infinity());
  auto cos_dist = [](const Tensor& a, const Tensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return 1.0 - s;
  };
  if (!vectors.empty()) chosen.push_back(unit(vectors.front()));
  while (chosen.size() < J && !vectors.empty()) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      closest[i] = std::min(closest[i], cos_dist(unit(vectors[i]), chosen.back()));
      if (closest[i] > best_d) {
        best_d = closest[i];
        best = i;
      }
    }
    if (best_d <= 1e-12) break;
    chosen.push_back(unit(vectors[best]));
  }
  while (chosen.size() < J) chosen.push_back(unit(sample(rng, Distribution::kNormal, {d})));
  for (std::size_t j = 0; j < J; ++j) {
    if (chosen[j].size() != d) throw ShapeError("init_prototypes: vector width mismatch");
    std::copy(chosen[j].data().begin(), chosen[j].data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(j * d));
  }
  return out;
}

/// Rescales every row of a (J, d) matrix to unit norm.
inline void renormalize_rows(Tensor& p) {
  const std::size_t J = p.rows(), d = p.cols();
  for (std::size_t j = 0; j < J; ++j) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += p.at(j, k) * p.at(j, k);
    const double n = std::sqrt(s);
    if (n > 0)
      for (std::size_t k = 0; k < d; ++k) p.at(j, k) /= n;
  }
}

// ---------------------------------------------------------------------------
// Traces

struct Span {
  std::size_t service = 0;
  double duration_ms = 0.0;
  bool error = false;
  std::optional<std::size_t> parent;
};

/// Span forest; parents reference indices within the same graph.
struct TraceSpanGraph {
  std::vector<Span> spans;

  void validate() const {
    const std::size_t n = spans.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (!spans[i].parent) continue;
      if (*spans[i].parent >= n) throw std::out_of_range("span parent out of range");
      std::size_t cur = i, hops = 0;
      while (spans[cur].parent) {
        cur = *spans[cur].parent;
        if (++hops > n) throw std::invalid_argument("span parent references form a cycle");
      }
    }
  }

  /// Row-wise mask: parent, children and self.
  Tensor neighbourhood() const {
    const std::size_t n = spans.size();
    Tensor m(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) {
      m.at(i, i) = 1.0;
      if (spans[i].parent) {
        m.at(i, *spans[i].parent) = 1.0;
        m.at(*spans[i].parent, i) = 1.0;
      }
    }
    return m;
  }
};

/// [duration z-score within the graph, ok, error, service embedding row].
inline Var span_features(const TraceSpanGraph& g, Var service_table) {
  g.validate();
  const std::size_t n = g.spans.size();
  if (n == 0) throw std::invalid_argument("span_features: empty trace graph");
  double mean = 0;
  for (const auto& s : g.spans) mean += s.duration_ms;
  mean /= static_cast<double>(n);
  double var = 0;
  for (const auto& s : g.spans) var += (s.duration_ms - mean) * (s.duration_ms - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));
  Tensor base(Shape{n, 3});
  std::vector<std::size_t> svc(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = g.spans[i];
    base.at(i, 0) = sd > 0 ? (s.duration_ms - mean) / sd : 0.0;
    base.at(i, s.error ? 2 : 1) = 1.0;
    svc[i] = std::min(s.service, service_table.shape()[0] - 1);
  }
  return concat({service_table.tape->constant(base), gather_rows(service_table, svc)}, 1);
}

struct GatLayer {
  Var W;  // (d_out, d_in)
  Var a;  // (2 d_out)
};

struct TraceGatParams {
  std::vector<GatLayer> layers;
  static TraceGatParams bind(const Bound& b, std::size_t n_layers, const std::string& prefix = "encoders.trace") {
    TraceGatParams p;
    for (std::size_t l = 0; l < n_layers; ++l) {
      const std::string k = prefix + "." + std::to_string(l);
      p.layers.push_back({b.get(k, "W"), b.get(k, "a")});
    }
    return p;
  }
};

struct TraceGatOutput {
  Var h;                     // (n, d_out)
  std::vector<Var> alpha;    // per layer (n, n), zero outside the neighbourhood
};

/// h_i' = SiLU(sum_{j in N(i)} alpha_ij W h_j) with
/// alpha_ij = softmax_j LeakyReLU(a^T [W h_i ; W h_j]).
inline TraceGatOutput trace_gat(Var x, const Tensor& neighbourhood, const TraceGatParams& p) {
  Tape& tape = *x.tape;
  const std::size_t n = x.shape()[0];
  TraceGatOutput out{x, {}};
  Var ones_row = tape.constant(Tensor::ones({1, n}));
  Var ones_col = tape.constant(Tensor::ones({n, 1}));
  for (const auto& layer : p.layers) {
    const std::size_t d = layer.W.shape()[0];
    Var wh = matmul(out.h, transpose(layer.W));                         // (n, d)
    Var src = matmul(wh, reshape(slice(layer.a, 0, 0, d), {d, 1}));      // (n, 1)
    Var dst = matmul(wh, reshape(slice(layer.a, 0, d, 2 * d), {d, 1}));  // (n, 1)
    Var e = leaky_relu(add(matmul(src, ones_row), matmul(ones_col, transpose(dst))));
    Var alpha = masked_softmax(e, neighbourhood);
    out.alpha.push_back(alpha);
    out.h = silu(matmul(alpha, wh));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

struct DccLayer {
  Var past;     // (d_out, d_in), tap at t - dilation
  Var current;  // (d_out, d_in), tap at t
  Var b;        // (d_out)
};

struct DccParams {
  std::vector<DccLayer> layers;
  static DccParams bind(const Bound& b, std::size_t n_layers, const std::string& prefix = "encoders.dcc") {
    DccParams p;
    for (std::size_t l = 0; l < n_layers; ++l) {
      const std::string k = prefix + "." + std::to_string(l);
      p.layers.push_back({b.get(k, "past"), b.get(k, "current"), b.get(k, "b")});
    }
    return p;
  }
};

/// Rows shifted down by `lag`, zero-filled at the top.
inline Var shift_rows(Var y, std::size_t lag) {
  const std::size_t T = y.shape()[0], c = y.shape()[1];
  Tape& tape = *y.tape;
  if (lag >= T) return tape.constant(Tensor::zeros({T, c}));
  return concat({tape.constant(Tensor::zeros({lag, c})), slice(y, 0, 0, T - lag)}, 0);
}

/// Kernel-2 dilated causal convolutions over a (T, C) window; layer l uses
/// dilation 2^l and is followed by ReLU. Returns (T, d_out).
inline Var metric_dcc(Var window, const DccParams& p) {
  if (window.shape().size() != 2) throw ShapeError("metric_dcc: window must be (T, C)");
  if (window.shape()[0] < 1) throw std::invalid_argument("metric_dcc: empty window");
  Var y = window;
  std::size_t dilation = 1;
  for (const auto& l : p.layers) {
    y = relu(add(add(matmul(shift_rows(y, dilation), transpose(l.past)), matmul(y, transpose(l.current))), l.b));
    dilation *= 2;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Entities and events

/// String vocabulary with id 0 reserved for unknown values.
class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0;
  Vocabulary() : words_{"<unk>"} {}

  std::size_t add(const std::string& w) {
    auto [it, fresh] = ids_.try_emplace(w, words_.size());
    if (fresh) words_.push_back(w);
    return it->second;
  }
  std::size_t lookup(const std::string& w) const {
    auto it = ids_.find(w);
    return it == ids_.end() ? kUnk : it->second;
  }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  const std::string& word(std::size_t id) const { return words_.at(id); }

 private:
  std::map<std::string, std::size_t> ids_;
  std::vector<std::string> words_;
};

/// Entity attributes in a fixed order, e.g. service, pod, node, region.
using Entity = std::vector<std::string>;

struct Event {
  std::string type;
  double time = 0.0;  // model time units (minutes)
};

/// Sum over attributes of their embedding rows; one table per attribute.
inline Var entity_tokens(const std::vector<Entity>& entities, const std::vector<Vocabulary>& vocab,
                         const std::vector<Var>& tables) {
  if (entities.empty()) throw std::invalid_argument("entity_tokens: no entities");
  if (vocab.size() != tables.size()) throw std::invalid_argument("entity_tokens: vocabulary/table count mismatch");
  std::optional<Var> acc;
  for (std::size_t k = 0; k < tables.size(); ++k) {
    std::vector<std::size_t> ids;
    for (const auto& e : entities) {
      if (e.size() != tables.size()) throw std::invalid_argument("entity_tokens: attribute count mismatch");
      ids.push_back(vocab[k].lookup(e[k]));
    }
    Var rows = gather_rows(tables[k], ids);
    acc = acc ? add(*acc, rows) : rows;
  }
  return *acc;
}

/// Type embedding plus the time encoding, zero-padded to the model width.
inline Var event_tokens(const std::vector<Event>& events, const Vocabulary& vocab, Var type_table, const Tensor& B) {
  if (events.empty()) throw std::invalid_argument("event_tokens: no events");
  const std::size_t d = type_table.shape()[1], n = events.size();
  if (2 * B.size() > d) throw ShapeError("event_tokens: time encoding wider than model");
  Tensor enc(Shape{n, d});
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back(vocab.lookup(events[i].type));
    const Tensor g = latentode::time_encoding(events[i].time, B);
    for (std::size_t k = 0; k < g.size(); ++k) enc.at(i, k) = g[k];
  }
  return add(gather_rows(type_table, ids), type_table.tape->constant(enc));
}

// ---------------------------------------------------------------------------

/// Trace GAT and DCC weights. Log projections and embedding tables depend on
/// dataset vocabularies and are created by the model.
inline void init_params(ParamStore& store, const Dims& d, std::size_t metric_channels, SeededRng& rng) {
  std::size_t in = 3 + d.service_embedding;
  for (std::size_t l = 0; l < d.trace_layers; ++l) {
    const std::string k = "encoders.trace." + std::to_string(l);
    store.add(k + ".W", glorot(rng, d.model, in));
    store.add(k + ".a", glorot(rng, 1, 2 * d.model).reshaped({2 * d.model}));
    in = d.model;
  }
  in = metric_channels;
  for (std::size_t l = 0; l < d.dcc_layers; ++l) {
    const std::string k = "encoders.dcc." + std::to_string(l);
    store.add(k + ".past", glorot(rng, d.model, in));
    store.add(k + ".current", glorot(rng, d.model, in));
    store.add(k + ".b", Tensor(Shape{d.model}));
    in = d.model;
  }
}

}  // namespace hyperode::encoders
