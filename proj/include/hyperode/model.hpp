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

// End-to-end incident scorer: preprocessing of one incident into model
// inputs, parameter layout, and the forward pass producing candidate scores
// and loss components.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hyperode/datapipe.hpp"
#include "hyperode/encoders.hpp"
#include "hyperode/fusion.hpp"
#include "hyperode/hypergat.hpp"
#include "hyperode/latentode.hpp"
#include "hyperode/objective.hpp"

namespace hyperode::model {

inline constexpr std::size_t kVertexStats = 13;
inline constexpr std::size_t kEntityAttributes = 4;
inline constexpr std::array<const char*, kEntityAttributes> kEntityAttributeNames{"service", "pod", "node", "region"};

struct Dims {
  std::size_t model = 64;
  std::size_t heads = 4;
  std::size_t prototypes = 16;
  std::size_t service_embedding = 16;
  std::size_t trace_layers = 2;
  std::size_t dcc_layers = 4;
  std::size_t ode_hidden = 128;
  std::size_t time_enc = 16;
  std::size_t fusion_hidden = 128;
  std::size_t vib_latent = 32;
  std::size_t rank = 64;
  std::size_t grid = 30;  // metric grid points (30 s apart)
  std::size_t max_log_tokens = 96;
  std::size_t max_spans = 160;
  std::size_t hyperedge_max_size = hypergat::kDefaultMaxSize;
  std::size_t hyperedge_max_count = hypergat::kDefaultMaxCount;

  void validate() const {
    if (model == 0 || heads == 0 || model % heads != 0) throw std::invalid_argument("model width must be a positive multiple of heads");
    if (time_enc == 0 || time_enc % 2 != 0 || time_enc > model) throw std::invalid_argument("time_enc must be even and <= model");
    if (grid < 2 || prototypes == 0 || vib_latent == 0 || rank == 0) throw std::invalid_argument("dimension must be positive");
    if (max_log_tokens == 0 || max_spans == 0) throw std::invalid_argument("token caps must be positive");
  }
};

/// Dataset-dependent lookup tables fixed at training time.
struct Vocabularies {
  std::vector<std::string> services, faults, metrics;
  std::vector<encoders::Vocabulary> entity = std::vector<encoders::Vocabulary>(kEntityAttributes);
  encoders::Vocabulary events;

  static Vocabularies build(const datapipe::Dataset& d, const std::string& split = "train") {
    Vocabularies v;
    v.services = d.manifest.services;
    v.faults = d.manifest.faults;
    v.metrics = d.manifest.metrics;
    for (const auto& inc : d.incidents) {
      if (inc.split != split) continue;
      for (const auto& e : inc.entities) {
        const auto attrs = e.attributes();
        for (std::size_t k = 0; k < kEntityAttributes; ++k) v.entity[k].add(attrs[k]);
      }
      for (const auto& e : inc.events) v.events.add(e.type);
    }
    return v;
  }

  /// Throws if the dataset's services, faults or metrics differ.
  void check_compatible(const datapipe::Manifest& m) const {
    if (m.services != services) throw std::invalid_argument("dataset services differ from the checkpoint vocabulary");
    if (m.faults != faults) throw std::invalid_argument("dataset fault types differ from the checkpoint vocabulary");
    if (m.metrics != metrics) throw std::invalid_argument("dataset metrics differ from the checkpoint vocabulary");
  }

  nlohmann::json to_json() const {
    nlohmann::json ent = nlohmann::json::array();
    for (const auto& v : entity) ent.push_back(v.words());
    return {{"services", services}, {"faults", faults}, {"metrics", metrics}, {"entity", ent}, {"events", events.words()}};
  }

  static Vocabularies from_json(const nlohmann::json& j) {
    Vocabularies v;
    v.services = j.at("services").get<std::vector<std::string>>();
    v.faults = j.at("faults").get<std::vector<std::string>>();
    v.metrics = j.at("metrics").get<std::vector<std::string>>();
    const auto& ent = j.at("entity");
    if (!ent.is_array() || ent.size() != kEntityAttributes) throw std::invalid_argument("checkpoint: bad entity vocabulary");
    auto fill = [](encoders::Vocabulary& voc, const nlohmann::json& words) {
      const auto w = words.get<std::vector<std::string>>();
      for (std::size_t i = 1; i < w.size(); ++i) voc.add(w[i]);
    };
    for (std::size_t k = 0; k < kEntityAttributes; ++k) fill(v.entity[k], ent[k]);
    fill(v.events, j.at("events"));
    return v;
  }
};

// ---------------------------------------------------------------------------
// Preprocessing

/// Everything the forward pass needs from one incident; parameter free.
struct Prepared {
  std::string id;
  std::string split;
  double start = 0.0;
  std::size_t services = 0;
  Tensor vertex_stats;                 // (S, 13)
  std::vector<double> onsets;          // minutes since window start
  double window_minutes = 0.0;
  std::vector<hypergat::CandidateHyperedge> hyperedges;
  Tensor log_embeddings;               // (n_log, d) unit rows
  std::vector<std::size_t> log_service;
  Tensor log_bucket_mean;              // (grid, n_log) averaging matrix
  encoders::TraceSpanGraph spans;
  Tensor span_neighbourhood;
  Tensor metric_window;                // (grid, S * metrics)
  std::vector<encoders::Entity> entities;
  std::vector<std::size_t> entity_service;
  std::vector<encoders::Event> events;
  Tensor context;                      // (4)
  std::vector<objective::Candidate> candidates;
  std::vector<double> labels;
  std::size_t truth = 0;
  std::string truth_fault;
};

namespace detail {

inline std::optional<std::vector<datapipe::Sample>> robust(const datapipe::MetricSeries& ms, double baseline_end) {
  try {
    return datapipe::normalize_series(ms.samples, baseline_end);
  } catch (const std::invalid_argument&) {
    return std::nullopt;  // too few baseline samples to normalise
  }
}

inline std::size_t index_of(const std::vector<std::string>& v, const std::string& s, const char* what) {
  auto it = std::find(v.begin(), v.end(), s);
  if (it == v.end()) throw std::invalid_argument(std::string("unknown ") + what + " '" + s + "'");
  return static_cast<std::size_t>(it - v.begin());
}

}  // namespace detail

inline Prepared prepare(const datapipe::Incident& inc, const datapipe::Manifest& man, const Dims& dims) {
  Prepared p;
  p.id = inc.id;
  p.split = inc.split;
  p.start = inc.start;
  const std::size_t S = man.services.size(), M = man.metrics.size();
  p.services = S;
  const double baseline_end = inc.start + man.baseline_seconds;
  const double window = inc.end - inc.start;
  p.window_minutes = window / 60.0;

  // Metrics: robust z-scores, per-vertex statistics, onsets, imputed grid.
  p.vertex_stats = Tensor(Shape{S, kVertexStats});
  p.metric_window = Tensor(Shape{dims.grid, S * M});
  std::vector<std::vector<hypergat::TimedValue>> per_vertex(S);
  const double step = window / static_cast<double>(dims.grid);
  for (const auto& ms : inc.metrics) {
    const std::size_t m = detail::index_of(man.metrics, ms.metric, "metric");
    const auto z = detail::robust(ms, baseline_end);
    if (!z) continue;
    double peak = 0, signed_sum = 0;
    std::size_t post = 0, hits = 0;
    bool any = false;
    for (const auto& s : *z) {
      if (!s.value) continue;
      any = true;
      per_vertex[ms.service].push_back({(s.t - inc.start) / 60.0, *s.value});
      if (s.t < baseline_end) continue;
      ++post;
      peak = std::max(peak, std::abs(*s.value));
      signed_sum += *s.value;
      if (std::abs(*s.value) > hypergat::kOnsetThreshold) ++hits;
    }
    if (m < 4) {
      p.vertex_stats.at(ms.service, m) = std::min(peak / 10.0, 3.0);
      p.vertex_stats.at(ms.service, 4 + m) = post ? static_cast<double>(hits) / static_cast<double>(post) : 0.0;
      p.vertex_stats.at(ms.service, 8 + m) =
          std::clamp(post ? signed_sum / static_cast<double>(post) / 10.0 : 0.0, -3.0, 3.0);
    }
    if (!any) continue;
    const auto grid = datapipe::impute(*z, inc.start, dims.grid, step);
    for (std::size_t k = 0; k < dims.grid; ++k)
      p.metric_window.at(k, ms.service * M + m) = std::clamp(grid[k], -20.0, 20.0) / 5.0;
  }
  for (auto& v : per_vertex) std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  p.onsets = hypergat::estimate_onsets(per_vertex, p.window_minutes);
  for (std::size_t s = 0; s < S; ++s) p.vertex_stats.at(s, 12) = p.onsets[s] / p.window_minutes;

  // Service graph: declared calls weighted by observed span edges, plus
  // services whose onsets lie within a minute of each other.
  hypergat::ServiceGraph g(S);
  for (const auto& [a, b] : man.calls) g.add_call(a, b, 1.0);
  for (const auto& sp : inc.spans)
    if (sp.parent) g.add_call(inc.spans[*sp.parent].service, sp.service, 1.0);
  for (std::size_t u = 0; u < S; ++u)
    for (std::size_t v = u + 1; v < S; ++v)
      if (p.onsets[u] < p.window_minutes && p.onsets[v] < p.window_minutes && std::abs(p.onsets[u] - p.onsets[v]) <= 1.0)
        g.add_cooccurrence(u, v, 1.0);
  p.hyperedges = hypergat::generate_candidates(g, dims.hyperedge_max_size, dims.hyperedge_max_count);

  // Logs: evenly thinned to the token cap.
  const std::size_t nl = std::min(inc.logs.size(), dims.max_log_tokens);
  p.log_embeddings = Tensor(Shape{nl, dims.model});
  p.log_bucket_mean = Tensor(Shape{dims.grid, nl});
  std::vector<std::size_t> bucket_count(dims.grid, 0), bucket_of(nl);
  for (std::size_t i = 0; i < nl; ++i) {
    const auto& l = inc.logs[i * inc.logs.size() / nl];
    const Tensor e = encoders::log_embed(l.tokens, dims.model);
    const double norm = l2(e);
    for (std::size_t k = 0; k < dims.model; ++k) p.log_embeddings.at(i, k) = norm > 0 ? e[k] / norm : 0.0;
    p.log_service.push_back(l.service);
    const auto b = static_cast<std::size_t>(std::clamp((l.t - inc.start) / step, 0.0, static_cast<double>(dims.grid - 1)));
    bucket_of[i] = b;
    ++bucket_count[b];
  }
  for (std::size_t i = 0; i < nl; ++i)
    p.log_bucket_mean.at(bucket_of[i], i) = 1.0 / static_cast<double>(bucket_count[bucket_of[i]]);

  // Traces.
  std::size_t span_errors = 0;
  const std::size_t ns = std::min(inc.spans.size(), dims.max_spans);
  for (std::size_t i = 0; i < ns; ++i) {
    const auto& s = inc.spans[i];
    p.spans.spans.push_back({s.service, s.duration_ms, s.error, s.parent});
    span_errors += s.error;
  }
  if (ns) p.span_neighbourhood = p.spans.neighbourhood();

  for (const auto& e : inc.entities) {
    p.entities.push_back(e.attributes());
    p.entity_service.push_back(detail::index_of(man.services, e.service, "service"));
  }
  for (const auto& e : inc.events) p.events.push_back({e.type, (e.t - inc.start) / 60.0});

  std::size_t anomalous = 0;
  for (double o : p.onsets) anomalous += o < p.window_minutes;
  p.context = Tensor::vector({static_cast<double>(anomalous) / static_cast<double>(S),
                              ns ? static_cast<double>(span_errors) / static_cast<double>(ns) : 0.0,
                              std::min(1.0, static_cast<double>(inc.events.size()) / 5.0),
                              std::min(1.0, static_cast<double>(inc.logs.size()) / 500.0)});

  for (std::size_t k = 0; k < inc.candidates.size(); ++k) {
    const auto& c = inc.candidates[k];
    p.candidates.push_back({c.service, detail::index_of(man.faults, c.fault, "fault type")});
    p.labels.push_back(k == inc.truth ? 1.0 : 0.0);
  }
  p.truth = inc.truth;
  p.truth_fault = inc.candidates[inc.truth].fault;
  return p;
}

// ---------------------------------------------------------------------------
// Parameters

inline latentode::Dims ode_dims(const Dims& d) { return {d.model, d.ode_hidden, d.time_enc, 2 * d.model}; }
inline encoders::Dims encoder_dims(const Dims& d) {
  return {d.model, d.model, d.prototypes, d.service_embedding, d.trace_layers, d.dcc_layers};
}
inline fusion::Dims fusion_dims(const Dims& d) { return {d.model, d.heads, d.fusion_hidden, d.model, 2}; }
inline objective::Dims objective_dims(const Dims& d) { return {d.model, d.vib_latent, d.model, d.rank}; }

inline void init_params(ParamStore& store, const Dims& d, const Vocabularies& v, SeededRng& rng) {
  d.validate();
  const std::size_t S = v.services.size();
  hypergat::init_params(store, d.model, rng);
  store.add("model.vertex.W_in", glorot(rng, d.model, kVertexStats));
  store.add("model.vertex.b_in", Tensor(Shape{d.model}));
  store.add("model.vertex.emb", sample(rng, Distribution::kNormal, {S, d.model}) * 0.1);

  store.add("model.log.prototypes", sample(rng, Distribution::kNormal, {d.prototypes, d.model}));
  encoders::renormalize_rows(store.at("model.log.prototypes"));
  store.add("model.log.W", glorot(rng, d.model, d.model + d.prototypes));
  store.add("model.log.b", Tensor(Shape{d.model}));
  store.add("model.log.service", sample(rng, Distribution::kNormal, {S, d.model}) * 0.1);

  encoders::init_params(store, encoder_dims(d), S * v.metrics.size(), rng);
  store.add("encoders.service_emb", sample(rng, Distribution::kNormal, {S, d.service_embedding}) * 0.1);
  for (std::size_t k = 0; k < kEntityAttributes; ++k)
    store.add(std::string("model.entity.") + kEntityAttributeNames[k],
              sample(rng, Distribution::kNormal, {v.entity[k].size(), d.model}) * 0.1);
  store.add("model.event.types", sample(rng, Distribution::kNormal, {v.events.size(), d.model}) * 0.1);

  latentode::init_params(store, ode_dims(d), rng);
  store.add("model.ode.W", glorot(rng, d.model, d.model));
  store.add("model.ode.b", Tensor(Shape{d.model}));

  fusion::init_params(store, fusion_dims(d), rng);
  objective::init_params(store, objective_dims(d), S, v.faults.size(), rng);
}

/// Seeds the log prototypes from the training logs (farthest-point choice).
inline void init_prototypes(ParamStore& store, const std::vector<Prepared>& train, const Dims& d, SeededRng& rng) {
  std::vector<Tensor> vecs;
  for (const auto& p : train)
    for (std::size_t i = 0; i < p.log_embeddings.rows(); ++i) {
      Tensor row(Shape{d.model});
      for (std::size_t k = 0; k < d.model; ++k) row[k] = p.log_embeddings.at(i, k);
      vecs.push_back(std::move(row));
    }
  store.at("model.log.prototypes") = encoders::init_prototypes(vecs, d.prototypes, d.model, rng);
}

// ---------------------------------------------------------------------------
// Forward pass

struct ForwardOptions {
  bool train = false;
  double tau = 1.0;
  SeededRng* rng = nullptr;  // Gumbel and VIB noise; ignored unless train
  latentode::EncodeOptions ode;
};

struct Output {
  Var z;  // VIB latent fed to the scorer
  Var logits, probs;
  Var cls, kl, temporal, sparse;
  hypergat::SoftIncidence incidence;
  hypergat::ForwardTrace hypergraph;
  fusion::Trace fusion;
  latentode::Trajectory trajectory;
  Var velocity, acceleration;
};

/// Row-wise template assignment for unit-norm embeddings (n, d) against
/// prototypes (J, d); row i equals template_assign(emb[i], protos).probs.
inline Var template_probs(Var emb, Var protos) {
  Var cos = div(matmul(emb, transpose(protos)), sqrt(sum(square(protos), 1)));
  return softmax(scale(cos, 1.0 / encoders::kTemplateTemperature), 1);
}

inline Output forward(const Bound& b, const Prepared& p, const Dims& d, const Vocabularies& v,
                      const ForwardOptions& opt, double label_smoothing) {
  Tape& tape = b.tape();
  Output out;
  SeededRng* rng = opt.train ? opt.rng : nullptr;

  // Hypergraph over services.
  Var h0 = add(linear(tape.constant(p.vertex_stats), b["model.vertex.W_in"], b["model.vertex.b_in"]),
               b["model.vertex.emb"]);
  const auto hg = hypergat::Params::bind(b);
  out.incidence = hypergat::soft_incidence(p.hyperedges, h0, hg, opt.tau, rng);
  out.hypergraph = hypergat::hypergat_forward(h0, out.incidence, hg);
  if (out.incidence.num_edges()) {
    out.temporal = hypergat::temporal_causal_loss(
        out.incidence.values, hypergat::pairwise_attention(out.incidence, out.hypergraph.layers.back()), p.onsets);
  } else {
    out.temporal = tape.scalar(0.0);
  }
  out.sparse = hypergat::sparsity_loss(out.incidence.values);

  // Log tokens: hashed embedding, soft template assignment, service embedding.
  const std::size_t nl = p.log_service.size();
  std::optional<Var> log_tokens;
  Var log_means = tape.constant(Tensor(Shape{d.grid, d.model}));
  if (nl) {
    Var protos = b["model.log.prototypes"];
    Var emb = tape.constant(p.log_embeddings);
    Var assign = template_probs(emb, protos);
    log_tokens = add(linear(concat({emb, assign}, 1), b["model.log.W"], b["model.log.b"]),
                     gather_rows(b["model.log.service"], p.log_service));
    log_means = matmul(tape.constant(p.log_bucket_mean), *log_tokens);
  }

  std::optional<Var> trace_tokens;
  if (!p.spans.spans.empty()) {
    Var x = encoders::span_features(p.spans, b["encoders.service_emb"]);
    trace_tokens = encoders::trace_gat(x, p.span_neighbourhood, encoders::TraceGatParams::bind(b, d.trace_layers)).h;
  }

  Var dcc = encoders::metric_dcc(tape.constant(p.metric_window), encoders::DccParams::bind(b, d.dcc_layers));

  // Latent dynamics over the grid: x_k = [mean log token ; metric token].
  const auto field = latentode::FieldParams::bind(b);
  const auto gru = latentode::GruParams::bind(b);
  Var xs_all = concat({log_means, dcc}, 1);
  std::vector<double> times;
  std::vector<Var> xs;
  const double step_min = p.window_minutes / static_cast<double>(d.grid);
  for (std::size_t k = 0; k < d.grid; ++k) {
    times.push_back(static_cast<double>(k + 1) * step_min);
    xs.push_back(reshape(slice(xs_all, 0, k, k + 1), {2 * d.model}));
  }
  out.trajectory = latentode::ode_rnn_encode(times, xs, tape.constant(Tensor(Shape{d.model})), field, gru, opt.ode, 0.0);
  Var zN = out.trajectory.final_state();
  const auto kin = latentode::velocity_acceleration(zN, times.back(), field);
  out.velocity = reshape(kin.velocity, {1});
  out.acceleration = reshape(kin.acceleration, {1});
  Var ode_token = reshape(linear(zN, b["model.ode.W"], b["model.ode.b"]), {1, d.model});
  Var metric_tokens = concat({dcc, ode_token}, 0);

  std::optional<Var> entity_tokens;
  if (!p.entities.empty()) {
    std::vector<Var> tables;
    for (const char* a : kEntityAttributeNames) tables.push_back(b[std::string("model.entity.") + a]);
    entity_tokens = add(encoders::entity_tokens(p.entities, v.entity, tables),
                        gather_rows(out.hypergraph.h, p.entity_service));
  }
  std::optional<Var> event_tokens;
  if (!p.events.empty())
    event_tokens = encoders::event_tokens(p.events, v.events, b["model.event.types"], field.B.value());

  out.fusion = fusion::forward({log_tokens, trace_tokens, metric_tokens, entity_tokens, event_tokens}, p.context,
                               {out.velocity, out.acceleration}, fusion::Params::bind(b), d.heads);

  const auto vib = objective::vib_sample(out.fusion.final, objective::VibParams::bind(b), rng, opt.train);
  out.z = vib.z;
  out.kl = vib.kl;
  out.logits = objective::score_candidates(vib.z, p.candidates, objective::ScorerParams::bind(b));
  out.probs = sigmoid(out.logits);
  out.cls = objective::classification_loss(out.probs, p.labels, label_smoothing);
  return out;
}

/// Eval-mode (noise-free) soft incidence only; cheap enough to track the
/// membership entropy during training.
inline double eval_membership_entropy(const ParamStore& store, const Prepared& p, double tau) {
  Tape tape;
  Bound b(tape, store);
  Var h0 = add(linear(tape.constant(p.vertex_stats), b["model.vertex.W_in"], b["model.vertex.b_in"]),
               b["model.vertex.emb"]);
  return hypergat::mean_membership_entropy(hypergat::soft_incidence(p.hyperedges, h0, hypergat::Params::bind(b), tau, nullptr));
}

}  // namespace hyperode::model
