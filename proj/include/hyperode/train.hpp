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

// Training loop, evaluation report, per-incident explanation and checkpoints.

#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hyperode/config.hpp"
#include "hyperode/datapipe.hpp"
#include "hyperode/metrics.hpp"
#include "hyperode/model.hpp"

namespace hyperode::train {

using nlohmann::json;

inline constexpr const char* kCheckpointFormat = "hyperode-rca-checkpoint/1";
inline constexpr double kMembershipThreshold = 0.5;  // hyperedge membership drawn in the DOT view

struct EpochStats {
  std::size_t epoch = 0;
  double total = 0, cls = 0, kl = 0, temporal = 0, causal = 0, sparse = 0;
  double tau = 1.0;         // temperature at the epoch's last step
  double lr_scale = 0.0;    // schedule multiplier at the epoch's last step
  double entropy = 0.0;     // mean eval-mode membership entropy over training incidents

  json to_json() const {
    return {{"epoch", epoch},     {"total", total},       {"cls", cls},         {"kl", kl},
            {"temporal", temporal}, {"causal", causal},   {"sparse", sparse},   {"tau", tau},
            {"lr_scale", lr_scale}, {"entropy", entropy}};
  }
};

struct Model {
  ParamStore store;
  model::Vocabularies vocab;
  model::Dims dims;
  double tau = hypergat::kTauEnd;  // temperature used in evaluation
  latentode::EncodeOptions ode;     // solver settings used in training
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> history;
  std::vector<double> tau_per_step;
};

inline std::vector<model::Prepared> prepare_split(const datapipe::Dataset& d, const model::Dims& dims,
                                                  const std::string& split) {
  std::vector<model::Prepared> out;
  for (const auto& inc : d.incidents)
    if (split == "all" || inc.split == split) out.push_back(model::prepare(inc, d.manifest, dims));
  return out;
}

namespace detail {

/// Sum of squared classifier-head gradients of the mean classification loss
/// of one environment, with the latent representation held fixed.
inline double head_grad_sq_norm(const ParamStore& store, const std::vector<const model::Prepared*>& incidents,
                                const std::vector<Tensor>& latents, double eps) {
  Tape tape;
  Bound b(tape, store);
  const auto scorer = objective::ScorerParams::bind(b);
  Var acc = tape.scalar(0.0);
  for (std::size_t i = 0; i < incidents.size(); ++i) {
    Var probs = sigmoid(objective::score_candidates(tape.constant(latents[i]), incidents[i]->candidates, scorer));
    acc = add(acc, objective::classification_loss(probs, incidents[i]->labels, eps));
  }
  acc = scale(acc, 1.0 / static_cast<double>(incidents.size()));
  const Gradients g = tape.backward(acc);
  double s = 0.0;
  for (Var v : {scorer.E_svc, scorer.E_fault, scorer.U, scorer.V, scorer.w_z, scorer.w_c, scorer.b}) {
    const Tensor gv = g[v];
    for (double x : gv.data()) s += x * x;
  }
  return s;
}

}  // namespace detail

/// Batch objective: per-incident terms averaged over the batch plus the
/// causal penalty across the two time environments when both are present.
struct BatchLoss {
  Var total;
  objective::LossComponents parts;
  std::vector<model::Output> outputs;
};

inline BatchLoss batch_loss(const Bound& b, const ParamStore& store, const std::vector<const model::Prepared*>& batch,
                            const std::vector<int>& env, const model::Vocabularies& vocab, const RunConfig& cfg,
                            const model::ForwardOptions& fo) {
  Tape& tape = b.tape();
  BatchLoss out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  Var cls = tape.scalar(0.0), kl = cls, temporal = cls, sparse = cls;
  std::array<std::vector<std::size_t>, 2> members;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.outputs.push_back(model::forward(b, *batch[i], cfg.dims, vocab, fo, cfg.loss.label_smoothing));
    const auto& o = out.outputs.back();
    cls = add(cls, scale(o.cls, inv));
    kl = add(kl, scale(o.kl, inv));
    temporal = add(temporal, scale(o.temporal, inv));
    sparse = add(sparse, scale(o.sparse, inv));
    members[static_cast<std::size_t>(env[i])].push_back(i);
  }
  Var causal = tape.scalar(0.0);
  if (!members[0].empty() && !members[1].empty()) {
    std::vector<Var> env_losses;
    std::vector<double> norms;
    for (const auto& m : members) {
      Var l = tape.scalar(0.0);
      std::vector<const model::Prepared*> incs;
      std::vector<Tensor> latents;
      for (std::size_t i : m) {
        l = add(l, out.outputs[i].cls);
        incs.push_back(batch[i]);
        latents.push_back(out.outputs[i].z.value());
      }
      env_losses.push_back(scale(l, 1.0 / static_cast<double>(m.size())));
      norms.push_back(cfg.loss.lambda_grad > 0.0
                          ? detail::head_grad_sq_norm(store, incs, latents, cfg.loss.label_smoothing)
                          : 0.0);
    }
    causal = objective::causal_penalty(env_losses, norms, cfg.loss.lambda_grad);
  }
  out.parts = {cls, kl, temporal, causal, sparse};
  out.total = objective::total_loss(out.parts, cfg.loss);
  return out;
}

/// Environment label per incident: 1 when it starts after the median start.
inline std::vector<int> time_environments(const std::vector<model::Prepared>& incidents) {
  std::vector<double> starts;
  for (const auto& p : incidents) starts.push_back(p.start);
  const double med = starts.empty() ? 0.0 : datapipe::median(starts);
  std::vector<int> env;
  for (const auto& p : incidents) env.push_back(p.start > med ? 1 : 0);
  return env;
}

inline TrainResult train(const datapipe::Dataset& data, const RunConfig& cfg,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
  cfg.validate();
  TrainResult res;
  Model& m = res.model;
  m.dims = cfg.dims;
  m.vocab = model::Vocabularies::build(data, "train");
  const auto incidents = prepare_split(data, cfg.dims, "train");
  if (incidents.empty()) throw UsageError("dataset has no training incidents");
  const auto env = time_environments(incidents);

  SeededRng rng(cfg.seed);
  model::init_params(m.store, cfg.dims, m.vocab, rng);
  model::init_prototypes(m.store, incidents, cfg.dims, rng);
  objective::AdamW opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

  const std::size_t n = incidents.size();
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * per_epoch;
  const std::size_t tau_span = std::max<std::size_t>(total_steps - 1, 1);
  model::ForwardOptions fo;
  fo.train = true;
  fo.rng = &rng;
  fo.ode = cfg.encode_options();

  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    EpochStats st;
    st.epoch = epoch;
    for (std::size_t s = 0; s < n; s += cfg.batch_size) {
      std::vector<const model::Prepared*> batch;
      std::vector<int> benv;
      for (std::size_t i = s; i < std::min(n, s + cfg.batch_size); ++i) {
        batch.push_back(&incidents[order[i]]);
        benv.push_back(env[order[i]]);
      }
      fo.tau = hypergat::anneal_tau(std::min(step, tau_span), tau_span);
      res.tau_per_step.push_back(fo.tau);
      const double lr_scale = objective::lr_schedule(step + 1, total_steps, cfg.warmup);

      Tape tape;
      Bound b(tape, m.store);
      const BatchLoss bl = batch_loss(b, m.store, batch, benv, m.vocab, cfg, fo);
      const auto grads = b.collect(tape.backward(bl.total), m.store);
      opt.step(m.store, grads, lr_scale);
      encoders::renormalize_rows(m.store.at("model.log.prototypes"));

      const double w = static_cast<double>(batch.size()) / static_cast<double>(n);
      st.total += w * bl.total.item();
      st.cls += w * bl.parts.cls.item();
      st.kl += w * bl.parts.kl.item();
      st.temporal += w * bl.parts.temporal.item();
      st.causal += w * bl.parts.causal.item();
      st.sparse += w * bl.parts.sparse.item();
      st.tau = fo.tau;
      st.lr_scale = lr_scale;
      ++step;
    }
    for (const auto& p : incidents) st.entropy += model::eval_membership_entropy(m.store, p, st.tau);
    st.entropy /= static_cast<double>(n);
    res.history.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  m.tau = fo.tau;
  m.ode = fo.ode;
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

struct IncidentResult {
  std::string id;
  std::string fault;
  std::vector<double> probs;
  std::vector<std::size_t> ranking;
  std::size_t truth = 0;
  std::size_t rank = 0;  // 1-based rank of the truth
};

inline IncidentResult score_incident(const Model& m, const model::Prepared& p, model::Output* keep = nullptr,
                                     Tape* tape = nullptr) {
  Tape local;
  Tape& t = tape ? *tape : local;
  Bound b(t, m.store);
  model::ForwardOptions fo;
  fo.tau = m.tau;
  fo.ode = m.ode;
  model::Output out = model::forward(b, p, m.dims, m.vocab, fo, 0.0);
  IncidentResult r;
  r.id = p.id;
  r.fault = p.truth_fault;
  r.probs = out.probs.value().data();
  r.ranking = objective::rank_candidates(out.logits.value(), p.candidates);
  r.truth = p.truth;
  r.rank = static_cast<std::size_t>(std::find(r.ranking.begin(), r.ranking.end(), p.truth) - r.ranking.begin()) + 1;
  if (keep) *keep = out;
  return r;
}

inline json metric_block(const std::vector<IncidentResult>& rs) {
  metrics::Confusion c;
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::size_t> ranks;
  for (const auto& r : rs) {
    for (std::size_t k = 0; k < r.probs.size(); ++k) {
      const bool pos = k == r.truth;
      c.add(r.probs[k] >= metrics::kThreshold, pos);
      scores.push_back(r.probs[k]);
      labels.push_back(pos ? 1 : 0);
    }
    ranks.push_back(r.rank);
  }
  json j = {{"f1", c.f1()},   {"precision", c.precision()}, {"recall", c.recall()},
            {"mcc", c.mcc()}, {"mrr", metrics::mrr(ranks)}, {"n_incidents", rs.size()}};
  const bool both = std::count(labels.begin(), labels.end(), 1) && std::count(labels.begin(), labels.end(), 0);
  j["auc"] = both ? json(metrics::roc_auc(scores, labels)) : json(nullptr);
  j["confusion"] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
  return j;
}

struct Report {
  json document;
  std::vector<IncidentResult> incidents;
  double metric(const char* k) const { return document.at(k).get<double>(); }
};

/// Evaluation-mode metrics over one split ("all" for every incident).
inline Report evaluate(const Model& m, const datapipe::Dataset& data, const std::string& split) {
  try {
    m.vocab.check_compatible(data.manifest);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto incidents = prepare_split(data, m.dims, split);
  if (incidents.empty()) throw UsageError("no incidents in split '" + split + "'");
  Report rep;
  std::map<std::string, std::vector<IncidentResult>> by_fault;
  for (const auto& p : incidents) {
    rep.incidents.push_back(score_incident(m, p));
    by_fault[rep.incidents.back().fault].push_back(rep.incidents.back());
  }
  rep.document = metric_block(rep.incidents);
  rep.document["split"] = split;
  json per = json::object();
  for (const auto& [f, rs] : by_fault) per[f] = metric_block(rs);
  rep.document["per_fault_type"] = per;
  return rep;
}

// ---------------------------------------------------------------------------
// Explanation

struct Explanation {
  json document;
  std::string dot;
};

inline std::string dot_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

inline Explanation explain(const Model& m, const datapipe::Dataset& data, const std::string& incident_id,
                           std::size_t top_k = 10) {
  try {
    m.vocab.check_compatible(data.manifest);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const datapipe::Incident* inc = data.find(incident_id);
  if (!inc) throw UsageError("unknown incident id '" + incident_id + "'");
  const model::Prepared p = model::prepare(*inc, data.manifest, m.dims);
  Tape tape;
  model::Output out;
  const IncidentResult r = score_incident(m, p, &out, &tape);
  const auto& names = data.manifest.services;

  json edges = json::array();
  const Tensor& H = out.incidence.values.value();
  const Tensor& logits = out.incidence.logits.value();
  for (std::size_t e = 0; e < p.hyperedges.size(); ++e) {
    json members = json::array(), soft = json::array();
    for (std::size_t v : p.hyperedges[e].members) {
      members.push_back(names[v]);
      soft.push_back(H.at(v, e));
    }
    edges.push_back({{"id", "e" + std::to_string(e)},
                     {"source", p.hyperedges[e].source == hypergat::CandidateSource::kCallMotif ? "call-motif"
                                                                                               : "cooccur-clique"},
                     {"logit", logits[e]},
                     {"members", members},
                     {"soft_values", soft}});
  }
  // Vertex -> hyperedge attention of every layer, member entries only.
  json attention = json::array();
  for (std::size_t l = 0; l < out.hypergraph.layers.size(); ++l) {
    const Tensor& alpha = out.hypergraph.layers[l].alpha.value();
    for (std::size_t e = 0; e < p.hyperedges.size(); ++e)
      for (std::size_t v : p.hyperedges[e].members)
        attention.push_back({{"layer", l}, {"vertex", names[v]}, {"hyperedge", "e" + std::to_string(e)},
                             {"alpha", alpha.at(v, e)}});
  }

  json pooling = json::object();
  for (std::size_t k = 0; k < fusion::kModalities; ++k)
    pooling[fusion::kModalityNames[k]] = out.fusion.pooling[k].value().data();
  const Tensor& beta = out.fusion.beta.value();
  json beta_rows = json::array();
  for (std::size_t i = 0; i < fusion::kModalities; ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < fusion::kModalities; ++j) row.push_back(beta.at(i, j));
    beta_rows.push_back(row);
  }

  json top = json::array();
  for (std::size_t i = 0; i < std::min(top_k, r.ranking.size()); ++i) {
    const std::size_t k = r.ranking[i];
    top.push_back({{"rank", i + 1},
                   {"service", names[p.candidates[k].service]},
                   {"fault", data.manifest.faults[p.candidates[k].fault]},
                   {"probability", r.probs[k]},
                   {"is_truth", k == p.truth}});
  }

  json onsets = json::object();
  for (std::size_t v = 0; v < names.size(); ++v)
    onsets[names[v]] = p.onsets[v] < p.window_minutes ? json(p.onsets[v]) : json(nullptr);

  json traj = json::array();
  const auto w = latentode::FieldParams::bind(Bound(tape, m.store)).weights();
  for (std::size_t i = 0; i < out.trajectory.times.size(); ++i) {
    const Tensor& z = out.trajectory.post[i].value();
    const auto k = latentode::velocity_acceleration(z, out.trajectory.times[i], w);
    traj.push_back({{"t", out.trajectory.times[i]}, {"z_norm", l2(z)}, {"velocity", k.velocity},
                    {"acceleration", k.acceleration}});
  }

  Explanation ex;
  ex.document = {{"incident", p.id},
                 {"tau", m.tau},
                 {"services", names},
                 {"onsets", onsets},
                 {"hyperedges", edges},
                 {"attention", attention},
                 {"modalities", fusion::kModalityNames},
                 {"routing", beta_rows},
                 {"pooling", pooling},
                 {"kinematics", {{"velocity", out.velocity.item()}, {"acceleration", out.acceleration.item()}}},
                 {"trajectory", traj},
                 {"truth", {{"service", names[p.candidates[p.truth].service]}, {"fault", p.truth_fault}, {"rank", r.rank}}},
                 {"top_candidates", top}};

  // Bipartite rendering of the thresholded hypergraph (memberships > 0.5).
  std::ostringstream dot;
  dot << "graph hypergraph {\n  node [fontname=\"Helvetica\"];\n";
  for (const auto& s : names) dot << "  " << dot_quote(s) << " [shape=ellipse];\n";
  for (std::size_t e = 0; e < p.hyperedges.size(); ++e) {
    bool kept = false;
    for (std::size_t v : p.hyperedges[e].members) kept = kept || H.at(v, e) > kMembershipThreshold;
    if (!kept) continue;
    const std::string id = "e" + std::to_string(e);
    dot << "  " << dot_quote(id) << " [shape=box];\n";
    for (std::size_t v : p.hyperedges[e].members) {
      if (H.at(v, e) <= kMembershipThreshold) continue;
      std::ostringstream lab;
      lab.precision(3);
      lab << H.at(v, e);
      dot << "  " << dot_quote(names[v]) << " -- " << dot_quote(id) << " [label=" << dot_quote(lab.str()) << "];\n";
    }
  }
  dot << "}\n";
  ex.dot = dot.str();
  return ex;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline json checkpoint_json(const Model& m, const RunConfig& cfg) {
  json j = params_to_json(m.store);
  j["__meta__"] = {{"format", kCheckpointFormat},
                   {"dims", dims_to_json(m.dims)},
                   {"vocab", m.vocab.to_json()},
                   {"tau", m.tau},
                   {"config", to_json(cfg)}};
  return j;
}

inline void save_checkpoint(const std::string& path, const Model& m, const RunConfig& cfg) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << checkpoint_json(m, cfg).dump() << '\n';
  if (!f) throw std::runtime_error("failed writing " + path);
}

inline Model model_from_json(const json& j) {
  if (!j.is_object() || !j.contains("__meta__")) throw UsageError("checkpoint: missing metadata");
  const json& meta = j.at("__meta__");
  if (meta.value("format", "") != kCheckpointFormat) throw UsageError("checkpoint: unsupported format");
  Model m;
  try {
    m.store = params_from_json(j);
    m.dims = dims_from_json(meta.at("dims"));
    m.vocab = model::Vocabularies::from_json(meta.at("vocab"));
    m.tau = meta.at("tau").get<double>();
    const json& solver = meta.at("config").at("solver");
    m.ode.solver.rtol = solver.at("rtol").get<double>();
    m.ode.solver.atol = solver.at("atol").get<double>();
    m.ode.mode = solver.at("gradient").get<std::string>() == "direct" ? latentode::GradientMode::kDirect
                                                                      : latentode::GradientMode::kAdjoint;
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(std::string("checkpoint: ") + e.what());
  }
  return m;
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open checkpoint " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw UsageError("checkpoint " + path + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace hyperode::train
