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

// Run configuration with strict JSON parsing.

#pragma once

#include <cstdlib>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "hyperode/model.hpp"
#include "hyperode/objective.hpp"

namespace hyperode {

/// Bad user input: flags, configuration, incompatible files. Maps to exit 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string dataset;
  std::string checkpoint;
  std::string report;
  std::uint64_t seed = 7;
  std::size_t epochs = 30;  // 0 writes the initialised model
  std::size_t batch_size = 4;
  double lr = 3e-4;
  double weight_decay = 0.01;
  double warmup = 0.1;
  objective::LossWeights loss;
  model::Dims dims;
  double ode_rtol = 1e-6;
  double ode_atol = 1e-8;
  std::string gradient = "adjoint";  // or "direct"

  void validate() const {
    if (batch_size == 0) throw UsageError("config: batch_size must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw UsageError("config: lr must be positive");
    if (!(weight_decay >= 0.0)) throw UsageError("config: weight_decay must be non-negative");
    if (!(warmup >= 0.0 && warmup < 1.0)) throw UsageError("config: warmup must lie in [0, 1)");
    if (!(ode_rtol > 0.0 && ode_atol > 0.0)) throw UsageError("config: solver tolerances must be positive");
    if (gradient != "adjoint" && gradient != "direct") throw UsageError("config: gradient must be adjoint or direct");
    try {
      loss.validate();
      dims.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("config: ") + e.what());
    }
  }

  latentode::EncodeOptions encode_options() const {
    latentode::EncodeOptions o;
    o.solver.rtol = ode_rtol;
    o.solver.atol = ode_atol;
    o.mode = gradient == "direct" ? latentode::GradientMode::kDirect : latentode::GradientMode::kAdjoint;
    return o;
  }
};

namespace config_detail {

class Reader {
 public:
  Reader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw UsageError(where_ + ": expected an object");
    for (auto it = j_.begin(); it != j_.end(); ++it) keys_.insert(it.key());
  }
  template <class T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    keys_.erase(key);
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!it->is_number_unsigned()) throw UsageError("");
      } else if constexpr (std::is_arithmetic_v<T>) {
        if (!it->is_number()) throw UsageError("");
      } else {
        if (!it->is_string()) throw UsageError("");
      }
      out = it->get<T>();
    } catch (const std::exception&) {
      throw UsageError(where_ + ": field '" + key + "' has the wrong type");
    }
  }
  const nlohmann::json* child(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    keys_.erase(key);
    return &*it;
  }
  void done() const {
    if (!keys_.empty()) throw UsageError(where_ + ": unknown field '" + *keys_.begin() + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> keys_;
};

}  // namespace config_detail

inline nlohmann::json dims_to_json(const model::Dims& d) {
  return {{"model", d.model},
          {"heads", d.heads},
          {"prototypes", d.prototypes},
          {"service_embedding", d.service_embedding},
          {"trace_layers", d.trace_layers},
          {"dcc_layers", d.dcc_layers},
          {"ode_hidden", d.ode_hidden},
          {"time_enc", d.time_enc},
          {"fusion_hidden", d.fusion_hidden},
          {"vib_latent", d.vib_latent},
          {"rank", d.rank},
          {"grid", d.grid},
          {"max_log_tokens", d.max_log_tokens},
          {"max_spans", d.max_spans},
          {"hyperedge_max_size", d.hyperedge_max_size},
          {"hyperedge_max_count", d.hyperedge_max_count}};
}

inline model::Dims dims_from_json(const nlohmann::json& j) {
  model::Dims d;
  config_detail::Reader r(j, "config.dims");
  r.get("model", d.model);
  r.get("heads", d.heads);
  r.get("prototypes", d.prototypes);
  r.get("service_embedding", d.service_embedding);
  r.get("trace_layers", d.trace_layers);
  r.get("dcc_layers", d.dcc_layers);
  r.get("ode_hidden", d.ode_hidden);
  r.get("time_enc", d.time_enc);
  r.get("fusion_hidden", d.fusion_hidden);
  r.get("vib_latent", d.vib_latent);
  r.get("rank", d.rank);
  r.get("grid", d.grid);
  r.get("max_log_tokens", d.max_log_tokens);
  r.get("max_spans", d.max_spans);
  r.get("hyperedge_max_size", d.hyperedge_max_size);
  r.get("hyperedge_max_count", d.hyperedge_max_count);
  r.done();
  return d;
}

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& w = c.loss;
  return {{"dataset", c.dataset},
          {"checkpoint", c.checkpoint},
          {"report", c.report},
          {"seed", c.seed},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"warmup", c.warmup},
          {"loss",
           {{"alpha_ib", w.alpha_ib},
            {"alpha_temp", w.alpha_temp},
            {"alpha_causal", w.alpha_causal},
            {"alpha_sparse", w.alpha_sparse},
            {"lambda_grad", w.lambda_grad},
            {"label_smoothing", w.label_smoothing}}},
          {"dims", dims_to_json(c.dims)},
          {"solver", {{"rtol", c.ode_rtol}, {"atol", c.ode_atol}, {"gradient", c.gradient}}}};
}

/// Missing fields keep their defaults; unknown fields are rejected.
inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  config_detail::Reader r(j, "config");
  r.get("dataset", c.dataset);
  r.get("checkpoint", c.checkpoint);
  r.get("report", c.report);
  r.get("seed", c.seed);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("lr", c.lr);
  r.get("weight_decay", c.weight_decay);
  r.get("warmup", c.warmup);
  if (const auto* l = r.child("loss")) {
    config_detail::Reader lr(*l, "config.loss");
    lr.get("alpha_ib", c.loss.alpha_ib);
    lr.get("alpha_temp", c.loss.alpha_temp);
    lr.get("alpha_causal", c.loss.alpha_causal);
    lr.get("alpha_sparse", c.loss.alpha_sparse);
    lr.get("lambda_grad", c.loss.lambda_grad);
    lr.get("label_smoothing", c.loss.label_smoothing);
    lr.done();
  }
  if (const auto* d = r.child("dims")) c.dims = dims_from_json(*d);
  if (const auto* s = r.child("solver")) {
    config_detail::Reader sr(*s, "config.solver");
    sr.get("rtol", c.ode_rtol);
    sr.get("atol", c.ode_atol);
    sr.get("gradient", c.gradient);
    sr.done();
  }
  r.done();
  c.validate();
  return c;
}

/// Reads a config file; RCA_SEED in the environment overrides the seed.
inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  RunConfig c = config_from_json(j);
  if (const char* s = std::getenv("RCA_SEED")) {
    try {
      std::size_t used = 0;
      c.seed = std::stoull(s, &used);
      if (used != std::string(s).size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw UsageError(std::string("RCA_SEED must be a non-negative integer, got '") + s + "'");
    }
  }
  return c;
}

}  // namespace hyperode
