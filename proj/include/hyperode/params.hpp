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

#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

#include "json.hpp"

#include "hyperode/tape.hpp"

namespace hyperode {

/// Named parameter tensors, e.g. "hypergat.layer0.W_v". Frozen entries are
/// stored and checkpointed but never bound as tracked leaves, so they receive
/// no gradient and the optimizer leaves them alone.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value, bool frozen = false) {
    if (!values_.emplace(name, std::move(value)).second) {
      throw std::invalid_argument("duplicate parameter " + name);
    }
    if (frozen) frozen_.insert(name);
  }

  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  bool frozen(const std::string& name) const { return frozen_.count(name) != 0; }
  Tensor& at(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
  }

  const std::map<std::string, Tensor>& all() const { return values_; }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : values_) n += v.size();
    return n;
  }

 private:
  std::map<std::string, Tensor> values_;
  std::set<std::string> frozen_;
};

/// Parameters placed on one tape for one forward pass.
class Bound {
 public:
  Bound(Tape& tape, const ParamStore& store) : tape_(&tape) {
    for (const auto& [name, value] : store.all()) {
      vars_.emplace(name, store.frozen(name) ? tape.constant(value) : tape.leaf(value));
    }
  }

  Var operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::out_of_range("parameter not bound: " + name);
    return it->second;
  }
  Var get(std::string_view prefix, std::string_view name) const {
    std::string key(prefix);
    key += '.';
    key += name;
    return (*this)[key];
  }
  Tape& tape() const { return *tape_; }
  const std::map<std::string, Var>& all() const { return vars_; }

  /// Gradient per trainable parameter name.
  std::map<std::string, Tensor> collect(const Gradients& g, const ParamStore& store) const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : vars_) {
      if (!store.frozen(name)) out.emplace(name, g[v]);
    }
    return out;
  }

 private:
  Tape* tape_;
  std::map<std::string, Var> vars_;
};

/// Checkpoint document: {"<path>": {"shape": [...], "data": [...]}, ...}.
/// Keys starting with "__" carry metadata rather than parameters.
inline nlohmann::json params_to_json(const ParamStore& store) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, t] : store.all()) {
    j[name] = {{"shape", t.shape()}, {"data", t.data()}};
    if (store.frozen(name)) j[name]["frozen"] = true;
  }
  return j;
}

inline ParamStore params_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("checkpoint must be a JSON object");
  ParamStore store;
  for (const auto& [name, entry] : j.items()) {
    if (name.rfind("__", 0) == 0) continue;
    for (const auto& [k, _] : entry.items()) {
      if (k != "shape" && k != "data" && k != "frozen") {
        throw std::invalid_argument("checkpoint entry " + name + " has unknown field " + k);
      }
    }
    Shape shape = entry.at("shape").get<Shape>();
    std::vector<double> data = entry.at("data").get<std::vector<double>>();
    store.add(name, Tensor(std::move(shape), std::move(data)), entry.value("frozen", false));
  }
  return store;
}

}  // namespace hyperode
