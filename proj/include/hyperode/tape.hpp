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

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hyperode/tensor.hpp"

namespace hyperode {

using NodeId = std::size_t;

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; the tape owns the data.
struct Var {
  Tape* tape = nullptr;
  NodeId id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool requires_grad() const;
};

/// Passed to a node's backward function. Exposes the upstream gradient and
/// lazily allocated accumulators for each input that needs a gradient.
class BackwardContext {
 public:
  BackwardContext(Tape& tape, NodeId node) : tape_(tape), node_(node) {}

  const Tensor& grad() const;
  const Tensor& out() const;
  const Tensor& in(std::size_t k) const;
  bool needs(std::size_t k) const;
  /// Accumulator for input k, zero-initialised on first access.
  Tensor& grad_in(std::size_t k);

 private:
  Tape& tape_;
  NodeId node_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Result of a reverse sweep: one gradient per node id. Nodes that the sweep
/// never reached report a zero tensor of their own shape.
class Gradients {
 public:
  Gradients() = default;
  Gradients(const Tape* tape, std::vector<Tensor> grads) : tape_(tape), grads_(std::move(grads)) {}

  Tensor operator[](Var v) const;
  Tensor at(NodeId id) const;
  bool touched(NodeId id) const { return id < grads_.size() && !grads_[id].empty(); }

 private:
  const Tape* tape_ = nullptr;
  std::vector<Tensor> grads_;
};

/// Append-only record of primitive applications. Nodes are appended in
/// evaluation order, so that order is a valid topological order and the
/// graph is acyclic by construction.
class Tape {
 public:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    const char* op = "leaf";
  };

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Tracked leaf (a parameter or an input we differentiate against).
  Var leaf(Tensor value) { return push(Node{std::move(value), true, {}, {}, "leaf"}); }
  /// Untracked constant.
  Var constant(Tensor value) { return push(Node{std::move(value), false, {}, {}, "const"}); }
  Var scalar(double v) { return constant(Tensor::scalar(v)); }

  /// Records the output of a primitive. The backward function is dropped when
  /// no input needs a gradient.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(op, std::move(value), std::vector<Var>(inputs), std::move(fn));
  }
  Var record(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
      if (v.tape != this) throw std::invalid_argument(std::string(op) + ": input from another tape");
      n.inputs.push_back(v.id);
      n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss.
  Gradients backward(Var loss) {
    if (loss.size() != 1) {
      throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    return backward(loss, Tensor(loss.shape(), 1.0));
  }

  /// Reverse sweep with an explicit output cotangent (vector-Jacobian product).
  Gradients backward(Var out, Tensor seed) {
    if (out.tape != this) throw std::invalid_argument("backward: variable from another tape");
    if (seed.shape() != out.shape()) {
      throw ShapeError("backward seed shape " + shape_str(seed.shape()) + " != output " +
                       shape_str(out.shape()));
    }
    grads_.assign(out.id + 1, Tensor{});
    grads_[out.id] = std::move(seed);
    for (NodeId i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (grads_[i].empty() || !n.backward) continue;
      BackwardContext ctx(*this, i);
      n.backward(ctx);
    }
    return Gradients(this, std::move(grads_));
  }

 private:
  friend class BackwardContext;

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

inline const Tensor& Var::value() const { return tape->node(id).value; }
inline bool Var::requires_grad() const { return tape->node(id).requires_grad; }

inline const Tensor& BackwardContext::grad() const { return tape_.grads_[node_]; }
inline const Tensor& BackwardContext::out() const { return tape_.nodes_[node_].value; }
inline const Tensor& BackwardContext::in(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs[k]].value;
}
inline bool BackwardContext::needs(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs[k]].requires_grad;
}
inline Tensor& BackwardContext::grad_in(std::size_t k) {
  const NodeId id = tape_.nodes_[node_].inputs[k];
  Tensor& g = tape_.grads_[id];
  if (g.empty()) g = Tensor(tape_.nodes_[id].value.shape(), 0.0);
  return g;
}

inline Tensor Gradients::at(NodeId id) const {
  if (id < grads_.size() && !grads_[id].empty()) return grads_[id];
  return Tensor(tape_->node(id).value.shape(), 0.0);
}
inline Tensor Gradients::operator[](Var v) const { return at(v.id); }

}  // namespace hyperode
