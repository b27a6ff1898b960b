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

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hyperode/params.hpp"
#include "hyperode/rng.hpp"

namespace hyperode {

/// |analytic - numeric| / (|analytic| + |numeric| + 1e-8)
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-8);
}

using ScalarFn = std::function<Var(Tape&, Var)>;

/// Max relative error between the tape gradient of f at x and central
/// differences with the given step.
inline double grad_check(const ScalarFn& f, const Tensor& x, double step = 1e-5) {
  Tape tape;
  Var xv = tape.leaf(x);
  Var loss = f(tape, xv);
  const Tensor analytic = tape.backward(loss)[xv];

  auto eval = [&](const Tensor& at) {
    Tape t;
    return f(t, t.leaf(at)).item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double fp = eval(probe);
    probe[i] = orig - step;
    const double fm = eval(probe);
    probe[i] = orig;
    worst = std::max(worst, relative_error(analytic[i], (fp - fm) / (2.0 * step)));
  }
  return worst;
}

struct ParamCoordinate {
  std::string name;
  std::size_t index;
};

/// Picks `count` random (parameter, element) pairs among trainable parameters,
/// weighting every element equally.
inline std::vector<ParamCoordinate> sample_coordinates(const ParamStore& store, std::size_t count, SeededRng& rng) {
  std::vector<ParamCoordinate> all;
  for (const auto& [name, t] : store.all()) {
    if (store.frozen(name)) continue;
    for (std::size_t i = 0; i < t.size(); ++i) all.push_back({name, i});
  }
  std::vector<ParamCoordinate> out;
  for (std::size_t k = 0; k < count && !all.empty(); ++k) {
    const std::size_t j = rng.index(all.size());
    out.push_back(all[j]);
    all.erase(all.begin() + static_cast<std::ptrdiff_t>(j));
  }
  return out;
}

using ParamLossFn = std::function<Var(const Bound&)>;

/// grad_check over named parameter coordinates of a store.
inline double grad_check_params(const ParamLossFn& f, ParamStore& store,
                                const std::vector<ParamCoordinate>& coords, double step = 1e-5) {
  std::map<std::string, Tensor> analytic;
  {
    Tape tape;
    Bound b(tape, store);
    Var loss = f(b);
    analytic = b.collect(tape.backward(loss), store);
  }
  auto eval = [&]() {
    Tape tape;
    Bound b(tape, store);
    return f(b).item();
  };
  double worst = 0.0;
  for (const auto& c : coords) {
    double& slot = store.at(c.name)[c.index];
    const double orig = slot;
    slot = orig + step;
    const double fp = eval();
    slot = orig - step;
    const double fm = eval();
    slot = orig;
    worst = std::max(worst, relative_error(analytic.at(c.name)[c.index], (fp - fm) / (2.0 * step)));
  }
  return worst;
}

}  // namespace hyperode
