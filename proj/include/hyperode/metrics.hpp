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

// Evaluation metrics for root-cause ranking.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace hyperode::metrics {

inline constexpr double kThreshold = 0.5;

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  void add(bool predicted, bool actual) {
    if (predicted && actual) ++tp;
    else if (predicted) ++fp;
    else if (actual) ++fn;
    else ++tn;
  }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }

  // Zero denominators yield 0.
  double precision() const { return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
  double recall() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  double mcc() const {
    const double a = static_cast<double>(tp), b = static_cast<double>(fp), c = static_cast<double>(fn),
                 d = static_cast<double>(tn);
    const double den = (a + b) * (a + c) * (d + b) * (d + c);
    return den > 0 ? (a * d - b * c) / std::sqrt(den) : 0.0;
  }
};

/// Thresholds probabilities at 0.5 (inclusive).
inline Confusion confusion(const std::vector<double>& probs, const std::vector<int>& labels,
                           double threshold = kThreshold) {
  if (probs.size() != labels.size()) throw std::invalid_argument("confusion: size mismatch");
  Confusion c;
  for (std::size_t i = 0; i < probs.size(); ++i) c.add(probs[i] >= threshold, labels[i] == 1);
  return c;
}

/// Mean reciprocal rank over 1-based ranks.
inline double mrr(const std::vector<std::size_t>& ranks) {
  if (ranks.empty()) throw std::invalid_argument("mrr: no ranks");
  double s = 0;
  for (std::size_t r : ranks) {
    if (r == 0) throw std::invalid_argument("mrr: ranks are 1-based");
    s += 1.0 / static_cast<double>(r);
  }
  return s / static_cast<double>(ranks.size());
}

/// ROC AUC via the Mann-Whitney statistic with average ranks for ties.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0, neg = 0, rsum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == 1) {
      pos += 1;
      rsum += rank[i];
    } else {
      neg += 1;
    }
  }
  if (pos == 0 || neg == 0) throw std::invalid_argument("roc_auc: need both classes");
  return (rsum - pos * (pos + 1) / 2.0) / (pos * neg);
}

}  // namespace hyperode::metrics
