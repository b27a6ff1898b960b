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

// Dataset model, preprocessing (robust normalisation, gap imputation), the
// synthetic incident generator and newline-delimited JSON I/O.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "hyperode/rng.hpp"

namespace hyperode::datapipe {

inline constexpr double kMadScale = 1.4826;
inline constexpr double kMadEps = 1e-8;
inline constexpr double kGridStep = 30.0;         // seconds
inline constexpr double kShortGap = 300.0;        // seconds; longer gaps decay
inline constexpr double kDecayPerMinute = 0.1;
inline constexpr const char* kFormat = "hyperode-rca/1";

inline const std::vector<std::string>& fault_types() {
  static const std::vector<std::string> v{"cpu-stress", "memory-leak", "network-delay", "pod-kill", "io-latency"};
  return v;
}
inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> v{"cpu", "memory", "latency", "errors"};
  return v;
}
inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> v{"train", "val", "test"};
  return v;
}

// ---------------------------------------------------------------------------
// Robust normalisation

struct MadStats {
  double median = 0.0;
  double mad = 0.0;
  double apply(double v) const { return (v - median) / (kMadScale * mad + kMadEps); }
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty sequence");
  const std::size_t n = v.size(), mid = n / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (n % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

inline MadStats mad_stats(const std::vector<double>& baseline) {
  if (baseline.size() < 3) throw std::invalid_argument("MAD baseline needs at least 3 samples");
  MadStats s;
  s.median = median(baseline);
  std::vector<double> dev(baseline.size());
  for (std::size_t i = 0; i < baseline.size(); ++i) dev[i] = std::abs(baseline[i] - s.median);
  s.mad = median(std::move(dev));
  return s;
}

/// Normalises every value with statistics from the first `baseline_count`.
inline std::vector<double> mad_normalize(const std::vector<double>& values, std::size_t baseline_count,
                                         MadStats* stats = nullptr) {
  if (baseline_count > values.size()) throw std::invalid_argument("MAD baseline longer than series");
  const MadStats s = mad_stats({values.begin(), values.begin() + static_cast<std::ptrdiff_t>(baseline_count)});
  if (stats) *stats = s;
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = s.apply(values[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Records

struct Sample {
  double t = 0.0;
  std::optional<double> value;
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct MetricSeries {
  std::size_t service = 0;
  std::string metric;
  std::vector<Sample> samples;
  friend bool operator==(const MetricSeries&, const MetricSeries&) = default;
};

struct LogRecord {
  double t = 0.0;
  std::size_t service = 0;
  std::vector<std::string> tokens;
  friend bool operator==(const LogRecord&, const LogRecord&) = default;
};

struct SpanRecord {
  std::size_t service = 0;
  double start = 0.0;
  double duration_ms = 0.0;
  bool error = false;
  std::optional<std::size_t> parent;
  friend bool operator==(const SpanRecord&, const SpanRecord&) = default;
};

struct EntityRecord {
  std::string service, pod, node, region;
  std::vector<std::string> attributes() const { return {service, pod, node, region}; }
  friend bool operator==(const EntityRecord&, const EntityRecord&) = default;
};

struct EventRecord {
  std::string type;
  double t = 0.0;
  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct CandidateRecord {
  std::size_t service = 0;
  std::string fault;
  friend bool operator==(const CandidateRecord&, const CandidateRecord&) = default;
};

struct Incident {
  std::string id;
  std::string split;
  double start = 0.0, end = 0.0;
  std::vector<LogRecord> logs;
  std::vector<SpanRecord> spans;
  std::vector<MetricSeries> metrics;
  std::vector<EntityRecord> entities;
  std::vector<EventRecord> events;
  std::vector<CandidateRecord> candidates;
  std::size_t truth = 0;
  friend bool operator==(const Incident&, const Incident&) = default;
};

struct Manifest {
  std::string format = kFormat;
  std::uint64_t seed = 0;
  std::vector<std::string> services;
  std::vector<std::pair<std::size_t, std::size_t>> calls;  // caller -> callee
  std::vector<std::string> faults = fault_types();
  std::vector<std::string> metrics = metric_names();
  std::size_t incidents = 0;
  double window_seconds = 900.0;
  double baseline_seconds = 300.0;
  std::map<std::string, std::size_t> splits;
  friend bool operator==(const Manifest&, const Manifest&) = default;
};

struct Dataset {
  Manifest manifest;
  std::vector<Incident> incidents;
  friend bool operator==(const Dataset&, const Dataset&) = default;

  std::size_t fault_index(const std::string& f) const {
    auto it = std::find(manifest.faults.begin(), manifest.faults.end(), f);
    if (it == manifest.faults.end()) throw std::out_of_range("unknown fault type: " + f);
    return static_cast<std::size_t>(it - manifest.faults.begin());
  }
  std::size_t metric_index(const std::string& m) const {
    auto it = std::find(manifest.metrics.begin(), manifest.metrics.end(), m);
    if (it == manifest.metrics.end()) throw std::out_of_range("unknown metric: " + m);
    return static_cast<std::size_t>(it - manifest.metrics.begin());
  }
  const Incident* find(const std::string& id) const {
    for (const auto& inc : incidents)
      if (inc.id == id) return &inc;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Imputation

/// Samples the series on the grid start + k * step (k < count). A grid point
/// takes the nearest observed sample within step / 2. Interior gaps whose
/// flanking observations are at most 5 minutes apart are linearly
/// interpolated; longer and trailing gaps decay as m_last exp(-0.1 / min).
/// Leading gaps take the first observed value.
inline std::vector<double> impute(const std::vector<Sample>& samples, double start, std::size_t count,
                                  double step = kGridStep) {
  if (!(step > 0.0)) throw std::invalid_argument("impute: grid step must be positive");
  std::vector<std::pair<double, double>> obs;
  for (const auto& s : samples)
    if (s.value) obs.emplace_back(s.t, *s.value);
  if (obs.empty()) throw std::invalid_argument("impute: series has no observed values");
  for (std::size_t i = 1; i < obs.size(); ++i)
    if (!(obs[i].first > obs[i - 1].first)) throw std::invalid_argument("impute: timestamps must increase");

  std::vector<std::optional<double>> grid(count);
  std::size_t j = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const double t = start + static_cast<double>(k) * step;
    while (j + 1 < obs.size() && obs[j + 1].first <= t) ++j;
    std::optional<std::size_t> best;
    double best_d = step / 2.0;
    for (std::size_t c : {j, j + 1}) {
      if (c >= obs.size()) continue;
      const double d = std::abs(obs[c].first - t);
      if (d <= best_d && (!best || d < best_d)) {
        best = c;
        best_d = d;
      }
    }
    if (best) grid[k] = obs[*best].second;
  }

  std::vector<double> out(count);
  std::optional<std::size_t> last;
  for (std::size_t k = 0; k < count; ++k) {
    if (grid[k]) {
      out[k] = *grid[k];
      last = k;
      continue;
    }
    std::optional<std::size_t> next;
    for (std::size_t n = k + 1; n < count; ++n)
      if (grid[n]) {
        next = n;
        break;
      }
    if (!last) {
      // Leading gap: hold the first observation.
      out[k] = next ? *grid[*next] : obs.front().second;
      continue;
    }
    const double t = static_cast<double>(k) * step, tl = static_cast<double>(*last) * step;
    if (next && static_cast<double>(*next - *last) * step <= kShortGap) {
      const double tn = static_cast<double>(*next) * step;
      out[k] = *grid[*last] + (*grid[*next] - *grid[*last]) * (t - tl) / (tn - tl);
    } else {
      out[k] = *grid[*last] * std::exp(-kDecayPerMinute * (t - tl) / 60.0);
    }
  }
  return out;
}

/// Robust z-scores of the observed samples, statistics from samples before
/// `baseline_end`. Missing values stay missing.
inline std::vector<Sample> normalize_series(const std::vector<Sample>& samples, double baseline_end,
                                            MadStats* stats = nullptr) {
  std::vector<double> base;
  for (const auto& s : samples)
    if (s.value && s.t < baseline_end) base.push_back(*s.value);
  const MadStats st = mad_stats(base);
  if (stats) *stats = st;
  std::vector<Sample> out = samples;
  for (auto& s : out)
    if (s.value) s.value = st.apply(*s.value);
  return out;
}

// ---------------------------------------------------------------------------
// Validation

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void validate(const Incident& inc, const Manifest& m) {
  auto fail = [&](const std::string& what) { throw DatasetError("incident " + inc.id + ": " + what); };
  const std::size_t ns = m.services.size();
  if (!(inc.end > inc.start)) fail("window end must be after start");
  auto in_window = [&](double t) { return t >= inc.start && t <= inc.end; };
  if (std::find(split_names().begin(), split_names().end(), inc.split) == split_names().end())
    fail("unknown split '" + inc.split + "'");
  for (const auto& l : inc.logs) {
    if (l.service >= ns) fail("log service out of range");
    if (!in_window(l.t)) fail("log timestamp outside window");
    if (l.tokens.empty()) fail("log with no tokens");
  }
  for (std::size_t i = 0; i < inc.spans.size(); ++i) {
    const auto& s = inc.spans[i];
    if (s.service >= ns) fail("span service out of range");
    if (!in_window(s.start)) fail("span start outside window");
    if (!(s.duration_ms >= 0.0)) fail("negative span duration");
    if (s.parent && *s.parent >= i) fail("span parent must precede its child");
  }
  for (const auto& ms : inc.metrics) {
    if (ms.service >= ns) fail("metric service out of range");
    if (std::find(m.metrics.begin(), m.metrics.end(), ms.metric) == m.metrics.end()) fail("unknown metric " + ms.metric);
    for (std::size_t i = 0; i < ms.samples.size(); ++i) {
      if (!in_window(ms.samples[i].t)) fail("metric sample outside window");
      if (i && !(ms.samples[i].t > ms.samples[i - 1].t)) fail("metric timestamps must strictly increase");
    }
  }
  for (const auto& e : inc.events)
    if (!in_window(e.t)) fail("event timestamp outside window");
  if (inc.candidates.empty()) fail("no candidates");
  for (const auto& c : inc.candidates) {
    if (c.service >= ns) fail("candidate service out of range");
    if (std::find(m.faults.begin(), m.faults.end(), c.fault) == m.faults.end()) fail("unknown fault " + c.fault);
  }
  if (inc.truth >= inc.candidates.size()) fail("truth index out of range");
}

inline void validate(const Dataset& d) {
  const auto& m = d.manifest;
  if (m.format != kFormat) throw DatasetError("unsupported format '" + m.format + "'");
  if (m.services.size() < 3) throw DatasetError("manifest needs at least 3 services");
  for (const auto& [a, b] : m.calls)
    if (a >= m.services.size() || b >= m.services.size() || a == b) throw DatasetError("invalid call edge");
  if (m.incidents != d.incidents.size())
    throw DatasetError("manifest lists " + std::to_string(m.incidents) + " incidents, file has " +
                       std::to_string(d.incidents.size()));
  std::map<std::string, std::size_t> counts;
  std::set<std::string> ids;
  for (const auto& inc : d.incidents) {
    validate(inc, m);
    if (!ids.insert(inc.id).second) throw DatasetError("duplicate incident id " + inc.id);
    ++counts[inc.split];
  }
  for (const auto& [k, v] : m.splits)
    if (counts[k] != v) throw DatasetError("split count mismatch for " + k);
  for (const auto& [k, v] : counts)
    if (!m.splits.count(k)) throw DatasetError("split " + k + " missing from manifest");
}

// ---------------------------------------------------------------------------
// Serialisation

using nlohmann::json;

inline json to_json(const Manifest& m) {
  json calls = json::array();
  for (const auto& [a, b] : m.calls) calls.push_back({a, b});
  return {{"kind", "manifest"},
          {"format", m.format},
          {"seed", m.seed},
          {"services", m.services},
          {"calls", calls},
          {"faults", m.faults},
          {"metrics", m.metrics},
          {"incidents", m.incidents},
          {"window_seconds", m.window_seconds},
          {"baseline_seconds", m.baseline_seconds},
          {"splits", m.splits}};
}

inline json to_json(const Incident& inc) {
  json logs = json::array(), spans = json::array(), metrics = json::array(), entities = json::array(),
       events = json::array(), cands = json::array();
  for (const auto& l : inc.logs) logs.push_back({{"t", l.t}, {"service", l.service}, {"tokens", l.tokens}});
  for (const auto& s : inc.spans)
    spans.push_back({{"service", s.service},
                     {"start", s.start},
                     {"duration_ms", s.duration_ms},
                     {"error", s.error},
                     {"parent", s.parent ? json(*s.parent) : json(nullptr)}});
  for (const auto& m : inc.metrics) {
    json samples = json::array();
    for (const auto& s : m.samples) samples.push_back({s.t, s.value ? json(*s.value) : json(nullptr)});
    metrics.push_back({{"service", m.service}, {"metric", m.metric}, {"samples", samples}});
  }
  for (const auto& e : inc.entities)
    entities.push_back({{"service", e.service}, {"pod", e.pod}, {"node", e.node}, {"region", e.region}});
  for (const auto& e : inc.events) events.push_back({{"type", e.type}, {"t", e.t}});
  for (const auto& c : inc.candidates) cands.push_back({{"service", c.service}, {"fault", c.fault}});
  return {{"kind", "incident"}, {"id", inc.id},       {"split", inc.split},       {"window", {inc.start, inc.end}},
          {"logs", logs},       {"spans", spans},     {"metrics", metrics},       {"entities", entities},
          {"events", events},   {"candidates", cands}, {"truth", inc.truth}};
}

inline void write_dataset(std::ostream& os, const Dataset& d) {
  os << to_json(d.manifest).dump() << '\n';
  for (const auto& inc : d.incidents) os << to_json(inc).dump() << '\n';
}

inline void save_dataset(const std::string& path, const Dataset& d) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  write_dataset(f, d);
  if (!f) throw std::runtime_error("failed writing " + path);
}

namespace detail {

/// Strict object access: every key must be consumed exactly once.
class Strict {
 public:
  Strict(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail("expected an object");
  }

  const json& req(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) fail("missing field '" + key + "'");
    used_.insert(key);
    return *it;
  }
  double number(const std::string& key) { return as_number(req(key), key); }
  std::size_t index(const std::string& key) { return as_index(req(key), key); }
  std::string string(const std::string& key) { return as_string(req(key), key); }
  const json& array(const std::string& key) {
    const json& v = req(key);
    if (!v.is_array()) fail("field '" + key + "' must be an array");
    return v;
  }
  std::vector<std::string> strings(const std::string& key) {
    std::vector<std::string> out;
    for (const auto& v : array(key)) out.push_back(as_string(v, key));
    return out;
  }
  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) fail("unknown field '" + it.key() + "'");
  }

  double as_number(const json& v, const std::string& what) const {
    if (!v.is_number()) fail("'" + what + "' must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail("'" + what + "' must be finite");
    return x;
  }
  std::size_t as_index(const json& v, const std::string& what) const {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      fail("'" + what + "' must be a non-negative integer");
    return v.get<std::size_t>();
  }
  std::string as_string(const json& v, const std::string& what) const {
    if (!v.is_string()) fail("'" + what + "' must be a string");
    return v.get<std::string>();
  }
  [[noreturn]] void fail(const std::string& msg) const { throw DatasetError(where_ + ": " + msg); }
  const std::string& where() const { return where_; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

inline Manifest parse_manifest(const json& j, const std::string& where) {
  Strict o(j, where);
  if (o.string("kind") != "manifest") o.fail("first line must be the manifest");
  Manifest m;
  m.format = o.string("format");
  const json& seed = o.req("seed");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0))
    o.fail("'seed' must be a non-negative integer");
  m.seed = seed.get<std::uint64_t>();
  m.services = o.strings("services");
  for (const auto& e : o.array("calls")) {
    if (!e.is_array() || e.size() != 2) o.fail("call edges must be [caller, callee] pairs");
    m.calls.emplace_back(o.as_index(e[0], "calls"), o.as_index(e[1], "calls"));
  }
  m.faults = o.strings("faults");
  m.metrics = o.strings("metrics");
  m.incidents = o.index("incidents");
  m.window_seconds = o.number("window_seconds");
  m.baseline_seconds = o.number("baseline_seconds");
  const json& splits = o.req("splits");
  if (!splits.is_object()) o.fail("'splits' must be an object");
  for (auto it = splits.begin(); it != splits.end(); ++it) m.splits[it.key()] = o.as_index(it.value(), "splits");
  o.done();
  return m;
}

inline Incident parse_incident(const json& j, const std::string& where) {
  Strict o(j, where);
  if (o.string("kind") != "incident") o.fail("expected an incident record");
  Incident inc;
  inc.id = o.string("id");
  inc.split = o.string("split");
  const json& w = o.array("window");
  if (w.size() != 2) o.fail("'window' must be [start, end]");
  inc.start = o.as_number(w[0], "window");
  inc.end = o.as_number(w[1], "window");
  for (const auto& lj : o.array("logs")) {
    Strict l(lj, where + ": logs");
    inc.logs.push_back({l.number("t"), l.index("service"), l.strings("tokens")});
    l.done();
  }
  for (const auto& sj : o.array("spans")) {
    Strict s(sj, where + ": spans");
    SpanRecord r;
    r.service = s.index("service");
    r.start = s.number("start");
    r.duration_ms = s.number("duration_ms");
    const json& e = s.req("error");
    if (!e.is_boolean()) s.fail("'error' must be a boolean");
    r.error = e.get<bool>();
    const json& p = s.req("parent");
    if (!p.is_null()) r.parent = s.as_index(p, "parent");
    s.done();
    inc.spans.push_back(r);
  }
  for (const auto& mj : o.array("metrics")) {
    Strict m(mj, where + ": metrics");
    MetricSeries ms;
    ms.service = m.index("service");
    ms.metric = m.string("metric");
    for (const auto& sj : m.array("samples")) {
      if (!sj.is_array() || sj.size() != 2) m.fail("samples must be [t, value-or-null] pairs");
      Sample s{m.as_number(sj[0], "sample time"), std::nullopt};
      if (!sj[1].is_null()) s.value = m.as_number(sj[1], "sample value");
      ms.samples.push_back(s);
    }
    m.done();
    inc.metrics.push_back(std::move(ms));
  }
  for (const auto& ej : o.array("entities")) {
    Strict e(ej, where + ": entities");
    inc.entities.push_back({e.string("service"), e.string("pod"), e.string("node"), e.string("region")});
    e.done();
  }
  for (const auto& ej : o.array("events")) {
    Strict e(ej, where + ": events");
    inc.events.push_back({e.string("type"), e.number("t")});
    e.done();
  }
  for (const auto& cj : o.array("candidates")) {
    Strict c(cj, where + ": candidates");
    inc.candidates.push_back({c.index("service"), c.string("fault")});
    c.done();
  }
  inc.truth = o.index("truth");
  o.done();
  return inc;
}

}  // namespace detail

/// Parses and validates a dataset. Errors carry the 1-based line number.
inline Dataset read_dataset(std::istream& is) {
  Dataset d;
  std::string line;
  std::size_t lineno = 0;
  bool have_manifest = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DatasetError(where + ": malformed JSON (" + std::string(e.what()) + ")");
    }
    if (!have_manifest) {
      d.manifest = detail::parse_manifest(j, where);
      have_manifest = true;
      continue;
    }
    Incident inc = detail::parse_incident(j, where);
    try {
      validate(inc, d.manifest);
    } catch (const DatasetError& e) {
      throw DatasetError(where + ": " + e.what());
    }
    d.incidents.push_back(std::move(inc));
  }
  if (!have_manifest) throw DatasetError("line 1: empty dataset (manifest missing)");
  validate(d);
  return d;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DatasetError("cannot open dataset " + path);
  try {
    return read_dataset(f);
  } catch (const DatasetError& e) {
    throw DatasetError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct GeneratorOptions {
  std::uint64_t seed = 7;
  std::size_t services = 8;
  std::size_t incidents = 200;
  double window = 900.0;
  double baseline = 300.0;
  double scrape = 10.0;
  double keep = 0.75;
};

namespace gen {

struct Topology {
  std::vector<std::size_t> layer;
  std::vector<std::pair<std::size_t, std::size_t>> calls;
  std::vector<std::vector<std::size_t>> callers, callees;
};

inline Topology make_topology(std::size_t n, SeededRng& rng) {
  Topology t;
  const std::size_t L = n <= 4 ? 2 : (n <= 9 ? 3 : 4);
  t.layer.resize(n);
  std::vector<std::vector<std::size_t>> by_layer(L);
  for (std::size_t i = 0; i < n; ++i) {
    t.layer[i] = i * L / n;
    by_layer[t.layer[i]].push_back(i);
  }
  std::set<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t v = 0; v < n; ++v) {
    if (t.layer[v] == 0) continue;
    const auto& up = by_layer[t.layer[v] - 1];
    const std::size_t k = (up.size() > 1 && rng.bernoulli(0.4)) ? 2 : 1;
    std::vector<std::size_t> pool = up;
    rng.shuffle(pool);
    for (std::size_t i = 0; i < k; ++i) edges.insert({pool[i], v});
  }
  for (std::size_t u = 0; u < n; ++u) {
    if (t.layer[u] + 1 >= L) continue;
    bool has = false;
    for (const auto& e : edges) has = has || e.first == u;
    if (!has) {
      const auto& down = by_layer[t.layer[u] + 1];
      edges.insert({u, down[rng.index(down.size())]});
    }
  }
  t.calls.assign(edges.begin(), edges.end());
  t.callers.assign(n, {});
  t.callees.assign(n, {});
  for (const auto& [a, b] : t.calls) {
    t.callees[a].push_back(b);
    t.callers[b].push_back(a);
  }
  return t;
}

struct ServiceProfile {
  std::array<double, 4> base;
  std::array<double, 4> noise;  // half-width of uniform noise
};

// Per-fault deviation of the root's cpu, memory, latency, errors channels in
// units of the channel's noise half-width.
inline std::array<double, 4> root_signature(std::size_t fault) {
  switch (fault) {
    case 0: return {20, 0, 12, 8};      // cpu-stress
    case 1: return {0, 25, 10, 10};     // memory-leak (memory ramps)
    case 2: return {-6, 0, 25, 10};     // network-delay
    case 3: return {-10, -10, 8, 30};   // pod-kill
    default: return {8, 0, 18, 8};      // io-latency
  }
}

inline const std::vector<std::vector<std::string>>& fault_templates() {
  static const std::vector<std::vector<std::string>> t{
      {"cpu", "usage", "high", "throttling", "worker", "<num>"},
      {"heap", "usage", "growing", "gc", "pause", "<num>", "ms"},
      {"network", "timeout", "waiting", "for", "response", "<num>", "ms"},
      {"container", "killed", "restarting", "pod", "<id>"},
      {"disk", "write", "slow", "io", "wait", "<num>", "ms"}};
  return t;
}

inline const std::vector<std::vector<std::string>>& background_templates() {
  static const std::vector<std::vector<std::string>> t{{"request", "handled", "in", "<num>", "ms"},
                                                       {"cache", "lookup", "key", "<id>", "hit"},
                                                       {"health", "check", "passed"},
                                                       {"connection", "pool", "size", "<num>"}};
  return t;
}

inline double round_to(double v, double q) { return std::round(v / q) * q; }

struct Effect {
  double onset = 0.0;
  std::array<double, 4> delta{};  // in noise units
  bool ramp_memory = false;
  std::size_t via = 0;            // callee the anomaly arrived from (self for the root)
};

inline double shape(const Effect& e, std::size_t metric, double t) {
  if (t < e.onset) return 0.0;
  if (metric == 1 && e.ramp_memory) return std::min(1.0, 0.3 + (t - e.onset) / 120.0);
  return 1.0;
}

}  // namespace gen

inline Dataset synth_generate(const GeneratorOptions& o) {
  using namespace gen;
  if (o.services < 3) throw std::invalid_argument("synth_generate: need at least 3 services");
  if (o.incidents < 1) throw std::invalid_argument("synth_generate: need at least 1 incident");
  if (!(o.baseline > 0.0 && o.window > o.baseline + 300.0)) throw std::invalid_argument("synth_generate: bad window");
  SeededRng rng(o.seed);
  const std::size_t n = o.services, nf = fault_types().size();
  Dataset d;
  d.manifest.seed = o.seed;
  d.manifest.incidents = o.incidents;
  d.manifest.window_seconds = o.window;
  d.manifest.baseline_seconds = o.baseline;
  for (std::size_t i = 0; i < n; ++i) d.manifest.services.push_back("svc-" + std::to_string(i));
  const Topology topo = make_topology(n, rng);
  d.manifest.calls = topo.calls;

  std::vector<ServiceProfile> prof(n);
  for (auto& p : prof) {
    p.base = {rng.uniform(30, 50), rng.uniform(200, 400), rng.uniform(20, 80), rng.uniform(0.5, 2)};
    p.noise = {2.0, 8.0, 3.0, 0.1};
  }
  std::vector<std::size_t> faults;
  while (faults.size() < o.incidents) {
    std::vector<std::size_t> block(nf);
    for (std::size_t f = 0; f < nf; ++f) block[f] = f;
    rng.shuffle(block);
    faults.insert(faults.end(), block.begin(), block.end());
  }
  std::vector<std::size_t> layer0;
  for (std::size_t v = 0; v < n; ++v)
    if (topo.layer[v] == 0) layer0.push_back(v);

  for (std::size_t idx = 0; idx < o.incidents; ++idx) {
    SeededRng r(rng.next_u64());
    Incident inc;
    char id[32];
    std::snprintf(id, sizeof id, "inc-%04zu", idx);
    inc.id = id;
    inc.split = idx % 5 == 4 ? "test" : (idx % 10 == 3 ? "val" : "train");
    inc.start = static_cast<double>(idx) * 3600.0;
    inc.end = inc.start + o.window;
    const double base_end = inc.start + o.baseline;
    const std::size_t root = r.index(n), fault = faults[idx];

    // Scrape schedules (values filled per service once its effect is known).
    struct Schedule {
      std::vector<double> t;
      std::vector<bool> null;
    };
    std::vector<std::array<Schedule, 4>> sched(n);
    std::optional<std::pair<std::size_t, std::size_t>> outage_channel;
    double outage_from = 0, outage_to = 0;
    if (r.bernoulli(0.15)) {
      outage_channel = std::make_pair(r.index(n), r.index(4));
      outage_from = r.uniform(base_end, inc.end - 500.0);
      outage_to = outage_from + r.uniform(360.0, 480.0);
    }
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t m = 0; m < 4; ++m) {
        const double phase = r.uniform(0.0, o.scrape);
        for (double t = inc.start + phase; t < inc.end; t += o.scrape) {
          const bool keep = r.bernoulli(o.keep);
          const bool null = r.bernoulli(0.02);
          if (!keep) continue;
          if (outage_channel && *outage_channel == std::make_pair(s, m) && t >= outage_from && t < outage_to) continue;
          sched[s][m].t.push_back(round_to(t, 1e-3));
          sched[s][m].null.push_back(null && t >= base_end);
        }
      }

    std::vector<std::optional<Effect>> effect(n);
    std::vector<std::array<MetricSeries, 4>> series(n);
    // Quiet samples (before onset, or channels the anomaly leaves alone) are
    // redrawn until their robust z-scores stay within 2.5.
    auto render = [&](std::size_t s) {
      for (std::size_t m = 0; m < 4; ++m) {
        const auto& sc = sched[s][m];
        const bool moves = effect[s] && effect[s]->delta[m] != 0.0;
        MetricSeries ms{s, metric_names()[m], {}};
        for (int attempt = 0; attempt < 64; ++attempt) {
          ms.samples.clear();
          for (std::size_t k = 0; k < sc.t.size(); ++k) {
            const double noise = r.uniform(-prof[s].noise[m], prof[s].noise[m]);
            double v = prof[s].base[m] + noise;
            if (moves) v += prof[s].noise[m] * effect[s]->delta[m] * shape(*effect[s], m, sc.t[k]);
            ms.samples.push_back({sc.t[k], sc.null[k] ? std::nullopt : std::optional(round_to(v, 1e-4))});
          }
          bool quiet = true;
          for (const auto& z : normalize_series(ms.samples, base_end))
            if (z.value && (!moves || z.t < effect[s]->onset) && std::abs(*z.value) > 2.5) quiet = false;
          if (quiet) break;
        }
        series[s][m] = std::move(ms);
      }
    };
    // Time of the third robust-z exceedance over all channels of s.
    auto third_hit = [&](std::size_t s) {
      std::vector<double> hits;
      for (std::size_t m = 0; m < 4; ++m)
        for (const auto& smp : normalize_series(series[s][m].samples, base_end))
          if (smp.value && std::abs(*smp.value) > 3.0) hits.push_back(smp.t);
      std::sort(hits.begin(), hits.end());
      if (hits.empty()) return effect[s]->onset + 30.0;
      return hits[std::min<std::size_t>(2, hits.size() - 1)];
    };

    // Anomalies spread from callee to caller, earliest first.
    using Item = std::tuple<double, std::size_t, std::size_t, std::size_t>;  // onset, service, hops, via
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    queue.emplace(round_to(base_end + r.uniform(30.0, 120.0), 1e-3), root, 0, root);
    std::vector<bool> done(n, false);
    while (!queue.empty()) {
      const auto [onset, s, hops, via] = queue.top();
      queue.pop();
      if (done[s]) continue;
      done[s] = true;
      Effect e;
      e.onset = onset;
      e.via = via;
      if (hops == 0) {
        e.delta = root_signature(fault);
        e.ramp_memory = fault == 1;
      } else {
        const double decay = std::pow(0.6, static_cast<double>(hops));
        e.delta = {0, 0, std::max(6.0, 20.0 * decay), std::max(6.0, 14.0 * decay)};
      }
      effect[s] = e;
      render(s);
      const double hit = third_hit(s);
      for (std::size_t c : topo.callers[s]) {
        if (done[c]) continue;
        const double t = round_to(hit + r.uniform(10.0, 60.0), 1e-3);
        if (t < inc.end - 60.0) queue.emplace(t, c, hops + 1, s);
      }
    }
    for (std::size_t s = 0; s < n; ++s) {
      if (!effect[s]) render(s);
      for (auto& ms : series[s]) inc.metrics.push_back(std::move(ms));
    }

    // Logs.
    for (std::size_t s = 0; s < n; ++s) {
      for (double t = inc.start + r.exponential(1.0 / 60.0); t < inc.end; t += r.exponential(1.0 / 60.0)) {
        const auto& tpl = background_templates()[r.index(background_templates().size())];
        inc.logs.push_back({round_to(t, 1e-3), s, tpl});
      }
      if (!effect[s]) continue;
      const double rate = 4.0 / 60.0;
      for (double t = effect[s]->onset + r.exponential(rate); t < inc.end; t += r.exponential(rate)) {
        std::vector<std::string> tokens =
            s == root ? fault_templates()[fault]
                      : std::vector<std::string>{"upstream", "call", "to", d.manifest.services[effect[s]->via],
                                                 "failed", "status", "<num>"};
        inc.logs.push_back({round_to(t, 1e-3), s, std::move(tokens)});
      }
    }
    std::stable_sort(inc.logs.begin(), inc.logs.end(),
                     [](const LogRecord& a, const LogRecord& b) { return a.t < b.t; });

    // Traces.
    const std::size_t traces = 12;
    for (std::size_t k = 0; k < traces; ++k) {
      const double t0 = round_to(r.uniform(inc.start, inc.end - 5.0), 1e-3);
      // Depth-first construction; returns the span's duration.
      std::function<double(std::size_t, std::optional<std::size_t>, double, std::size_t)> visit =
          [&](std::size_t s, std::optional<std::size_t> parent, double start, std::size_t depth) -> double {
        const std::size_t me = inc.spans.size();
        inc.spans.push_back({s, round_to(start, 1e-3), 0.0, false, parent});
        double dur = prof[s].base[2] * r.uniform(0.8, 1.2);
        bool err = r.bernoulli(0.01);
        if (effect[s] && start >= effect[s]->onset) {
          dur += prof[s].noise[2] * effect[s]->delta[2];
          err = r.bernoulli(std::min(0.9, 0.2 + effect[s]->delta[3] / 40.0));
        }
        if (depth < 4) {
          std::vector<std::size_t> next;
          for (std::size_t c : topo.callees[s])
            if (r.bernoulli(0.6)) next.push_back(c);
          if (next.empty() && !topo.callees[s].empty()) next.push_back(topo.callees[s][r.index(topo.callees[s].size())]);
          double offset = 0.5;
          for (std::size_t c : next) {
            const double cd = visit(c, me, start + offset / 1000.0, depth + 1);
            dur += cd;
            offset += cd + 0.5;
          }
        }
        inc.spans[me].duration_ms = round_to(dur, 1e-3);
        inc.spans[me].error = err;
        return inc.spans[me].duration_ms;
      };
      visit(layer0[r.index(layer0.size())], std::nullopt, t0, 0);
    }

    // Events.
    {
      const auto sig = root_signature(fault);
      std::size_t strongest = 0;
      for (std::size_t m = 1; m < 4; ++m)
        if (std::abs(sig[m]) > std::abs(sig[strongest])) strongest = m;
      const double alert_t = std::min(inc.end, round_to(effect[root]->onset + r.uniform(30.0, 90.0), 1e-3));
      inc.events.push_back({"alert-" + metric_names()[strongest], alert_t});
      if (fault == 3) inc.events.push_back({"pod-restart", round_to(effect[root]->onset + r.uniform(5.0, 20.0), 1e-3)});
      static const std::vector<std::string> noise_events{"deploy", "config-change", "scale-up", "cron-job"};
      const std::size_t extra = r.index(3);
      for (std::size_t k = 0; k < extra; ++k)
        inc.events.push_back({noise_events[r.index(noise_events.size())], round_to(r.uniform(inc.start, inc.end), 1e-3)});
      std::stable_sort(inc.events.begin(), inc.events.end(),
                       [](const EventRecord& a, const EventRecord& b) { return a.t < b.t; });
    }

    // Candidates: affected services plus up to two distractors, every fault.
    std::vector<std::size_t> cand_services, unaffected;
    for (std::size_t s = 0; s < n; ++s) (effect[s] ? cand_services : unaffected).push_back(s);
    r.shuffle(unaffected);
    for (std::size_t k = 0; k < std::min<std::size_t>(2, unaffected.size()); ++k) cand_services.push_back(unaffected[k]);
    std::sort(cand_services.begin(), cand_services.end());
    for (std::size_t s : cand_services) {
      for (std::size_t f = 0; f < nf; ++f) {
        if (s == root && f == fault) inc.truth = inc.candidates.size();
        inc.candidates.push_back({s, fault_types()[f]});
      }
      inc.entities.push_back({d.manifest.services[s], d.manifest.services[s] + "-pod-" + std::to_string(r.index(3)),
                              "node-" + std::to_string(s % 3), "region-" + std::to_string(s % 2)});
    }
    ++d.manifest.splits[inc.split];
    d.incidents.push_back(std::move(inc));
  }
  validate(d);
  return d;
}

}  // namespace hyperode::datapipe
