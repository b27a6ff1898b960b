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

#include <cmath>
#include <numeric>

#include "gtest/gtest.h"

#include "hyperode/encoders.hpp"
#include "hyperode/gradcheck.hpp"
#include "oracles.hpp"

namespace hyperode::encoders {
namespace {

std::vector<std::string> random_tokens(SeededRng& rng, const std::string& prefix, std::size_t n) {
  std::vector<std::string> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back(prefix + std::to_string(rng.next_u64() % 1000000));
  return t;
}

double cosine(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s / (l2(a) * l2(b));
}

// --- log_embed -------------------------------------------------------------

TEST(LogEmbed, Deterministic) {
  const std::vector<std::string> t{"connection", "refused", "<num>", "upstream"};
  EXPECT_EQ(log_embed(t, 64), log_embed(t, 64));
}

TEST(LogEmbed, UnitNorm) {
  SeededRng rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto v = log_embed(random_tokens(rng, "w", 1 + rng.index(12)), 64);
    EXPECT_NEAR(l2(v), 1.0, 1e-10);
  }
}

TEST(LogEmbed, DisjointTokenSetsNearlyOrthogonal) {
  SeededRng rng(2);
  double total = 0;
  for (int i = 0; i < 100; ++i) {
    const auto a = log_embed(random_tokens(rng, "a", 6), 64, rng.next_u64());
    const auto b = log_embed(random_tokens(rng, "b", 6), 64, rng.next_u64());
    total += std::abs(cosine(a, b));
  }
  EXPECT_LT(total / 100, 0.15);
}

TEST(LogEmbed, SharedTokensRaiseSimilarity) {
  const auto a = log_embed({"disk", "full", "on", "volume"}, 64);
  const auto b = log_embed({"disk", "full", "on", "node"}, 64);
  EXPECT_GT(cosine(a, b), 0.4);
}

TEST(LogEmbed, CancellingTokensStillUnit) {
  // Find two tokens landing on the same dimension with opposite signs.
  std::string x = "t0", y;
  const auto bx = fnv1a(x) % 8;
  for (int i = 1; y.empty(); ++i) {
    const std::string c = "t" + std::to_string(i);
    const auto bc = fnv1a(c) % 8;
    if (bc % 4 == bx % 4 && (bc < 4) != (bx < 4)) y = c;
  }
  EXPECT_NEAR(l2(log_embed({x, y}, 4)), 1.0, 1e-12);
}

TEST(LogEmbed, RejectsEmpty) {
  EXPECT_THROW(log_embed({}, 64), std::invalid_argument);
  EXPECT_THROW(log_embed({"a"}, 0), std::invalid_argument);
}

// --- template_assign -------------------------------------------------------

TEST(TemplateAssign, SinglePrototype) {
  Tape tape;
  const auto r = template_assign(tape.constant(Tensor::vector({0.3, -0.2})), tape.constant(Tensor::matrix({{1, 0}})));
  EXPECT_DOUBLE_EQ(r.probs.value()[0], 1.0);
  EXPECT_NEAR(r.loss.item(), 0.0, 1e-15);
}

TEST(TemplateAssign, EquidistantPrototypes) {
  Tape tape;
  const auto r = template_assign(tape.constant(Tensor::vector({1, 0})), tape.constant(Tensor::matrix({{0, 1}, {0, -1}})));
  EXPECT_NEAR(r.probs.value()[0], 0.5, 1e-15);
  EXPECT_NEAR(r.probs.value()[1], 0.5, 1e-15);
}

TEST(TemplateAssign, HandExample) {
  Tape tape;
  const auto r = template_assign(tape.constant(Tensor::vector({2, 0})), tape.constant(Tensor::matrix({{1, 0}, {0, 1}})));
  EXPECT_NEAR(r.probs.value()[0], 1.0 / (1.0 + std::exp(-1.0 / 0.07)), 1e-12);
  EXPECT_NEAR(r.probs.value()[0], 0.99999938, 1e-8);
  EXPECT_EQ(r.argmax, 0u);
  EXPECT_NEAR(r.loss.item(), -std::log(r.probs.value()[0]), 1e-15);
}

TEST(TemplateAssign, SumsToOneAndPermutes) {
  SeededRng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor h = sample(rng, Distribution::kNormal, {8});
    const Tensor P = sample(rng, Distribution::kNormal, {5, 8});
    Tensor Pr(P.shape());
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t k = 0; k < 8; ++k) Pr.at(j, k) = P.at(perm[j], k);
    Tape tape;
    const auto a = template_assign(tape.constant(h), tape.constant(P));
    const auto b = template_assign(tape.constant(h), tape.constant(Pr));
    const auto& pa = a.probs.value().data();
    EXPECT_NEAR(std::accumulate(pa.begin(), pa.end(), 0.0), 1.0, 1e-12);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(b.probs.value()[j], pa[perm[j]], 1e-14);
    EXPECT_NEAR(a.loss.item(), b.loss.item(), 1e-12);
  }
}

TEST(TemplateAssign, GradientMatchesFiniteDifferences) {
  SeededRng rng(4);
  const Tensor h = sample(rng, Distribution::kNormal, {6});
  const Tensor P0 = sample(rng, Distribution::kNormal, {4, 6});
  // Temperature 1 keeps the softmax away from saturation for the check.
  const double err = grad_check(
      [&](Tape& t, Var P) { return template_assign(t.constant(h), P, 1.0).loss; }, P0, 1e-6);
  EXPECT_LT(err, 1e-5);
}

TEST(Prototypes, FarthestPointInitIsUnitAndSpread) {
  SeededRng rng(5);
  std::vector<Tensor> vecs;
  for (int i = 0; i < 40; ++i) vecs.push_back(log_embed(random_tokens(rng, "x", 5), 16));
  Tensor P = init_prototypes(vecs, 8, 16, rng);
  for (std::size_t j = 0; j < 8; ++j) {
    double s = 0;
    for (std::size_t k = 0; k < 16; ++k) s += P.at(j, k) * P.at(j, k);
    EXPECT_NEAR(std::sqrt(s), 1.0, 1e-10);
  }
  for (std::size_t k = 0; k < 16; ++k) EXPECT_NEAR(P.at(0, k), vecs[0][k], 1e-15);
}

TEST(Prototypes, TopsUpWhenTooFewDistinctVectors) {
  SeededRng rng(6);
  const Tensor v = log_embed({"same"}, 8);
  const Tensor P = init_prototypes({v, v, v}, 4, 8, rng);
  for (std::size_t j = 1; j < 4; ++j) {
    double diff = 0;
    for (std::size_t k = 0; k < 8; ++k) diff += std::abs(P.at(j, k) - P.at(0, k));
    EXPECT_GT(diff, 1e-3) << "row " << j;
  }
  Tensor copy = P;
  renormalize_rows(copy);
  EXPECT_LT(max_abs_diff(copy, P), 1e-12);
}

TEST(Prototypes, RenormalizeRows) {
  Tensor p = Tensor::matrix({{3, 4}, {0, 0.5}});
  renormalize_rows(p);
  EXPECT_EQ(p, Tensor::matrix({{0.6, 0.8}, {0, 1}}));
}

// --- trace_gat -------------------------------------------------------------

ParamStore trace_store(std::size_t in, std::size_t d, std::uint64_t seed) {
  ParamStore s;
  SeededRng rng(seed);
  for (int l = 0; l < 2; ++l) {
    const std::string k = "encoders.trace." + std::to_string(l);
    s.add(k + ".W", sample(rng, Distribution::kNormal, {d, l == 0 ? in : d}) * 0.7);
    s.add(k + ".a", sample(rng, Distribution::kNormal, {2 * d}));
  }
  return s;
}

TEST(TraceGat, SingleSpanIsSelfAttention) {
  const ParamStore s = trace_store(3, 4, 7);
  Tape tape;
  Bound b(tape, s);
  TraceGatParams p = TraceGatParams::bind(b, 1);
  const Tensor x = Tensor::matrix({{0.5, -1.0, 2.0}});
  const auto out = trace_gat(tape.constant(x), Tensor::ones({1, 1}), p);
  EXPECT_DOUBLE_EQ(out.alpha[0].value()[0], 1.0);
  const Tensor wh = matmul(tape.constant(s.at("encoders.trace.0.W")), tape.constant(x.reshaped({3}))).value();
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(out.h.value()[k], oracle::silu(wh[k]), 1e-14);
}

TraceSpanGraph chain3() {
  TraceSpanGraph g;
  g.spans = {{0, 120.0, false, std::nullopt}, {1, 80.0, false, 0}, {2, 300.0, true, 1}};
  return g;
}

TEST(TraceGat, NeighbourhoodIsParentChildrenSelf) {
  const Tensor m = chain3().neighbourhood();
  EXPECT_EQ(m, Tensor::matrix({{1, 1, 0}, {1, 1, 1}, {0, 1, 1}}));
}

TEST(TraceGat, ChainMatchesOracle) {
  const std::size_t in = 5, d = 4;
  const ParamStore s = trace_store(in, d, 8);
  SeededRng rng(9);
  const Tensor x = sample(rng, Distribution::kNormal, {3, in});
  const TraceSpanGraph g = chain3();
  Tape tape;
  Bound b(tape, s);
  const auto out = trace_gat(tape.constant(x), g.neighbourhood(), TraceGatParams::bind(b, 2));

  auto m = [&](const std::string& n) {
    const Tensor& t = s.at(n);
    return oracle::to_mat(t.data(), t.rows(), t.cols());
  };
  const auto adj = oracle::to_mat(g.neighbourhood().data(), 3, 3);
  auto h = oracle::gat_layer(oracle::to_mat(x.data(), 3, in), adj, m("encoders.trace.0.W"),
                             s.at("encoders.trace.0.a").data());
  h = oracle::gat_layer(h, adj, m("encoders.trace.1.W"), s.at("encoders.trace.1.a").data());
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(out.h.value().at(i, k), h[i][k], 1e-10);
}

TEST(TraceGat, AttentionRowsSumToOne) {
  const ParamStore s = trace_store(3, 4, 10);
  SeededRng rng(11);
  TraceSpanGraph g;
  for (std::size_t i = 0; i < 7; ++i)
    g.spans.push_back({i % 3, 10.0 * static_cast<double>(i), false, i == 0 ? std::nullopt : std::optional(rng.index(i))});
  Tape tape;
  Bound b(tape, s);
  const auto out =
      trace_gat(tape.constant(sample(rng, Distribution::kNormal, {7, 3})), g.neighbourhood(), TraceGatParams::bind(b, 2));
  for (const auto& alpha : out.alpha)
    for (std::size_t i = 0; i < 7; ++i) {
      double r = 0;
      for (std::size_t j = 0; j < 7; ++j) r += alpha.value().at(i, j);
      EXPECT_NEAR(r, 1.0, 1e-10);
    }
}

TEST(TraceGat, SpanFeatures) {
  Tape tape;
  Var table = tape.constant(Tensor::matrix({{0.1, 0.2}, {0.3, 0.4}, {0.5, 0.6}}));
  const Tensor f = span_features(chain3(), table).value();
  ASSERT_EQ(f.shape(), (Shape{3, 5}));
  const double mean = 500.0 / 3, sd = std::sqrt(((120 - mean) * (120 - mean) + (80 - mean) * (80 - mean) +
                                                 (300 - mean) * (300 - mean)) / 3);
  EXPECT_NEAR(f.at(0, 0), (120 - mean) / sd, 1e-12);
  EXPECT_EQ(f.at(2, 1), 0.0);
  EXPECT_EQ(f.at(2, 2), 1.0);
  EXPECT_EQ(f.at(1, 1), 1.0);
  EXPECT_EQ(f.at(1, 3), 0.3);
}

TEST(TraceGat, RejectsCyclesAndBadParents) {
  TraceSpanGraph g;
  g.spans = {{0, 1, false, 1}, {0, 1, false, 0}};
  EXPECT_THROW(g.validate(), std::invalid_argument);
  g.spans = {{0, 1, false, 5}};
  EXPECT_THROW(g.validate(), std::out_of_range);
}

// --- metric_dcc ------------------------------------------------------------

ParamStore dcc_store(std::size_t channels, std::size_t d, std::size_t layers, std::uint64_t seed) {
  ParamStore s;
  SeededRng rng(seed);
  std::size_t in = channels;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string k = "encoders.dcc." + std::to_string(l);
    s.add(k + ".past", sample(rng, Distribution::kNormal, {d, in}) * 0.6);
    s.add(k + ".current", sample(rng, Distribution::kNormal, {d, in}) * 0.6);
    s.add(k + ".b", sample(rng, Distribution::kNormal, {d}) * 0.2);
    in = d;
  }
  return s;
}

Tensor run_dcc(const ParamStore& s, std::size_t layers, const Tensor& x) {
  Tape tape;
  Bound b(tape, s);
  return metric_dcc(tape.constant(x), DccParams::bind(b, layers)).value();
}

TEST(MetricDcc, SingleLayerHandCheck) {
  ParamStore s;
  s.add("encoders.dcc.0.past", Tensor::matrix({{0.7}}));
  s.add("encoders.dcc.0.current", Tensor::matrix({{-0.3}}));
  s.add("encoders.dcc.0.b", Tensor::vector({0.0}));
  const Tensor y = run_dcc(s, 1, Tensor::matrix({{2.0}, {-1.5}}));
  EXPECT_DOUBLE_EQ(y[1], std::max(0.0, 0.7 * 2.0 + -0.3 * -1.5));
  EXPECT_DOUBLE_EQ(y[0], 0.0);  // ReLU(-0.6)
}

TEST(MetricDcc, ZeroInputZeroBiasGivesZero) {
  ParamStore s = dcc_store(3, 4, 4, 12);
  for (int l = 0; l < 4; ++l) s.at("encoders.dcc." + std::to_string(l) + ".b") *= 0.0;
  const Tensor y = run_dcc(s, 4, Tensor::zeros({10, 3}));
  EXPECT_EQ(y, Tensor::zeros({10, 4}));
}

TEST(MetricDcc, MatchesOracle) {
  const ParamStore s = dcc_store(3, 5, 4, 13);
  SeededRng rng(14);
  const Tensor x = sample(rng, Distribution::kNormal, {20, 3});
  const Tensor y = run_dcc(s, 4, x);
  auto h = oracle::to_mat(x.data(), 20, 3);
  std::size_t dil = 1;
  for (int l = 0; l < 4; ++l, dil *= 2) {
    const std::string k = "encoders.dcc." + std::to_string(l);
    auto m = [&](const std::string& n) {
      const Tensor& t = s.at(k + n);
      return oracle::to_mat(t.data(), t.rows(), t.cols());
    };
    h = oracle::causal_conv(h, m(".past"), m(".current"), s.at(k + ".b").data(), dil);
  }
  for (std::size_t t = 0; t < 20; ++t)
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(y.at(t, k), h[t][k], 1e-12);
}

TEST(MetricDcc, CausalUnderFuzzing) {
  SeededRng rng(15);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t layers = 1 + rng.index(5), T = 1 + rng.index(24), C = 1 + rng.index(4);
    const ParamStore s = dcc_store(C, 3, layers, 100 + static_cast<std::uint64_t>(trial));
    const Tensor x = sample(rng, Distribution::kNormal, {T, C});
    Tensor xp = x;
    const std::size_t t0 = rng.index(T);
    for (std::size_t c = 0; c < C; ++c) xp.at(t0, c) += rng.uniform(-3, 3);
    const Tensor a = run_dcc(s, layers, x), b = run_dcc(s, layers, xp);
    for (std::size_t t = 0; t < t0; ++t)
      for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(a.at(t, k), b.at(t, k)) << "trial " << trial << " t " << t;
  }
}

TEST(MetricDcc, GradientMatchesFiniteDifferences) {
  ParamStore s = dcc_store(2, 3, 3, 16);
  SeededRng rng(17);
  const Tensor x = sample(rng, Distribution::kNormal, {9, 2});
  const auto coords = sample_coordinates(s, 30, rng);
  const double err = grad_check_params(
      [&](const Bound& b) { return sum(square(metric_dcc(b.tape().constant(x), DccParams::bind(b, 3)))); }, s,
      coords, 1e-6);
  EXPECT_LT(err, 1e-5);
}

TEST(MetricDcc, RejectsBadWindows) {
  const ParamStore s = dcc_store(2, 3, 1, 18);
  EXPECT_THROW(run_dcc(s, 1, Tensor::zeros({0, 2})), std::invalid_argument);
  EXPECT_THROW(run_dcc(s, 1, Tensor::zeros({4})), ShapeError);
}

// --- entities and events ---------------------------------------------------

TEST(Vocabulary, UnknownMapsToReservedRow) {
  Vocabulary v;
  EXPECT_EQ(v.add("svc-1"), 1u);
  EXPECT_EQ(v.add("svc-1"), 1u);
  EXPECT_EQ(v.lookup("nope"), Vocabulary::kUnk);
  EXPECT_EQ(v.size(), 2u);
}

struct EntityFixture {
  std::vector<Vocabulary> vocab = std::vector<Vocabulary>(2);
  Tensor t0 = Tensor::matrix({{0, 0}, {1, 2}, {3, 4}});
  Tensor t1 = Tensor::matrix({{-1, -1}, {10, 20}});
  EntityFixture() {
    vocab[0].add("a");
    vocab[0].add("b");
    vocab[1].add("eu");
  }
};

TEST(EntityTokens, SumOfAttributeRows) {
  EntityFixture f;
  Tape tape;
  const Tensor out = entity_tokens({{"b", "eu"}, {"b", "eu"}, {"zzz", "eu"}}, f.vocab,
                                   {tape.constant(f.t0), tape.constant(f.t1)})
                         .value();
  EXPECT_EQ(out, Tensor::matrix({{13, 24}, {13, 24}, {10, 20}}));
}

TEST(EntityTokens, UnknownUsesUnkRow) {
  EntityFixture f;
  Tape tape;
  const Tensor out = entity_tokens({{"x", "y"}}, f.vocab, {tape.constant(f.t0), tape.constant(f.t1)}).value();
  EXPECT_EQ(out, Tensor::matrix({{-1, -1}}));
}

TEST(EntityTokens, Validates) {
  EntityFixture f;
  Tape tape;
  EXPECT_THROW(entity_tokens({{"a"}}, f.vocab, {tape.constant(f.t0), tape.constant(f.t1)}), std::invalid_argument);
  EXPECT_THROW(entity_tokens({}, f.vocab, {tape.constant(f.t0), tape.constant(f.t1)}), std::invalid_argument);
}

TEST(EventTokens, TimeZeroAddsOnesThenZeros) {
  Vocabulary v;
  v.add("alert");
  Tape tape;
  const Tensor table = Tensor::matrix({{0, 0, 0, 0, 0, 0}, {0.5, -0.5, 1, 2, 3, 4}});
  const Tensor out = event_tokens({{"alert", 0.0}}, v, tape.constant(table), Tensor::vector({0.3, 1.7})).value();
  EXPECT_EQ(out, Tensor::matrix({{1.5, 0.5, 1, 2, 3, 4}}));
}

TEST(EventTokens, EncodesTime) {
  Vocabulary v;
  Tape tape;
  const Tensor out =
      event_tokens({{"unseen", 0.25}}, v, tape.constant(Tensor::zeros({1, 3})), Tensor::vector({1.0})).value();
  EXPECT_NEAR(out[0], 0.0, 1e-15);
  EXPECT_NEAR(out[1], 1.0, 1e-15);
  EXPECT_EQ(out[2], 0.0);
}

TEST(Encoders, InitShapesAndFiniteOutputs) {
  ParamStore s;
  SeededRng rng(19);
  Dims d;
  init_params(s, d, 12, rng);
  EXPECT_EQ(s.at("encoders.trace.0.W").shape(), (Shape{64, 19}));
  EXPECT_EQ(s.at("encoders.dcc.3.past").shape(), (Shape{64, 64}));
  Tape tape;
  Bound b(tape, s);
  const Tensor y =
      metric_dcc(tape.constant(sample(rng, Distribution::kNormal, {30, 12})), DccParams::bind(b, d.dcc_layers)).value();
  EXPECT_EQ(y.shape(), (Shape{30, 64}));
  EXPECT_TRUE(y.all_finite());
  Var table = tape.constant(sample(rng, Distribution::kNormal, {4, 16}));
  const Tensor h =
      trace_gat(span_features(chain3(), table), chain3().neighbourhood(), TraceGatParams::bind(b, d.trace_layers))
          .h.value();
  EXPECT_EQ(h.shape(), (Shape{3, 64}));
  EXPECT_TRUE(h.all_finite());
}

}  // namespace
}  // namespace hyperode::encoders
