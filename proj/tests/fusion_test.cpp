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

#include "hyperode/fusion.hpp"
#include "hyperode/gradcheck.hpp"
#include "oracles.hpp"

namespace hyperode::fusion {
namespace {

oracle::Mat mat(const Tensor& t) { return oracle::to_mat(t.data(), t.rows(), t.cols()); }

ParamStore mh_store(std::size_t d, std::uint64_t seed, double s = 0.6) {
  ParamStore store;
  SeededRng rng(seed);
  for (const char* w : {"Wq", "Wk", "Wv", "Wo"}) store.add(std::string("mh.") + w, sample(rng, Distribution::kNormal, {d, d}) * s);
  return store;
}

struct MhRun {
  Attention a;
  MultiHeadParams p;
};

double row_sum(const Tensor& w, std::size_t r) {
  double s = 0;
  for (std::size_t c = 0; c < w.cols(); ++c) s += w.at(r, c);
  return s;
}

// --- self-attention --------------------------------------------------------

TEST(SelfAttention, SingleTokenHasUnitWeight) {
  const ParamStore s = mh_store(8, 1);
  Tape tape;
  Bound b(tape, s);
  SeededRng rng(2);
  const Tensor z = sample(rng, Distribution::kNormal, {1, 8});
  const auto a = self_attn_block(tape.constant(z), MultiHeadParams::bind(b, "mh"), 4);
  for (const auto& w : a.weights) EXPECT_DOUBLE_EQ(w.value()[0], 1.0);
  // With a single key each head returns its V projection: out = LN(z + (z Wv) Wo).
  const auto zv = oracle::multihead(mat(z), mat(z), mat(z), mat(s.at("mh.Wq")), mat(s.at("mh.Wk")),
                                    mat(s.at("mh.Wv")), mat(s.at("mh.Wo")), 1);
  const auto want = oracle::layer_norm_residual(mat(z), zv);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(a.out.value()[k], want[0][k], 1e-12);
}

TEST(SelfAttention, RowsSumToOne) {
  const ParamStore s = mh_store(8, 3);
  Tape tape;
  Bound b(tape, s);
  SeededRng rng(4);
  const auto a = self_attn_block(tape.constant(sample(rng, Distribution::kNormal, {6, 8})), MultiHeadParams::bind(b, "mh"), 4);
  ASSERT_EQ(a.weights.size(), 4u);
  for (const auto& w : a.weights)
    for (std::size_t r = 0; r < 6; ++r) EXPECT_NEAR(row_sum(w.value(), r), 1.0, 1e-10);
}

TEST(SelfAttention, TwoTokensMatchOracle) {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const ParamStore s = mh_store(8, seed);
    Tape tape;
    Bound b(tape, s);
    SeededRng rng(seed + 100);
    const Tensor z = sample(rng, Distribution::kNormal, {2, 8});
    const auto a = self_attn_block(tape.constant(z), MultiHeadParams::bind(b, "mh"), 4);
    const auto mh = oracle::multihead(mat(z), mat(z), mat(z), mat(s.at("mh.Wq")), mat(s.at("mh.Wk")),
                                      mat(s.at("mh.Wv")), mat(s.at("mh.Wo")), 4);
    const auto want = oracle::layer_norm_residual(mat(z), mh);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(a.out.value().at(i, k), want[i][k], 1e-10);
  }
}

TEST(SelfAttention, RejectsIndivisibleHeads) {
  const ParamStore s = mh_store(6, 5);
  Tape tape;
  Bound b(tape, s);
  EXPECT_THROW(self_attn_block(tape.constant(Tensor::zeros({2, 6})), MultiHeadParams::bind(b, "mh"), 4), ShapeError);
}

// --- cross-attention -------------------------------------------------------

TEST(CrossAttention, SingleSourceTokenGetsAllWeight) {
  const ParamStore s = mh_store(8, 6);
  Tape tape;
  Bound b(tape, s);
  SeededRng rng(7);
  const auto a = cross_attention(tape.constant(sample(rng, Distribution::kNormal, {5, 8})),
                                 tape.constant(sample(rng, Distribution::kNormal, {1, 8})), MultiHeadParams::bind(b, "mh"), 4);
  EXPECT_EQ(a.out.shape(), (Shape{5, 8}));
  for (const auto& w : a.weights)
    for (std::size_t r = 0; r < 5; ++r) EXPECT_DOUBLE_EQ(w.value().at(r, 0), 1.0);
}

TEST(CrossAttention, ShapeFollowsQueries) {
  const ParamStore s = mh_store(8, 8);
  Tape tape;
  Bound b(tape, s);
  const auto a = cross_attention(tape.constant(Tensor::ones({3, 8})), tape.constant(Tensor::ones({7, 8})),
                                 MultiHeadParams::bind(b, "mh"), 4);
  EXPECT_EQ(a.out.shape(), (Shape{3, 8}));
  EXPECT_EQ(a.weights[0].shape(), (Shape{3, 7}));
}

TEST(CrossAttention, MatchesOracle) {
  const ParamStore s = mh_store(8, 9);
  Tape tape;
  Bound b(tape, s);
  SeededRng rng(10);
  const Tensor q = sample(rng, Distribution::kNormal, {3, 8}), kv = sample(rng, Distribution::kNormal, {4, 8});
  const auto a = cross_attention(tape.constant(q), tape.constant(kv), MultiHeadParams::bind(b, "mh"), 4);
  const auto want = oracle::multihead(mat(q), mat(kv), mat(kv), mat(s.at("mh.Wq")), mat(s.at("mh.Wk")),
                                      mat(s.at("mh.Wv")), mat(s.at("mh.Wo")), 4);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(a.out.value().at(i, k), want[i][k], 1e-10);
}

TEST(CrossAttention, Asymmetric) {
  const ParamStore s = mh_store(8, 11);
  Tape tape;
  Bound b(tape, s);
  SeededRng rng(12);
  Var x = tape.constant(sample(rng, Distribution::kNormal, {3, 8}));
  Var y = tape.constant(sample(rng, Distribution::kNormal, {3, 8}));
  const auto p = MultiHeadParams::bind(b, "mh");
  const Tensor xy = cross_attention(x, y, p, 4).out.value(), yx = cross_attention(y, x, p, 4).out.value();
  EXPECT_GT(l2(xy - yx) / l2(xy), 1e-3);
}

// --- routing ---------------------------------------------------------------

Tensor route(const std::vector<Tensor>& means, const Tensor& ctx, const Tensor& w) {
  Tape tape;
  std::vector<Var> m;
  for (const auto& t : means) m.push_back(tape.constant(t));
  return routing_weights(m, tape.constant(ctx), tape.constant(w)).value();
}

TEST(Routing, ZeroWeightsAreUniform) {
  SeededRng rng(13);
  std::vector<Tensor> means;
  for (int i = 0; i < 5; ++i) means.push_back(sample(rng, Distribution::kNormal, {4}));
  const Tensor beta = route(means, sample(rng, Distribution::kNormal, {4}), Tensor::zeros({12}));
  for (std::size_t m = 0; m < 5; ++m)
    for (std::size_t n = 0; n < 5; ++n) EXPECT_NEAR(beta.at(m, n), m == n ? 0.0 : 0.25, 1e-15);
}

TEST(Routing, EqualScoresAreUniform) {
  std::vector<Tensor> means(5, Tensor::vector({1, -2}));
  const Tensor beta = route(means, Tensor::vector({0.3, 0.1}), Tensor::vector({0.5, 0.2, -1, 3, 0.7, 0.7}));
  for (std::size_t m = 0; m < 5; ++m)
    for (std::size_t n = 0; n < 5; ++n) EXPECT_NEAR(beta.at(m, n), m == n ? 0.0 : 0.25, 1e-15);
}

TEST(Routing, OneHotScoreExample) {
  // Only the m' slice of w is nonzero, so s_{0,m'} = zbar_{m'}[0]: scores [1, 0, 0, 0].
  std::vector<Tensor> means{Tensor::vector({0}), Tensor::vector({1}), Tensor::vector({0}), Tensor::vector({0}),
                            Tensor::vector({0})};
  const Tensor beta = route(means, Tensor::vector({0}), Tensor::vector({0, 1, 0}));
  EXPECT_NEAR(beta.at(0, 1), 0.4754, 1e-4);
  EXPECT_NEAR(beta.at(0, 1), std::exp(1.0) / (std::exp(1.0) + 3), 1e-14);
  for (std::size_t n : {2, 3, 4}) EXPECT_NEAR(beta.at(0, n), 0.1749, 1e-4);
}

TEST(Routing, RowsSumToOneWithZeroDiagonal) {
  SeededRng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Tensor> means;
    for (int i = 0; i < 5; ++i) means.push_back(sample(rng, Distribution::kNormal, {6}));
    const Tensor beta = route(means, sample(rng, Distribution::kNormal, {6}), sample(rng, Distribution::kNormal, {18}));
    for (std::size_t m = 0; m < 5; ++m) {
      EXPECT_EQ(beta.at(m, m), 0.0);
      EXPECT_NEAR(row_sum(beta, m), 1.0, 1e-10);
    }
  }
}

// --- fuse ------------------------------------------------------------------

struct FuseFixture {
  Tape tape;
  Var zhat;
  std::vector<Var> cross;
  FuseFixture() {
    SeededRng rng(15);
    zhat = tape.constant(sample(rng, Distribution::kNormal, {3, 4}));
    for (int i = 0; i < 5; ++i) cross.push_back(tape.constant(sample(rng, Distribution::kNormal, {3, 4})));
  }
};

TEST(Fuse, ZeroRoutingKeepsInput) {
  FuseFixture f;
  EXPECT_EQ(fuse(f.zhat, f.cross, f.tape.constant(Tensor::zeros({5})), 0).value(), f.zhat.value());
}

TEST(Fuse, SingleRouteAddsThatContext) {
  FuseFixture f;
  const Tensor out = fuse(f.zhat, f.cross, f.tape.constant(Tensor::vector({0, 0, 1, 0, 0})), 0).value();
  EXPECT_LT(max_abs_diff(out, f.zhat.value() + f.cross[2].value()), 1e-15);
}

TEST(Fuse, IgnoresSelfEntry) {
  FuseFixture f;
  const Tensor out = fuse(f.zhat, f.cross, f.tape.constant(Tensor::vector({7, 0, 0, 0, 0})), 0).value();
  EXPECT_EQ(out, f.zhat.value());
}

TEST(Fuse, LinearInContext) {
  FuseFixture f;
  Var beta = f.tape.constant(Tensor::vector({0, 0.1, 0.2, 0.3, 0.4}));
  std::vector<Var> doubled;
  for (Var c : f.cross) doubled.push_back(scale(c, 2.0));
  const Tensor once = fuse(f.zhat, f.cross, beta, 0).value() - f.zhat.value();
  const Tensor twice = fuse(f.zhat, doubled, beta, 0).value() - f.zhat.value();
  EXPECT_LT(max_abs_diff(twice, once * 2.0), 1e-14);
}

// --- pooling and aggregation ----------------------------------------------

TEST(Pooling, SingleTokenIsIdentity) {
  Tape tape;
  const auto p = attention_pool(tape.constant(Tensor::matrix({{1, -2, 3}})), tape.constant(Tensor::vector({5, 1, -1})));
  EXPECT_DOUBLE_EQ(p.weights.value()[0], 1.0);
  EXPECT_EQ(p.vector.value(), Tensor::vector({1, -2, 3}));
}

TEST(Pooling, WeightsSumToOneAndOrderInvariant) {
  SeededRng rng(16);
  const Tensor Z = sample(rng, Distribution::kNormal, {6, 4}), w = sample(rng, Distribution::kNormal, {4});
  Tensor Zr(Z.shape());
  const std::vector<std::size_t> perm{5, 2, 0, 4, 1, 3};
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = 0; k < 4; ++k) Zr.at(i, k) = Z.at(perm[i], k);
  Tape tape;
  const auto a = attention_pool(tape.constant(Z), tape.constant(w));
  const auto b = attention_pool(tape.constant(Zr), tape.constant(w));
  const auto& wa = a.weights.value().data();
  EXPECT_NEAR(std::accumulate(wa.begin(), wa.end(), 0.0), 1.0, 1e-10);
  EXPECT_LT(max_abs_diff(a.vector.value(), b.vector.value()), 1e-14);
}

TEST(Aggregate, InputWidthIsFiveModelsPlusTwo) {
  ParamStore s;
  SeededRng rng(17);
  Dims d{8, 4, 16, 8, 2};
  init_params(s, d, rng);
  EXPECT_EQ(s.at("fusion.mlp.W1").cols(), 5 * 8 + 2u);
  Tape tape;
  Bound b(tape, s);
  std::vector<Var> pooled(5, tape.constant(Tensor::ones({8})));
  const Var out = aggregate(pooled, {tape.scalar(0.5), tape.scalar(-0.1)}, MlpParams::bind(b, "fusion.mlp"));
  EXPECT_EQ(out.shape(), (Shape{8}));
  EXPECT_THROW(aggregate(pooled, {tape.scalar(0.5)}, MlpParams::bind(b, "fusion.mlp")), ShapeError);
}

// --- full block ------------------------------------------------------------

struct BlockInput {
  std::vector<Tensor> tokens;
  Tensor context = Tensor::vector({0.4, -1.2, 3.5, 0.1});
  explicit BlockInput(std::uint64_t seed, std::size_t d) {
    SeededRng rng(seed);
    for (std::size_t m = 0; m < kModalities; ++m) tokens.push_back(sample(rng, Distribution::kNormal, {1 + m % 3, d}));
  }
  Trace run(const Bound& b, std::size_t heads, std::optional<std::size_t> drop = std::nullopt) const {
    Tape& tape = b.tape();
    std::vector<std::optional<Var>> t;
    for (std::size_t m = 0; m < kModalities; ++m) t.push_back(m == drop ? std::nullopt : std::optional(tape.constant(tokens[m])));
    return forward(t, context, {tape.scalar(0.7), tape.scalar(-0.3)}, Params::bind(b), heads);
  }
};

ParamStore block_store(std::uint64_t seed) {
  ParamStore s;
  SeededRng rng(seed);
  init_params(s, Dims{8, 4, 12, 6, 2}, rng);
  return s;
}

TEST(FusionBlock, NormalisationsHold) {
  const ParamStore s = block_store(18);
  Tape tape;
  Bound b(tape, s);
  const Trace tr = BlockInput(19, 8).run(b, 4);
  EXPECT_EQ(tr.final.shape(), (Shape{6}));
  for (std::size_t m = 0; m < kModalities; ++m) {
    EXPECT_NEAR(row_sum(tr.beta.value(), m), 1.0, 1e-10);
    const auto& w = tr.pooling[m].value().data();
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-10);
    for (const auto& h : tr.self_attn[m].weights)
      for (std::size_t r = 0; r < h.value().rows(); ++r) EXPECT_NEAR(row_sum(h.value(), r), 1.0, 1e-10);
  }
}

TEST(FusionBlock, MissingModalityUsesNullToken) {
  const ParamStore s = block_store(20);
  Tape tape;
  Bound b(tape, s);
  const Trace tr = BlockInput(21, 8).run(b, 4, kEvent);
  EXPECT_TRUE(tr.used_null[kEvent]);
  EXPECT_FALSE(tr.used_null[kLog]);
  EXPECT_EQ(tr.fused[kEvent].shape(), (Shape{1, 8}));
  const Gradients g = tape.backward(sum(tr.final));
  EXPECT_GT(l2(g[b["fusion.null_tokens"]]), 0.0);
}

TEST(FusionBlock, GradientMatchesFiniteDifferences) {
  ParamStore s = block_store(22);
  const BlockInput in(23, 8);
  SeededRng rng(24);
  // The context projection has an identically zero gradient (see the next
  // test); finite differences there are pure rounding noise.
  std::vector<ParamCoordinate> coords;
  for (const auto& c : sample_coordinates(s, 120, rng))
    if (c.name != "fusion.ctx_W" && c.name != "fusion.ctx_b" && c.name != "fusion.route_w") coords.push_back(c);
  for (std::size_t i = 8; i < 16; ++i) coords.push_back({"fusion.route_w", i});
  const double err = grad_check_params([&](const Bound& b) { return sum(square(in.run(b, 4).final)); }, s, coords, 1e-6);
  EXPECT_LT(err, 1e-4);
}

TEST(FusionBlock, RoutingIgnoresTargetAndContextTerms) {
  // In the row softmax over m', the target-mean and context terms of the
  // score are shared by every entry and cancel.
  const ParamStore s = block_store(25);
  Tape tape;
  Bound b(tape, s);
  const Gradients g = tape.backward(sum(square(BlockInput(26, 8).run(b, 4).final)));
  const Tensor gw = g[b["fusion.route_w"]];
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_NEAR(gw[i], 0.0, 1e-14);
    EXPECT_NEAR(gw[16 + i], 0.0, 1e-14);
  }
  EXPECT_LT(l2(g[b["fusion.ctx_W"]]), 1e-14);
  double source = 0;
  for (std::size_t i = 8; i < 16; ++i) source += std::abs(gw[i]);
  EXPECT_GT(source, 1e-8);
}

}  // namespace
}  // namespace hyperode::fusion
