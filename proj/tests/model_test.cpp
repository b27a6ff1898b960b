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


#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "hyperode/gradcheck.hpp"
#include "hyperode/train.hpp"

namespace hyperode {
namespace {

datapipe::Dataset small_dataset(std::size_t incidents, std::uint64_t seed = 7) {
  datapipe::GeneratorOptions o;
  o.seed = seed;
  o.incidents = incidents;
  return datapipe::synth_generate(o);
}

TEST(Model, BatchedTemplateAssignmentMatchesPerRow) {
  SeededRng rng(3);
  Tape tape;
  Tensor emb = sample(rng, Distribution::kNormal, {6, 8});
  for (std::size_t i = 0; i < 6; ++i) {
    double n = 0;
    for (std::size_t j = 0; j < 8; ++j) n += emb.at(i, j) * emb.at(i, j);
    for (std::size_t j = 0; j < 8; ++j) emb.at(i, j) /= std::sqrt(n);
  }
  Var protos = tape.constant(sample(rng, Distribution::kNormal, {5, 8}));
  const Tensor batched = model::template_probs(tape.constant(emb), protos).value();
  for (std::size_t i = 0; i < 6; ++i) {
    Tensor row(Shape{8});
    for (std::size_t j = 0; j < 8; ++j) row[j] = emb.at(i, j);
    const Tensor single = encoders::template_assign(tape.constant(row), protos).probs.value();
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(batched.at(i, j), single[j], 1e-12);
  }
}

TEST(Model, PrepareShapes) {
  const auto d = small_dataset(5);
  const model::Dims dims;
  const auto p = model::prepare(d.incidents[0], d.manifest, dims);
  const std::size_t S = d.manifest.services.size();
  EXPECT_EQ(p.vertex_stats.rows(), S);
  EXPECT_EQ(p.vertex_stats.cols(), model::kVertexStats);
  EXPECT_EQ(p.onsets.size(), S);
  EXPECT_EQ(p.metric_window.rows(), dims.grid);
  EXPECT_EQ(p.metric_window.cols(), S * d.manifest.metrics.size());
  EXPECT_EQ(p.context.size(), 4u);
  EXPECT_LE(p.log_service.size(), dims.max_log_tokens);
  EXPECT_EQ(p.labels.size(), p.candidates.size());
  EXPECT_DOUBLE_EQ(p.labels[p.truth], 1.0);
  for (const auto& e : p.hyperedges) EXPECT_LE(e.members.size(), dims.hyperedge_max_size);
}

TEST(Model, TotalLossGradientOnOneIncident) {
  const auto d = small_dataset(3);
  RunConfig cfg;
  cfg.ode_rtol = 1e-10;
  cfg.ode_atol = 1e-12;
  SeededRng rng(11);
  ParamStore store;
  const auto vocab = model::Vocabularies::build(d, "all");
  model::init_params(store, cfg.dims, vocab, rng);
  std::vector<model::Prepared> ps{model::prepare(d.incidents[0], d.manifest, cfg.dims)};
  model::init_prototypes(store, ps, cfg.dims, rng);

  model::ForwardOptions fo;
  fo.tau = 0.5;
  fo.ode = cfg.encode_options();
  const std::vector<const model::Prepared*> batch{&ps[0]};
  auto loss = [&](const Bound& b) { return train::batch_loss(b, store, batch, {0}, vocab, cfg, fo).total; };
  const auto coords = sample_coordinates(store, 32, rng);
  EXPECT_LT(grad_check_params(loss, store, coords), 1e-3);
}

TEST(Model, CausalPenaltyNeedsBothEnvironments) {
  const auto d = small_dataset(4);
  RunConfig cfg;
  SeededRng rng(5);
  ParamStore store;
  const auto vocab = model::Vocabularies::build(d, "all");
  model::init_params(store, cfg.dims, vocab, rng);
  const auto ps = train::prepare_split(d, cfg.dims, "all");
  model::ForwardOptions fo;
  const std::vector<const model::Prepared*> batch{&ps[0], &ps[1]};
  Tape t1;
  EXPECT_EQ(train::batch_loss(Bound(t1, store), store, batch, {0, 0}, vocab, cfg, fo).parts.causal.item(), 0.0);
  Tape t2;
  EXPECT_GT(train::batch_loss(Bound(t2, store), store, batch, {0, 1}, vocab, cfg, fo).parts.causal.item(), 0.0);
}

TEST(Model, EnvironmentsSplitAtMedianStart) {
  const auto d = small_dataset(10);
  const auto ps = train::prepare_split(d, model::Dims{}, "all");
  const auto env = train::time_environments(ps);
  EXPECT_EQ(std::count(env.begin(), env.end(), 1), 5);
}

class Trained : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new datapipe::Dataset(small_dataset(10));
    cfg_ = new RunConfig;
    cfg_->epochs = 2;
    result_ = new train::TrainResult(train::train(*data_, *cfg_));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete cfg_;
    delete data_;
  }
  static datapipe::Dataset* data_;
  static RunConfig* cfg_;
  static train::TrainResult* result_;
};
datapipe::Dataset* Trained::data_ = nullptr;
RunConfig* Trained::cfg_ = nullptr;
train::TrainResult* Trained::result_ = nullptr;

TEST_F(Trained, HistoryIsRecorded) {
  ASSERT_EQ(result_->history.size(), 2u);
  for (const auto& h : result_->history) {
    EXPECT_TRUE(std::isfinite(h.total));
    EXPECT_GE(h.entropy, 0.0);
    EXPECT_LE(h.entropy, std::log(2.0) + 1e-12);
  }
  EXPECT_NEAR(result_->history.back().tau, hypergat::kTauEnd, 1e-12);
  EXPECT_DOUBLE_EQ(result_->model.tau, result_->history.back().tau);
}

TEST_F(Trained, TrainingIsDeterministic) {
  const auto again = train::train(*data_, *cfg_);
  EXPECT_EQ(params_to_json(again.model.store), params_to_json(result_->model.store));
}

TEST_F(Trained, EvaluationReportFields) {
  const auto rep = train::evaluate(result_->model, *data_, "all");
  for (const char* k : {"f1", "precision", "recall", "mcc", "auc", "mrr"}) EXPECT_TRUE(rep.document.contains(k)) << k;
  EXPECT_EQ(rep.document["n_incidents"], data_->incidents.size());
  EXPECT_TRUE(rep.document["per_fault_type"].is_object());
  const double mrr = rep.metric("mrr");
  EXPECT_GT(mrr, 0.0);
  EXPECT_LE(mrr, 1.0);
}

TEST_F(Trained, CheckpointRoundTrip) {
  const auto path = (std::filesystem::temp_directory_path() / "hyperode_ckpt_test.json").string();
  train::save_checkpoint(path, result_->model, *cfg_);
  const auto loaded = train::load_checkpoint(path);
  std::remove(path.c_str());
  EXPECT_EQ(train::evaluate(loaded, *data_, "all").document, train::evaluate(result_->model, *data_, "all").document);
}

TEST_F(Trained, CheckpointRejectsGarbage) {
  EXPECT_THROW(train::model_from_json(nlohmann::json::object()), UsageError);
  EXPECT_THROW(train::load_checkpoint("/nonexistent/ckpt.json"), UsageError);
}

TEST_F(Trained, VocabularyMismatchIsRejected) {
  auto other = small_dataset(5);
  other.manifest.services.push_back("extra-service");
  EXPECT_THROW(train::evaluate(result_->model, other, "all"), UsageError);
}

TEST_F(Trained, ExplanationContents) {
  const auto& id = data_->incidents[0].id;
  const auto ex = train::explain(result_->model, *data_, id);
  EXPECT_EQ(ex.document["incident"], id);
  EXPECT_TRUE(ex.document["hyperedges"].is_array());
  EXPECT_FALSE(ex.document["attention"].empty());
  EXPECT_TRUE(ex.document["onsets"].is_object());
  EXPECT_EQ(ex.document["routing"].size(), fusion::kModalities);
  EXPECT_FALSE(ex.document["top_candidates"].empty());
  EXPECT_EQ(ex.dot.rfind("graph hypergraph {", 0), 0u);
  for (const auto& e : ex.document["hyperedges"]) {
    EXPECT_EQ(e["members"].size(), e["soft_values"].size());
    for (const auto& v : e["soft_values"]) {
      EXPECT_GE(v.get<double>(), 0.0);
      EXPECT_LE(v.get<double>(), 1.0);
    }
  }
  // Every DOT edge joins a service node to a hyperedge node.
  std::istringstream lines(ex.dot);
  for (std::string line; std::getline(lines, line);) {
    const auto sep = line.find(" -- ");
    if (sep == std::string::npos) continue;
    EXPECT_EQ(line.find("\"svc-"), 2u) << line;
    EXPECT_EQ(line.compare(sep + 4, 2, "\"e"), 0) << line;
  }
  EXPECT_THROW(train::explain(result_->model, *data_, "no-such-incident"), UsageError);
}

}  // namespace
}  // namespace hyperode
