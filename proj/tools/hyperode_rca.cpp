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

// hyperode-rca: generate | train | eval | explain

#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "hyperode/config.hpp"
#include "hyperode/datapipe.hpp"
#include "hyperode/train.hpp"

namespace {

using namespace hyperode;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path);
}

datapipe::Dataset load_for_cli(const std::string& path) {
  if (path.empty()) throw UsageError("no dataset path given");
  return datapipe::load_dataset(path);
}

int cmd_generate(std::uint64_t seed, std::size_t services, std::size_t incidents, const std::string& out) {
  datapipe::GeneratorOptions o;
  o.seed = seed;
  o.services = services;
  o.incidents = incidents;
  datapipe::Dataset d;
  try {
    d = datapipe::synth_generate(o);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  datapipe::save_dataset(out, d);
  const auto& m = d.manifest;
  std::cout << "wrote " << out << ": " << m.incidents << " incidents, " << m.services.size() << " services, "
            << m.calls.size() << " call edges, seed " << m.seed << "\n";
  for (const auto& [split, n] : m.splits) std::cout << "  " << split << ": " << n << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_checkpoint) {
  RunConfig cfg = load_config(config_path);
  if (!out_checkpoint.empty()) cfg.checkpoint = out_checkpoint;
  if (cfg.checkpoint.empty()) throw UsageError("no checkpoint path: pass --out-checkpoint or set \"checkpoint\"");
  cfg.validate();
  const auto data = load_for_cli(cfg.dataset);
  const auto res = train::train(data, cfg, [](const train::EpochStats& s) {
    std::cout << s.to_json().dump() << std::endl;
  });
  train::save_checkpoint(cfg.checkpoint, res.model, cfg);
  std::cout << "checkpoint written to " << cfg.checkpoint << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset, const std::string& report,
             const std::string& split) {
  const auto model = train::load_checkpoint(checkpoint);
  const auto data = load_for_cli(dataset);
  const auto rep = train::evaluate(model, data, split);
  const std::string text = rep.document.dump(2) + "\n";
  if (report.empty()) {
    std::cout << text;
  } else {
    write_text(report, text);
    std::cout << "f1 " << rep.metric("f1") << "  mrr " << rep.metric("mrr") << "  report written to " << report
              << "\n";
  }
  return 0;
}

int cmd_explain(const std::string& checkpoint, const std::string& dataset, const std::string& id,
                const std::string& out) {
  const auto model = train::load_checkpoint(checkpoint);
  const auto data = load_for_cli(dataset);
  const auto ex = train::explain(model, data, id);
  std::string dot_path = out;
  if (dot_path.size() > 5 && dot_path.ends_with(".json")) dot_path.resize(dot_path.size() - 5);
  dot_path += ".dot";
  write_text(out, ex.document.dump(2) + "\n");
  write_text(dot_path, ex.dot);
  std::cout << "explanation written to " << out << " and " << dot_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Root cause analysis over service hypergraphs and latent dynamics"};
  app.require_subcommand(1);

  std::uint64_t seed = 7;
  std::size_t services = 8, incidents = 200;
  std::string out;
  auto* gen = app.add_subcommand("generate", "write a synthetic incident dataset");
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--services", services, "number of services (at least 3)");
  gen->add_option("--incidents", incidents, "number of incidents");
  gen->add_option("--out", out, "output dataset file")->required();

  std::string config, out_checkpoint;
  auto* tr = app.add_subcommand("train", "train a model and write a checkpoint");
  tr->add_option("--config", config, "run configuration JSON")->required();
  tr->add_option("--out-checkpoint", out_checkpoint, "checkpoint path (overrides the config)");

  std::string checkpoint, dataset, report, split = "test";
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint and write a metrics report");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--dataset", dataset, "dataset file")->required();
  ev->add_option("--report", report, "report JSON path (stdout when omitted)");
  ev->add_option("--split", split, "train, val, test or all")->capture_default_str();

  std::string incident_id;
  auto* ex = app.add_subcommand("explain", "explain the ranking for one incident");
  ex->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ex->add_option("--dataset", dataset, "dataset file")->required();
  ex->add_option("--incident-id", incident_id, "incident id")->required();
  ex->add_option("--out", out, "explanation JSON path; the DOT graph goes next to it")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_generate(seed, services, incidents, out);
    if (*tr) return cmd_train(config, out_checkpoint);
    if (*ev) return cmd_eval(checkpoint, dataset, report, split);
    if (*ex) return cmd_explain(checkpoint, dataset, incident_id, out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const datapipe::DatasetError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
