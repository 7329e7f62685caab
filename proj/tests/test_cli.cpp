// Copyright 2026 The SLSE Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Drives the built command-line binary through every subcommand.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>

#include "slse/config.hpp"
#include "slse/pipeline.hpp"

#ifndef SLSE_CLI_PATH
#error "SLSE_CLI_PATH must name the command-line binary"
#endif

namespace slse {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int exit_code = -1;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "slse_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    const json cfg = {
        {"synth", {{"n_subjects", 400}}},
        {"slse", {{"total_steps", 4}, {"batch_size", 8}, {"encoder", {{"conv_channels", {4, 8}}}}}},
        {"probe", {{"steps", 40}}},
        {"gbdt", {{"n_trees", 20}}},
        {"ensemble", {{"n_runs", 3}, {"k", 2}}},
        {"seed", 5}};
    io::WriteFileAtomic(dir_ / "config.json", cfg.dump());
  }

  static Result Run(const std::string& args, const std::string& env = "") {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = env + " " + std::string(SLSE_CLI_PATH) + " --config " +
                            (dir_ / "config.json").string() + " --out " + (dir_ / "out").string() +
                            " " + args + " 2> " + err.string() + " > /dev/null";
    const int status = std::system(cmd.c_str());
    Result r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = fs::exists(err) ? io::ReadFile(err) : "";
    return r;
  }

  static fs::path Out(const std::string& name) { return dir_ / "out" / name; }

  static inline fs::path dir_;
};

TEST_F(CliTest, EndToEnd) {
  for (const char* step : {"synth", "preprocess", "pretrain", "embed", "train", "evaluate",
                           "explain"}) {
    const Result r = Run(step);
    ASSERT_EQ(r.exit_code, 0) << step << ": " << r.err;
  }
  for (const char* f : {"blows.csv", "cohort.csv", "curves.csv", "rejected.csv", "encoder.ckpt",
                        "pretrain_loss.csv", "embeddings.csv", "ensemble/manifest.json",
                        "eval_report.json", "eval_report.csv", "characteristics.csv",
                        "attributions.csv"}) {
    EXPECT_TRUE(fs::exists(Out(f))) << f;
  }
  const json meta = json::parse(io::ReadFile(Out("cohort.csv.meta.json")));
  const config::RunConfig cfg = config::Load(dir_ / "config.json");
  EXPECT_EQ(meta["config_hash"], cfg.Hash());
  EXPECT_EQ(meta["format_version"], 1);

  // Reloading the saved ensemble reproduces the reported test AUROC.
  const auto ensemble = pipeline::LoadEnsemble(Out("ensemble"));
  const auto records = cohort::JoinRecords(cohort::CohortFromCsv(io::ReadFile(Out("cohort.csv"))),
                                           cohort::CurvesFromCsv(io::ReadFile(Out("curves.csv"))));
  const auto part = pipeline::PartitionRecords(records, cfg.pipeline.split, cfg.seed);
  std::vector<double> scores;
  for (std::size_t i = 0; i < part.test.size(); ++i) {
    scores.push_back(ensemble.Predict(part.test.curve(i), part.test.demo(i)));
  }
  const auto report = pipeline::Evaluator::Evaluate(part.test, scores);
  const json saved = json::parse(io::ReadFile(Out("eval_report.json")));
  EXPECT_EQ(saved["overall_auroc"].get<double>(), report.overall_auroc);
  EXPECT_EQ(saved["metadata"]["config_hash"], cfg.Hash());

  // Attributions: base + phi == raw for each subject, and raw matches the
  // top bundle's tree score.
  std::istringstream in(io::ReadFile(Out("attributions.csv")));
  std::string line;
  std::getline(in, line);
  std::map<std::string, double> sum, raw;
  while (std::getline(in, line)) {
    const auto a = line.find(','), b = line.rfind(',');
    const std::string id = line.substr(0, a), feature = line.substr(a + 1, b - a - 1);
    const double v = std::stod(line.substr(b + 1));
    (feature == "raw" ? raw[id] : sum[id]) += v;
  }
  ASSERT_EQ(raw.size(), part.test.size());
  for (const auto& [id, total] : sum) EXPECT_NEAR(total, raw[id], 1e-9) << id;
  const auto emb = ssrl::Embed(*ensemble.encoder, part.test.curve(0));
  const auto x = ensemble.bundles[0].TreeFeatures(&emb, part.test.demo(0), false);
  EXPECT_NEAR(raw[part.test.subject_id(0)], ensemble.bundles[0].tree->RawScore(x), 1e-9);

  // A second evaluate writes identical bytes.
  const std::string first = io::ReadFile(Out("eval_report.json"));
  ASSERT_EQ(Run("evaluate").exit_code, 0);
  EXPECT_EQ(io::ReadFile(Out("eval_report.json")), first);
}

TEST_F(CliTest, AblateWritesEveryConfiguration) {
  ASSERT_EQ(Run("synth").exit_code, 0);
  ASSERT_EQ(Run("preprocess").exit_code, 0);
  const Result r = Run("ablate");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  for (const char* name : {"full", "no_ensemble", "no_encoder", "no_augment", "embedding_only"}) {
    EXPECT_TRUE(fs::exists(Out(std::string("ablations/") + name + "/eval_report.json"))) << name;
  }
  const json summary = json::parse(io::ReadFile(Out("ablations/ablation_summary.json")));
  EXPECT_EQ(summary["runs"].size(), 5u);
}

TEST_F(CliTest, ErrorsAreStructured) {
  Result r = Run("frobnicate");
  EXPECT_EQ(r.exit_code, 2);
  r = Run("train --ablation bogus");
  EXPECT_EQ(r.exit_code, 1);
  const json record = json::parse(r.err.substr(r.err.find('{')));
  EXPECT_EQ(record["status"], "error");
  EXPECT_EQ(record["subcommand"], "train");
}

TEST_F(CliTest, RefusesMismatchedArtifacts) {
  ASSERT_EQ(Run("synth").exit_code, 0);
  ASSERT_EQ(Run("preprocess").exit_code, 0);
  ASSERT_EQ(Run("pretrain").exit_code, 0);
  ASSERT_EQ(Run("train").exit_code, 0);
  // A different seed must not evaluate an ensemble trained under seed 5.
  const Result r = Run("--seed 6 evaluate");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("seed"), std::string::npos) << r.err;

  json meta = json::parse(io::ReadFile(Out("curves.csv.meta.json")));
  meta["format_version"] = 2;
  io::WriteFileAtomic(Out("curves.csv.meta.json"), meta.dump());
  EXPECT_EQ(Run("pretrain").exit_code, 1);
}

}  // namespace
}  // namespace slse
