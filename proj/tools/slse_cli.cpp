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

// slse: command-line driver for every pipeline stage.
//
//   slse synth      -> blows.csv, cohort.csv
//   slse preprocess -> curves.csv, rejected.csv
//   slse pretrain   -> encoder.ckpt, pretrain_loss.csv
//   slse embed      -> embeddings.csv
//   slse train      -> ensemble/
//   slse evaluate   -> eval_report.json, eval_report.csv, characteristics.csv
//   slse explain    -> attributions.csv
//   slse ablate     -> ablations/<name>/eval_report.{json,csv}, ablation_summary.json
//
// Failures print a single JSON error record to stderr and exit 1 (2 for
// usage errors).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "slse/cohort.hpp"
#include "slse/common.hpp"
#include "slse/config.hpp"
#include "slse/pipeline.hpp"
#include "slse/spiro.hpp"
#include "slse/ssrl.hpp"
#include "slse/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kArtifactVersion = 1;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string blows, curves, cohort, encoder, ensemble;
  std::string ablation = "full";
  std::string subjects = "test";
};

void Log(const std::string& msg) { std::cerr << "[slse] " << msg << "\n"; }

slse::config::RunConfig ResolveConfig(const Options& o) {
  slse::config::RunConfig cfg = o.config_path.empty()
                                    ? slse::config::FromJson(json::object())
                                    : slse::config::Load(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (const char* env = std::getenv("SLSE_OUT_DIR"); env != nullptr && *env != '\0') {
    cfg.out_dir = env;
  }
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  return cfg;
}

// Input path: explicit flag, else SLSE_<NAME> env var, else the default
// artifact inside the output directory.
fs::path InputPath(const std::string& flag, const char* env_name,
                   const slse::config::RunConfig& cfg, const char* default_name) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(env_name); env != nullptr && *env != '\0') return env;
  return fs::path(cfg.out_dir) / default_name;
}

json ArtifactMeta(const slse::config::RunConfig& cfg, const std::string& kind) {
  return {{"artifact", kind},
          {"format_version", kArtifactVersion},
          {"config_hash", cfg.Hash()},
          {"seed", cfg.seed}};
}

void WriteArtifact(const fs::path& path, const std::string& content,
                   const slse::config::RunConfig& cfg, const std::string& kind) {
  slse::io::WriteFileAtomic(path, content);
  slse::io::WriteFileAtomic(path.string() + ".meta.json", ArtifactMeta(cfg, kind).dump(1) + "\n");
  Log("wrote " + path.string());
}

// Refuses inputs whose sidecar names another format version.
void CheckSidecar(const fs::path& path) {
  const fs::path meta = path.string() + ".meta.json";
  if (!fs::exists(meta)) return;
  const json m = json::parse(slse::io::ReadFile(meta));
  slse::Require(m.value("format_version", -1) == kArtifactVersion, slse::ErrorCode::kFormat,
                path.string() + ": artifact format version " +
                    m.value("format_version", json()).dump() + " is not supported");
}

std::vector<slse::spiro::FlowVolumeCurve> ReadCurves(const fs::path& path) {
  CheckSidecar(path);
  return slse::cohort::CurvesFromCsv(slse::io::ReadFile(path));
}

std::vector<slse::cohort::SubjectRecord> ReadRecords(const Options& o,
                                                     const slse::config::RunConfig& cfg) {
  const fs::path cohort_path = InputPath(o.cohort, "SLSE_COHORT", cfg, "cohort.csv");
  CheckSidecar(cohort_path);
  const auto rows = slse::cohort::CohortFromCsv(slse::io::ReadFile(cohort_path));
  const auto curves = ReadCurves(InputPath(o.curves, "SLSE_CURVES", cfg, "curves.csv"));
  auto records = slse::cohort::JoinRecords(rows, curves, cfg.pipeline.labels);
  slse::Require(!records.empty(), slse::ErrorCode::kValidation,
                "no subject has both a curve and an RVEF measurement");
  Log("joined " + std::to_string(records.size()) + " subjects");
  return records;
}

slse::pipeline::Partition ReadPartition(const Options& o, const slse::config::RunConfig& cfg) {
  return slse::pipeline::PartitionRecords(ReadRecords(o, cfg), cfg.pipeline.split, cfg.seed);
}

// The ensemble must come from the same settings and seed, otherwise the
// re-derived split would not match the one used in training.
slse::pipeline::EnsembleBundle ReadEnsemble(const Options& o, const slse::config::RunConfig& cfg) {
  const fs::path dir = InputPath(o.ensemble, "SLSE_ENSEMBLE", cfg, "ensemble");
  const json m = slse::pipeline::ReadManifest(dir);
  slse::Require(m.at("config_hash").get<std::string>() == cfg.Hash() &&
                    m.at("seed").get<std::uint64_t>() == cfg.seed,
                slse::ErrorCode::kState,
                "ensemble was trained with config " + m.at("config_hash").get<std::string>() +
                    " / seed " + std::to_string(m.at("seed").get<std::uint64_t>()) +
                    ", current run uses " + cfg.Hash() + " / seed " + std::to_string(cfg.seed));
  return slse::pipeline::LoadEnsemble(dir);
}

void RunSynth(const Options& o) {
  const auto cfg = ResolveConfig(o);
  const auto cohort = slse::synth::GenerateCohort(cfg.SynthConfig());
  WriteArtifact(fs::path(cfg.out_dir) / "blows.csv", slse::cohort::BlowsToCsv(cohort.blows), cfg,
                "blows");
  WriteArtifact(fs::path(cfg.out_dir) / "cohort.csv", slse::cohort::CohortToCsv(cohort.rows), cfg,
                "cohort");
}

void RunPreprocess(const Options& o) {
  const auto cfg = ResolveConfig(o);
  const fs::path blows_path = InputPath(o.blows, "SLSE_BLOWS", cfg, "blows.csv");
  CheckSidecar(blows_path);
  const auto blows = slse::cohort::BlowsFromCsv(slse::io::ReadFile(blows_path));
  const auto result = slse::cohort::Preprocess(blows, cfg.blow);
  std::string rejected = "subject_id,reason\n";
  for (const auto& [id, reason] : result.rejected) {
    rejected += id + "," + slse::spiro::RejectReasonName(reason) + "\n";
  }
  Log(std::to_string(result.curves.size()) + " curves accepted, " +
      std::to_string(result.rejected.size()) + " blows rejected");
  WriteArtifact(fs::path(cfg.out_dir) / "curves.csv", slse::cohort::CurvesToCsv(result.curves),
                cfg, "curves");
  WriteArtifact(fs::path(cfg.out_dir) / "rejected.csv", rejected, cfg, "rejected");
}

void RunPretrain(const Options& o) {
  const auto cfg = ResolveConfig(o);
  const auto part = ReadPartition(o, cfg);
  Log("pretraining on " + std::to_string(part.train.size()) + " training curves");
  const auto result =
      slse::pipeline::PretrainOnTrain(part, cfg.Pipeline(), slse::pipeline::Ablation::kFull);
  const fs::path ckpt = fs::path(cfg.out_dir) / "encoder.ckpt";
  result.checkpoint.Save(ckpt);
  Log("wrote " + ckpt.string());
  WriteArtifact(fs::path(cfg.out_dir) / "pretrain_loss.csv",
                slse::ssrl::LossLogCsv(result.loss_trace), cfg, "pretrain_loss");
}

slse::ssrl::EncoderCheckpoint ReadEncoder(const Options& o, const slse::config::RunConfig& cfg) {
  auto enc = slse::ssrl::EncoderCheckpoint::Load(
      InputPath(o.encoder, "SLSE_ENCODER", cfg, "encoder.ckpt"));
  slse::Require(enc.config_hash == cfg.Hash(), slse::ErrorCode::kState,
                "encoder was pretrained with config " + enc.config_hash + ", current run uses " +
                    cfg.Hash());
  return enc;
}

void RunEmbed(const Options& o) {
  const auto cfg = ResolveConfig(o);
  const auto enc = ReadEncoder(o, cfg);
  const auto curves = ReadCurves(InputPath(o.curves, "SLSE_CURVES", cfg, "curves.csv"));
  std::vector<std::string> ids;
  for (const auto& c : curves) ids.push_back(c.subject_id);
  WriteArtifact(fs::path(cfg.out_dir) / "embeddings.csv",
                slse::cohort::EmbeddingsToCsv(ids, slse::ssrl::EmbedAll(enc, curves)), cfg,
                "embeddings");
}

void RunTrain(const Options& o) {
  const auto cfg = ResolveConfig(o);
  const auto ablation = slse::pipeline::ParseAblation(o.ablation);
  const auto part = ReadPartition(o, cfg);
  const auto pcfg = cfg.Pipeline();
  std::optional<slse::ssrl::EncoderCheckpoint> enc;
  if (slse::pipeline::UsesEmbeddings(slse::pipeline::EnsembleConfigFor(pcfg, ablation).mode)) {
    enc = ablation == slse::pipeline::Ablation::kNoAugment
              ? slse::pipeline::PretrainOnTrain(part, pcfg, ablation).checkpoint
              : ReadEncoder(o, cfg);
  }
  const auto run = slse::pipeline::RunDownstream(part, pcfg, ablation, enc ? &*enc : nullptr);
  const fs::path dir = fs::path(cfg.out_dir) / "ensemble";
  slse::pipeline::SaveEnsemble(dir, run.ensemble, cfg.Hash(), cfg.seed);
  Log("wrote " + dir.string() + " (" + std::to_string(run.ensemble.bundles.size()) +
      " bundles, best validation AUROC " +
      slse::FormatDouble(run.ensemble.bundles.front().val_auroc) + ")");
}

void RunEvaluate(const Options& o) {
  const auto cfg = ResolveConfig(o);
  const auto ensemble = ReadEnsemble(o, cfg);
  const auto records = ReadRecords(o, cfg);
  const auto part = slse::pipeline::PartitionRecords(records, cfg.pipeline.split, cfg.seed);
  std::vector<double> scores;
  for (std::size_t i = 0; i < part.test.size(); ++i) {
    scores.push_back(ensemble.Predict(part.test.curve(i), part.test.demo(i)));
  }
  const auto report = slse::pipeline::Evaluator::Evaluate(
      part.test, scores,
      {{"model", slse::pipeline::FeatureModeName(ensemble.mode)},
       {"seed", cfg.seed},
       {"config_hash", cfg.Hash()},
       {"format_version", kArtifactVersion},
       {"n_bundles", ensemble.bundles.size()},
       {"feature_names", ensemble.FeatureNames()}});
  Log("test AUROC " + slse::FormatDouble(report.overall_auroc));
  const fs::path out(cfg.out_dir);
  WriteArtifact(out / "eval_report.json", report.ToJson().dump(1) + "\n", cfg, "eval_report");
  WriteArtifact(out / "eval_report.csv", report.ToCsv(), cfg, "eval_report_csv");
  WriteArtifact(out / "characteristics.csv",
                slse::pipeline::Characteristics(records).ToCsv(), cfg, "characteristics");
}

void RunExplain(const Options& o) {
  const auto cfg = ResolveConfig(o);
  slse::Require(o.subjects == "test" || o.subjects == "all", slse::ErrorCode::kConfig,
                "--subjects must be 'test' or 'all'");
  const auto ensemble = ReadEnsemble(o, cfg);
  std::vector<std::pair<std::string, std::pair<const slse::spiro::FlowVolumeCurve*,
                                               const slse::cohort::DemographicVector*>>>
      inputs;
  const auto records = ReadRecords(o, cfg);
  const auto part = slse::pipeline::PartitionRecords(records, cfg.pipeline.split, cfg.seed);
  if (o.subjects == "test") {
    for (std::size_t i = 0; i < part.test.size(); ++i) {
      inputs.push_back({part.test.subject_id(i), {&part.test.curve(i), &part.test.demo(i)}});
    }
  } else {
    for (const auto& r : records) inputs.push_back({r.subject_id(), {&r.curve, &r.demo}});
  }
  const auto names = ensemble.FeatureNames();
  std::string csv = "subject_id,feature,phi\n";
  for (const auto& [id, in] : inputs) {
    std::optional<std::vector<double>> emb;
    if (ensemble.encoder) emb = slse::ssrl::Embed(*ensemble.encoder, *in.first);
    const auto attr = slse::pipeline::Explain(ensemble, emb ? &*emb : nullptr, *in.second);
    csv += id + ",base," + slse::FormatDouble(attr.base_value) + "\n";
    for (std::size_t f = 0; f < attr.phi.size(); ++f) {
      csv += id + "," + names[f] + "," + slse::FormatDouble(attr.phi[f]) + "\n";
    }
    csv += id + ",raw," + slse::FormatDouble(attr.Total()) + "\n";
  }
  WriteArtifact(fs::path(cfg.out_dir) / "attributions.csv", csv, cfg, "attributions");
}

void RunAblate(const Options& o) {
  const auto cfg = ResolveConfig(o);
  const auto part = ReadPartition(o, cfg);
  const auto runs = slse::pipeline::RunAblationSuite(part, cfg.Pipeline());
  const fs::path dir = fs::path(cfg.out_dir) / "ablations";
  for (const auto& r : runs) {
    const fs::path sub = dir / slse::pipeline::AblationName(r.ablation);
    WriteArtifact(sub / "eval_report.json", r.report.ToJson().dump(1) + "\n", cfg, "eval_report");
    WriteArtifact(sub / "eval_report.csv", r.report.ToCsv(), cfg, "eval_report_csv");
    Log(std::string(slse::pipeline::AblationName(r.ablation)) + ": test AUROC " +
        slse::FormatDouble(r.report.overall_auroc));
  }
  const json summary = {{"config_hash", cfg.Hash()},
                        {"seed", cfg.seed},
                        {"format_version", kArtifactVersion},
                        {"runs", slse::pipeline::AblationSummary(runs)}};
  WriteArtifact(dir / "ablation_summary.json", summary.dump(1) + "\n", cfg, "ablation_summary");
}

void EmitError(const std::string& subcommand, const std::string& code, const std::string& msg) {
  const json record = {{"status", "error"},
                       {"subcommand", subcommand},
                       {"code", code},
                       {"message", msg}};
  std::cerr << record.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spirogram representation learning and heart-failure classification"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Options o;
  std::uint64_t seed = 0;
  app.add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Top-level seed (overrides config)");
  app.add_option("--out", o.out_dir, "Output directory (overrides SLSE_OUT_DIR and config)");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
  auto* preprocess = app.add_subcommand("preprocess", "Validate blows and build curves");
  preprocess->add_option("--blows", o.blows, "Blow CSV (ml)");
  auto* pretrain = app.add_subcommand("pretrain", "Self-supervised encoder pretraining");
  auto* embed = app.add_subcommand("embed", "Embed curves with a pretrained encoder");
  auto* train = app.add_subcommand("train", "Train the classifier ensemble");
  train->add_option("--ablation", o.ablation,
                    "full | no_ensemble | no_encoder | no_augment | embedding_only");
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate an ensemble on the test split");
  auto* explain = app.add_subcommand("explain", "Per-subject tree attributions");
  explain->add_option("--subjects", o.subjects, "test | all");
  auto* ablate = app.add_subcommand("ablate", "Run the full model and every ablation");
  for (CLI::App* sub : {pretrain, embed, train, evaluate, explain, ablate}) {
    sub->add_option("--curves", o.curves, "Curve CSV");
  }
  for (CLI::App* sub : {pretrain, train, evaluate, explain, ablate}) {
    sub->add_option("--cohort", o.cohort, "Cohort CSV");
  }
  for (CLI::App* sub : {embed, train}) sub->add_option("--encoder", o.encoder, "Encoder checkpoint");
  for (CLI::App* sub : {evaluate, explain}) {
    sub->add_option("--ensemble", o.ensemble, "Ensemble directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    EmitError("", "usage", e.what());
    return 2;
  }
  if (seed_opt->count() > 0) o.seed = seed;

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (synth->parsed()) RunSynth(o);
    if (preprocess->parsed()) RunPreprocess(o);
    if (pretrain->parsed()) RunPretrain(o);
    if (embed->parsed()) RunEmbed(o);
    if (train->parsed()) RunTrain(o);
    if (evaluate->parsed()) RunEvaluate(o);
    if (explain->parsed()) RunExplain(o);
    if (ablate->parsed()) RunAblate(o);
  } catch (const slse::Error& e) {
    EmitError(name, slse::ErrorCodeName(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    EmitError(name, "internal", e.what());
    return 1;
  }
  return 0;
}
