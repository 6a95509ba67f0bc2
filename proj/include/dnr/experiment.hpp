// Copyright 2026 The DNR Lab Authors.
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

// Experiment configuration and the pipeline stages the command-line driver
// chains together: dataset, retriever, rerankers, evaluation, sweeps.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dnr/data.hpp"
#include "dnr/metrics.hpp"
#include "dnr/objectives.hpp"
#include "dnr/rerank_data.hpp"
#include "dnr/reranker.hpp"
#include "dnr/retriever.hpp"
#include "json.hpp"

namespace dnr::experiment {

struct DataSection {
  // "synthetic" or "csv".
  std::string source = "synthetic";
  std::string csv_path;
  data::SyntheticConfig synthetic;
  std::size_t min_interactions = 20;
  double split_ratio = 0.8;
  data::RerankOptions rerank;
  double validation_fraction = 0.2;
  // Drives every stage: world, retriever, reranker, noise.
  std::uint64_t seed = 1;
};

struct RerankerSection {
  reranker::RerankerConfig model;
  objectives::TrainOptions train;
};

struct ExperimentConfig {
  DataSection data;
  retriever::TrainOptions retriever;
  RerankerSection reranker;
  objectives::DnrConfig dnr;
  std::string output_dir = "runs/default";

  // Throws ConfigError naming the offending field path.
  void validate() const;
  // Seeds and shared fields copied into the stage options.
  retriever::TrainOptions retriever_options() const;
  objectives::TrainOptions train_options() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
// Strict: unknown keys and wrong types raise ConfigError with the path.
ExperimentConfig config_from_json(const nlohmann::json& j);

// Applies "a.b.c=value" to a config document. The value is read as JSON
// when it parses, otherwise as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Defaults, then the file (if any), then the overrides; validated.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides);

// ---- file layout -----------------------------------------------------

struct Layout {
  std::filesystem::path root;
  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path interactions() const { return data_dir() / "interactions.csv"; }
  std::filesystem::path truth() const { return data_dir() / "truth.json"; }
  std::filesystem::path stats() const { return data_dir() / "stats.json"; }
  std::filesystem::path retriever_dir() const { return root / "retriever"; }
  std::filesystem::path retriever_model() const { return retriever_dir() / "model.dnrw"; }
  std::filesystem::path samples() const { return retriever_dir() / "samples.jsonl"; }
  std::filesystem::path baseline_dir(reranker::Integration i) const {
    return root / ("baseline-" + reranker::integration_name(i));
  }
  std::filesystem::path dnr_dir() const { return root / "dnr"; }
};

// ---- stages ----------------------------------------------------------

struct DatasetStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t actions = 0;
  std::size_t sequences = 0;
};
nlohmann::json to_json(const DatasetStats& s);
std::string format_stats(const DatasetStats& s);

struct Dataset {
  // Filtered log after a CSV round trip, so in-memory and on-disk runs
  // see the same dense ids.
  data::InteractionLog log;
  std::optional<data::SyntheticTruth> truth;
  DatasetStats stats;
};
Dataset build_dataset(const ExperimentConfig& cfg);

struct RetrieverStage {
  retriever::TrainResult train;
  retriever::AucResult auc;
  std::vector<data::RerankSample> samples;
};
// Trains on the pre-exposure history and builds the rerank samples.
RetrieverStage run_retriever(const ExperimentConfig& cfg,
                             const data::InteractionLog& log);

objectives::BaselineResult run_baseline(const ExperimentConfig& cfg,
                                        const std::vector<data::RerankSample>& samples,
                                        const retriever::MfModel& retr);
// Trains with integration = denoise whatever the reranker section says.
objectives::DnrResult run_dnr(const ExperimentConfig& cfg,
                              const std::vector<data::RerankSample>& samples,
                              const retriever::MfModel& retr);

// Validation half of the seeded split.
std::vector<data::RerankSample> validation_samples(
    const ExperimentConfig& cfg, const std::vector<data::RerankSample>& samples);

// ---- noise diagnostics -----------------------------------------------

struct NoiseComparison {
  metrics::NoiseDiagnostics generator;
  metrics::NoiseDiagnostics gaussian;
  metrics::NoiseDiagnostics beta;
};
// Generator, Gaussian and Beta draws for every cell of `samples`, each
// compared with the true-noise reference at the configured lambda_c.
NoiseComparison compare_noise(const ExperimentConfig& cfg,
                              noise::GeneratorModel& gen,
                              const std::vector<data::RerankSample>& samples,
                              const retriever::MfModel& retr);

// ---- sweeps ----------------------------------------------------------

enum class SweepAxis { kLambdaC, kLambdaM, kLambdaE };
std::string axis_name(SweepAxis a);
SweepAxis parse_axis(const std::string& s);

struct SweepCell {
  double value = 0.0;
  std::uint64_t seed = 0;
  metrics::MetricsReport validation;
  objectives::TrainHistory history;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::kLambdaC;
  std::vector<SweepCell> cells;  // value-major, then seed, input order
  // axis,value,seed,hr,ndcg,map,f1,auc
  std::string to_csv() const;
  // axis,value,seeds,mean_ndcg
  std::string means_csv() const;
  std::vector<double> mean_ndcg() const;  // one per distinct value
};

// Each cell runs dataset -> retriever -> DNR with the axis value and seed
// substituted, on at most `threads` workers. Throws ConfigError for empty
// inputs or values outside the tuning grid.
SweepResult run_sweep(const ExperimentConfig& base, SweepAxis axis,
                      const std::vector<double>& values,
                      const std::vector<std::uint64_t>& seeds,
                      std::size_t threads);
ExperimentConfig with_axis(const ExperimentConfig& base, SweepAxis axis,
                           double value, std::uint64_t seed);

// Worker count from DNR_LAB_THREADS, else the hardware count (>= 1).
std::size_t thread_budget();

// Writes text through a temporary file and rename; parents are created.
void write_file(const std::filesystem::path& path, const std::string& text);
std::string read_file(const std::filesystem::path& path);

}  // namespace dnr::experiment
