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

// Training objectives and schedules for the denoising reranker and the
// plain baselines.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dnr/autodiff.hpp"
#include "dnr/metrics.hpp"
#include "dnr/noise.hpp"
#include "dnr/rerank_data.hpp"
#include "dnr/reranker.hpp"
#include "dnr/retriever.hpp"
#include "json.hpp"

namespace dnr::objectives {

using Batch = std::span<const data::RerankSample>;

enum class Phase { kWarmup, kAdversarial };
std::string phase_name(Phase p);

// ---- losses ----------------------------------------------------------

// Mean BCE of the reranker fed the retriever scores x, over all cells.
// A non-null dropout_rng runs the reranker in training mode.
ad::Var loss_direct(ad::Graph& g, reranker::RerankerModel& model, Batch batch,
                    Rng* dropout_rng = nullptr);

// Same contract with synthesized scores x' (one row per cell) as input.
ad::Var loss_z(ad::Graph& g, reranker::RerankerModel& model, Batch batch,
               const ad::Array2& x_prime, Rng* dropout_rng = nullptr);

// loss_direct + lambda_m * loss_z. lambda_m = 0 returns loss_direct itself.
ad::Var loss_theta(ad::Graph& g, reranker::RerankerModel& model, Batch batch,
                   const ad::Array2& x_prime, double lambda_m,
                   Rng* dropout_rng = nullptr);

// Mean over samples of log q_theta(z | x'), i.e. minus the per-sample BCE
// sum. The reranker is frozen for the duration of the call; x' should be a
// node built from the generator. Throws ConfigError during warm-up.
ad::Var loss_adv(ad::Graph& g, reranker::RerankerModel& model, Batch batch,
                 ad::Var x_prime, Phase phase);

struct MmdOptions {
  // Fixed bandwidth; empty means the median pairwise distance of the real
  // sample (1.0 if that is zero).
  std::optional<double> bandwidth;
  // At most this many evenly strided cells per side enter the estimate.
  std::size_t max_points = 256;
};

// Biased squared MMD with an RBF kernel between the pooled values of x'
// (differentiable) and x_real. Throws DataError if either has fewer than
// two rows.
ad::Var loss_x(ad::Graph& g, ad::Var x_prime, const ad::Array2& x_real,
               const MmdOptions& opts = {});
// Bandwidth loss_x would use for this real sample.
double mmd_bandwidth(const ad::Array2& x_real, const MmdOptions& opts);

// ---- training --------------------------------------------------------

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lr = 1e-2;
  // Decoupled: each step shrinks parameters by lr * weight_decay.
  double weight_decay = 1.0;
  double clip = 5.0;
  std::size_t k = 6;
  std::uint64_t seed = 0;
};

struct DnrConfig {
  double lambda_c = 0.4;
  double lambda_m = 0.4;
  std::size_t lambda_e = 5;
  // Warm-up heuristic (gaussian or beta) and the generator's noise width.
  // Its lambda_c field is ignored in favour of the one above.
  noise::NoiseSpec noise;
  double lr_phi = 1e-3;
  MmdOptions mmd;

  void validate(const TrainOptions& train) const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  Phase phase = Phase::kWarmup;
  double l_direct = 0.0;
  double l_z = 0.0;
  double l_theta = 0.0;
  double l_adv = 0.0;
  double l_x = 0.0;
  double val_ndcg = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  // epoch,phase,l_direct,l_z,l_theta,l_adv,l_x,val_ndcg
  std::string to_csv() const;
};

struct TrainData {
  const std::vector<data::RerankSample>& train;
  const std::vector<data::RerankSample>& validation;
  const retriever::MfModel& retriever;
  std::size_t num_items = 0;
};

struct BaselineResult {
  reranker::RerankerModel model;
  TrainHistory history;
  metrics::MetricsReport validation;
};

struct DnrResult {
  reranker::RerankerModel model;
  noise::GeneratorModel generator;
  std::uint64_t generator_init_fingerprint = 0;
  TrainHistory history;
  metrics::MetricsReport validation;
};

// Plain loss_direct training. Rejects integration = denoise.
BaselineResult train_baseline(const TrainOptions& opts,
                              const reranker::RerankerConfig& rcfg,
                              const TrainData& data);

// Warm-up epochs (epoch <= lambda_e) draw eps from the heuristic and step
// theta on loss_theta; later epochs draw eps from the generator and take a
// theta step then a phi step (loss_adv + loss_x) per batch. Parameter
// initialisation and batch order match train_baseline for the same seed.
DnrResult train_dnr(const TrainOptions& opts, const DnrConfig& cfg,
                    const reranker::RerankerConfig& rcfg,
                    const TrainData& data);

// ---- evaluation helpers ---------------------------------------------

// Reranker predictions with the retriever scores as input.
std::vector<std::vector<double>> predict_all(
    reranker::RerankerModel& model, const std::vector<data::RerankSample>& s);

metrics::MetricsReport evaluate(reranker::RerankerModel& model,
                                const std::vector<data::RerankSample>& s,
                                std::size_t k);
// Ranking by the retriever scores themselves.
metrics::MetricsReport evaluate_identity(
    const std::vector<data::RerankSample>& s, std::size_t k);

// eps that maps z onto the observed x through x = (1 - lc) z + lc eps,
// clamped to [0, 1]; one value per cell.
std::vector<double> true_noise(const std::vector<data::RerankSample>& s,
                               double lambda_c);

// One generator draw per cell.
std::vector<double> generator_noise(noise::GeneratorModel& gen,
                                    const std::vector<data::RerankSample>& s,
                                    const retriever::MfModel& retr, Rng& rng);

nlohmann::json to_json(const TrainOptions& o);
nlohmann::json to_json(const DnrConfig& c);

}  // namespace dnr::objectives
