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

// Noise generators for synthesized retriever scores: clipped Gaussian and
// Beta heuristics, the learnable MLP generator, and the convex mixing rule
// x' = (1 - lambda_c) z + lambda_c eps.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dnr/autodiff.hpp"
#include "dnr/param_store.hpp"
#include "dnr/rerank_data.hpp"
#include "dnr/retriever.hpp"
#include "dnr/rng.hpp"
#include "json.hpp"

namespace dnr::noise {

enum class Kind { kGaussian, kBeta, kModel };

std::string kind_name(Kind k);
Kind parse_kind(const std::string& s);

struct NoiseSpec {
  Kind kind = Kind::kBeta;
  double mu = 0.5;
  double sigma = 0.25;
  double alpha = 0.5;
  double beta = 0.5;
  std::size_t d_noise = 8;
  double lambda_c = 0.4;

  // Throws ConfigError when a parameter leaves its domain.
  void validate() const;
};

nlohmann::json to_json(const NoiseSpec& spec);
// Missing keys keep their defaults; unknown keys throw ConfigError.
NoiseSpec spec_from_json(const nlohmann::json& j);

// mu + sigma * g with g standard normal, before clamping.
std::vector<double> gaussian_draws(std::size_t n, double mu, double sigma,
                                   Rng& rng);
// clamp(mu + sigma * g, 0, 1).
std::vector<double> sample_gaussian(std::size_t n, double mu, double sigma,
                                    Rng& rng);

// Gamma(shape, 1) by Marsaglia-Tsang; shapes below one use the
// Gamma(shape + 1) * U^(1/shape) boost.
double sample_gamma(double shape, Rng& rng);
// Beta(alpha, beta) as G_a / (G_a + G_b), strictly inside (0, 1).
std::vector<double> sample_beta(std::size_t n, double alpha, double beta,
                                Rng& rng);

// Heuristic draw for a gaussian or beta spec.
std::vector<double> sample_heuristic(const NoiseSpec& spec, std::size_t n,
                                     Rng& rng);

// Learnable generator f_phi: a two-layer MLP applied per candidate to
// [z_i, user embedding, item embedding, d_noise uniforms], sigmoid output.
class GeneratorModel {
 public:
  static constexpr std::size_t kHidden = 64;

  GeneratorModel() = default;
  // emb_dim is the width of the conditioning embeddings.
  GeneratorModel(std::size_t emb_dim, std::size_t d_noise, Rng& rng,
                 double init_gain = 0.1);

  std::size_t emb_dim() const { return emb_dim_; }
  std::size_t d_noise() const { return d_noise_; }
  std::size_t input_width() const { return 1 + 2 * emb_dim_ + d_noise_; }

  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  // rows x input_width features -> rows x 1 values in (0, 1).
  ad::Var forward(ad::Graph& g, const ad::Array2& features);

 private:
  ad::ParamStore params_;
  std::size_t emb_dim_ = 0;
  std::size_t d_noise_ = 0;
};

// Generator features for the candidates of one sample, with the uniform
// block drawn from rng. Embeddings come from the frozen retriever.
ad::Array2 generator_features(const GeneratorModel& gen,
                              const data::RerankSample& sample,
                              const retriever::MfModel& retr, Rng& rng);

// eps for every candidate of every sample, stacked by rows in sample order.
// Differentiable in the generator parameters.
ad::Var generate_model_noise(ad::Graph& g, GeneratorModel& gen,
                             std::span<const data::RerankSample> samples,
                             const retriever::MfModel& retr, Rng& rng);

// x' = (1 - lambda_c) z + lambda_c eps.
std::vector<double> synthesize_scores(std::span<const int> z,
                                      std::span<const double> eps,
                                      double lambda_c);
ad::Var synthesize_scores(ad::Graph& g, const ad::Array2& z, ad::Var eps,
                          double lambda_c);

}  // namespace dnr::noise
