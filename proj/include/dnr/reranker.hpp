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

// Denoising reranker q_theta(z | x, u): scores a candidate list given the
// user's history and a score input per candidate.

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dnr/autodiff.hpp"
#include "dnr/param_store.hpp"
#include "dnr/rerank_data.hpp"
#include "dnr/rng.hpp"
#include "json.hpp"

namespace dnr::reranker {

enum class Backbone { kMlp, kAttention };
// How the per-candidate score input enters the item features:
//   none     ignored
//   concat   appended as an extra feature
//   add      projected to the hidden width and added
//   weight   multiplies the item embedding
//   denoise  as concat; reserved for denoising training
enum class Integration { kNone, kConcat, kAdd, kWeight, kDenoise };

std::string backbone_name(Backbone b);
Backbone parse_backbone(const std::string& s);
std::string integration_name(Integration i);
Integration parse_integration(const std::string& s);

struct RerankerConfig {
  Backbone backbone = Backbone::kMlp;
  Integration integration = Integration::kConcat;
  std::size_t hidden = 32;
  std::size_t heads = 2;
  std::size_t layers = 1;
  // Longest candidate list; sizes the position table.
  std::size_t max_len = 50;
  // Inverted dropout on hidden activations, training passes only.
  double dropout = 0.0;

  void validate() const;
};

nlohmann::json to_json(const RerankerConfig& c);
// Missing keys keep defaults; unknown keys throw ConfigError.
RerankerConfig config_from_json(const nlohmann::json& j);

class RerankerModel {
 public:
  RerankerModel() = default;
  RerankerModel(const RerankerConfig& config, std::size_t num_items, Rng& rng);

  const RerankerConfig& config() const { return config_; }
  std::size_t num_items() const { return num_items_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  // 1 x hidden. Mean of the history embeddings through a dense layer; the
  // zero vector for an empty history.
  ad::Var encode_user(ad::Graph& g, std::span<const std::size_t> history);

  // n x 1 predictions in (0, 1) for one sample; scores_in is n x 1.
  ad::Var score_list(ad::Graph& g, const data::RerankSample& sample,
                     ad::Var scores_in);
  // Samples stacked by rows; scores_in has one row per candidate overall.
  // A non-null dropout_rng switches dropout on.
  ad::Var score_batch(ad::Graph& g, std::span<const data::RerankSample> samples,
                      ad::Var scores_in, Rng* dropout_rng = nullptr);

  // Forward pass outside any training graph.
  std::vector<double> predict(const data::RerankSample& sample,
                              std::span<const double> scores_in);

  // Writes <stem>.dnrw and <stem>.json.
  void save(const std::filesystem::path& stem) const;
  static RerankerModel load(const std::filesystem::path& stem);

 private:
  ad::Var item_features(ad::Graph& g, const data::RerankSample& sample,
                        ad::Var scores, Rng* dropout_rng);
  ad::Var backbone(ad::Graph& g, ad::Var h, Rng* dropout_rng);
  ad::Var dropout(ad::Graph& g, ad::Var h, Rng* rng) const;
  ad::Var attention_block(ad::Graph& g, ad::Var h, std::size_t layer);

  RerankerConfig config_;
  std::size_t num_items_ = 0;
  ad::ParamStore params_;
};

// The K highest predictions, ties to the lower index. Throws DataError if
// K exceeds the list length.
std::vector<std::size_t> rank_top_k(std::span<const double> z_hat,
                                    std::size_t k);

// Stacks the x vectors of the samples into a column.
ad::Array2 stacked_scores(std::span<const data::RerankSample> samples);
// Stacks the z vectors of the samples into a column.
ad::Array2 stacked_labels(std::span<const data::RerankSample> samples);

}  // namespace dnr::reranker
