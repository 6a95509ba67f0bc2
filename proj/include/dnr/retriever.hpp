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

// Matrix-factorization retriever: the frozen first stage that emits bounded
// scores and top-n candidate lists.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dnr/data.hpp"
#include "dnr/param_store.hpp"

namespace dnr::retriever {

class MfModel {
 public:
  MfModel() = default;
  MfModel(std::size_t users, std::size_t items, std::size_t dim, Rng& rng,
          double init_std = 0.1);

  std::size_t users() const { return params_.value("user_emb").rows(); }
  std::size_t items() const { return params_.value("item_emb").rows(); }
  std::size_t dim() const { return params_.value("user_emb").cols(); }

  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  double dot(std::size_t user, std::size_t item) const;
  // sigmoid(user_emb[u] . item_emb[i]) per item. Throws DataError on
  // out-of-range ids.
  std::vector<double> score(std::size_t user,
                            std::span<const std::size_t> items) const;
  double score(std::size_t user, std::size_t item) const;

  void save(const std::filesystem::path& path) const;
  static MfModel load(const std::filesystem::path& path);

 private:
  ad::ParamStore params_;
};

struct TrainOptions {
  std::size_t dim = 16;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t negatives_per_positive = 4;
  std::size_t epochs = 40;
  std::size_t batch_size = 256;
  double init_std = 0.1;
  std::uint64_t seed = 0;
};

struct TrainResult {
  MfModel model;
  std::vector<double> epoch_loss;
  std::vector<std::string> warnings;
};

// BCE on every positive event plus `negatives_per_positive` uniformly drawn
// items the user has not interacted with in `train`.
TrainResult train_mf(const data::InteractionLog& train,
                     const TrainOptions& opts);

// The n highest-scoring items outside `exclude`, best first; ties go to the
// lower item id. Throws DataError when fewer than n items are eligible.
std::vector<std::size_t> top_n(const MfModel& model, std::size_t user,
                               std::size_t n,
                               std::span<const std::size_t> exclude = {});

struct AucResult {
  double auc = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

// Mann-Whitney AUC over the positive test events against one uniformly
// drawn non-interacted item per positive. `known` lists every event of the
// user that must not be drawn as a negative (usually the full log).
AucResult auc(const MfModel& model, const data::InteractionLog& test,
              const data::InteractionLog& known, std::uint64_t seed);

// Rank AUC with average ranks on ties. Throws DataError if either side is
// empty.
double rank_auc(std::span<const double> positive,
                std::span<const double> negative);

}  // namespace dnr::retriever
