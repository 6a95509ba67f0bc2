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

// Reranker-stage samples: retriever top-n candidates with exposure labels.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dnr/data.hpp"
#include "dnr/retriever.hpp"
#include "json.hpp"

namespace dnr::data {

struct RerankSample {
  std::size_t user = 0;
  std::vector<std::size_t> history;     // oldest first
  std::vector<std::size_t> candidates;  // score-descending
  std::vector<double> x;                // retriever scores
  std::vector<int> z;                   // exposure labels

  std::size_t size() const { return candidates.size(); }
  std::size_t positives() const;
  // No positive among the candidates: the zero-label default applies.
  bool flagged() const { return positives() == 0; }
  // Throws DataError if any sample invariant is broken.
  void validate() const;

  friend bool operator==(const RerankSample&, const RerankSample&) = default;
};

struct RerankOptions {
  std::size_t n = 50;
  std::size_t k = 6;
  std::size_t history = 20;
};

// One sample per user with events. The last k events of each user are the
// exposure list; candidates are the retriever's top n among the log's items,
// excluding the user's earlier positives. z marks exposure positives.
std::vector<RerankSample> build_rerank_dataset(
    const InteractionLog& log, const retriever::MfModel& model,
    const RerankOptions& opts);

nlohmann::json to_json(const RerankSample& s);
RerankSample sample_from_json(const nlohmann::json& j);

std::string to_jsonl(const std::vector<RerankSample>& samples);
void save_jsonl(const std::vector<RerankSample>& samples,
                const std::filesystem::path& path);
std::vector<RerankSample> load_jsonl(const std::filesystem::path& path);

struct SampleSplit {
  std::vector<RerankSample> train;
  std::vector<RerankSample> validation;
};

// Seeded split by user; both parts keep ascending user order.
SampleSplit split_samples(const std::vector<RerankSample>& samples,
                          double validation_fraction, std::uint64_t seed);

}  // namespace dnr::data
