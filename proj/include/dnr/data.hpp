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

// Interaction logs: synthetic generation, CSV ingestion, filtering and the
// chronological splits used by the retriever stage.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dnr/autodiff.hpp"
#include "json.hpp"

namespace dnr::data {

struct Event {
  std::size_t user = 0;
  std::size_t item = 0;
  std::int64_t timestamp = 0;
  int label = 0;

  friend bool operator==(const Event&, const Event&) = default;
};

struct InteractionLog {
  std::size_t users = 0;
  std::size_t items = 0;
  std::vector<Event> events;

  // Sorts by (user, timestamp, item).
  void sort_chronological();
  // Throws DataError on out-of-range ids or labels outside {0, 1}.
  void validate() const;
  std::vector<std::size_t> user_counts() const;
  std::vector<std::size_t> item_counts() const;
  // Users/items with at least one event.
  std::size_t active_users() const;
  std::size_t active_items() const;
  // Events grouped per user, chronological. Requires sort_chronological().
  std::vector<std::vector<Event>> by_user() const;
};

// Additive zero-mean Gaussian perturbation of the preference the retriever
// gets to see. sigma = 0 is the identity channel.
struct NoiseChannel {
  double sigma = 0.1;
};

struct SyntheticConfig {
  std::size_t users = 200;
  std::size_t items = 500;
  std::size_t latent_dim = 8;
  // Standard deviation of every latent coordinate.
  double factor_scale = 1.0;
  // Each user is exposed to history_events + exposure_events distinct items,
  // drawn with probability proportional to exp(u.v / exposure_temperature)
  // (temperature <= 0 means uniform) and put in random order. The last
  // exposure_events of them form the displayed list.
  std::size_t history_events = 100;
  std::size_t exposure_events = 6;
  double exposure_temperature = 2.0;
  NoiseChannel channel;
  std::uint64_t seed = 0;
};

// Ground truth kept alongside a synthetic log. History events are labelled
// from the visible preference clamp(sigmoid(u.v) + eta, 0, 1); exposure
// events from the ideal preference sigmoid(u.v).
struct SyntheticTruth {
  ad::Array2 user_factors;
  ad::Array2 item_factors;
  struct EventNoise {
    std::size_t user = 0;
    std::size_t item = 0;
    double ideal = 0.0;
    double perturbation = 0.0;
    double visible = 0.0;
  };
  // One record per generated event, in generation order.
  std::vector<EventNoise> channel;

  double preference(std::size_t user, std::size_t item) const;
  // Mean ideal preference over the full users x items grid.
  double mean_preference() const;
  const EventNoise* find(std::size_t user, std::size_t item) const;

 private:
  friend std::pair<InteractionLog, SyntheticTruth> generate_synthetic(
      const SyntheticConfig&);
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

std::pair<InteractionLog, SyntheticTruth> generate_synthetic(
    const SyntheticConfig& cfg);

nlohmann::json truth_to_json(const SyntheticTruth& truth);

// CSV with header user_id,item_id,timestamp,label (any column order). Ids
// are re-indexed densely in order of first appearance.
InteractionLog parse_csv(std::istream& in);
InteractionLog load_csv(const std::filesystem::path& path);
std::string to_csv(const InteractionLog& log);

// Repeatedly drops users and items with fewer than `threshold` events until
// nothing changes. Id ranges are kept; dropped ids simply have no events.
InteractionLog filter_min_interactions(const InteractionLog& log,
                                       std::size_t threshold = 20);

struct RetrieverSplit {
  InteractionLog train;
  InteractionLog test;
  std::vector<std::string> warnings;
};

// Per user, the earliest ceil(ratio * count) events go to train and the rest
// to test. Users with fewer than two events stay entirely in train.
RetrieverSplit build_retriever_split(const InteractionLog& log,
                                     double ratio = 0.8);

struct ExposureSplit {
  InteractionLog history;
  InteractionLog exposure;
};

// Per user, the last k events are the displayed exposure list; everything
// before is history.
ExposureSplit split_exposure(const InteractionLog& log, std::size_t k);

}  // namespace dnr::data
