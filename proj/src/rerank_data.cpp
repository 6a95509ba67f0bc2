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

#include "dnr/rerank_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "dnr/error.hpp"
#include "dnr/rng.hpp"

namespace dnr::data {

std::size_t RerankSample::positives() const {
  return static_cast<std::size_t>(std::count(z.begin(), z.end(), 1));
}

void RerankSample::validate() const {
  const std::string who = "sample for user " + std::to_string(user) + ": ";
  if (x.size() != candidates.size() || z.size() != candidates.size())
    throw DataError(who + "candidates, x and z differ in length");
  if (candidates.empty()) throw DataError(who + "no candidates");
  std::set<std::size_t> unique(candidates.begin(), candidates.end());
  if (unique.size() != candidates.size())
    throw DataError(who + "duplicate candidate ids");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] >= 0.0 && x[i] <= 1.0))
      throw DataError(who + "score outside [0, 1]");
    if (z[i] != 0 && z[i] != 1) throw DataError(who + "label outside {0, 1}");
    if (i > 0 && x[i] > x[i - 1])
      throw DataError(who + "scores are not sorted descending");
  }
}

std::vector<RerankSample> build_rerank_dataset(
    const InteractionLog& log, const retriever::MfModel& model,
    const RerankOptions& opts) {
  if (opts.n == 0 || opts.k == 0)
    throw ConfigError("rerank n and k must be positive");
  if (opts.n > log.items)
    throw DataError("n = " + std::to_string(opts.n) + " exceeds item count " +
                    std::to_string(log.items));
  if (model.users() < log.users || model.items() < log.items)
    throw DataError("retriever is smaller than the interaction log");

  const auto counts = log.item_counts();
  std::vector<std::size_t> inactive;
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (counts[i] == 0) inactive.push_back(i);

  InteractionLog sorted = log;
  sorted.sort_chronological();
  std::vector<RerankSample> out;
  for (const auto& events : sorted.by_user()) {
    if (events.size() <= opts.k) continue;
    const std::size_t cut = events.size() - opts.k;
    RerankSample s;
    s.user = events.front().user;

    std::vector<std::size_t> exclude = inactive;
    for (std::size_t t = 0; t < cut; ++t)
      if (events[t].label == 1) {
        exclude.push_back(events[t].item);
        s.history.push_back(events[t].item);
      }
    if (s.history.size() > opts.history)
      s.history.erase(s.history.begin(),
                      s.history.end() -
                          static_cast<std::ptrdiff_t>(opts.history));
    std::sort(exclude.begin(), exclude.end());
    exclude.erase(std::unique(exclude.begin(), exclude.end()), exclude.end());

    std::set<std::size_t> exposed_pos;
    for (std::size_t t = cut; t < events.size(); ++t)
      if (events[t].label == 1) exposed_pos.insert(events[t].item);

    s.candidates = retriever::top_n(model, s.user, opts.n, exclude);
    s.x = model.score(s.user, s.candidates);
    s.z.reserve(opts.n);
    for (const auto c : s.candidates) s.z.push_back(exposed_pos.count(c) ? 1 : 0);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError("no user has enough events for a sample");
  return out;
}

nlohmann::json to_json(const RerankSample& s) {
  return {{"user", s.user},
          {"history", s.history},
          {"candidates", s.candidates},
          {"x", s.x},
          {"z", s.z}};
}

RerankSample sample_from_json(const nlohmann::json& j) {
  RerankSample s;
  try {
    j.at("user").get_to(s.user);
    j.at("history").get_to(s.history);
    j.at("candidates").get_to(s.candidates);
    j.at("x").get_to(s.x);
    j.at("z").get_to(s.z);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed sample: ") + e.what());
  }
  s.validate();
  return s;
}

std::string to_jsonl(const std::vector<RerankSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    out += to_json(s).dump();
    out += '\n';
  }
  return out;
}

void save_jsonl(const std::vector<RerankSample>& samples,
                const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << to_jsonl(samples);
}

std::vector<RerankSample> load_jsonl(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw MissingInputError("cannot open " + path.string());
  std::vector<RerankSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " +
                      e.what());
    }
    out.push_back(sample_from_json(j));
  }
  return out;
}

SampleSplit split_samples(const std::vector<RerankSample>& samples,
                          double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation fraction must lie in [0, 1)");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle(order, rng);
  const auto n_val = static_cast<std::size_t>(
      std::ceil(validation_fraction * static_cast<double>(samples.size())));
  std::vector<bool> is_val(samples.size(), false);
  for (std::size_t k = 0; k < n_val && k < order.size(); ++k)
    is_val[order[k]] = true;
  SampleSplit out;
  for (std::size_t k = 0; k < samples.size(); ++k)
    (is_val[k] ? out.validation : out.train).push_back(samples[k]);
  return out;
}

}  // namespace dnr::data
