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

#include "dnr/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "dnr/error.hpp"
#include "dnr/rng.hpp"

namespace dnr::data {
namespace {

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

double dot_rows(const ad::Array2& a, std::size_t i, const ad::Array2& b,
                std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
  return s;
}

std::uint64_t pair_key(std::size_t user, std::size_t item) {
  return (static_cast<std::uint64_t>(user) << 32) ^ item;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::int64_t parse_int(const std::string& s, const char* what,
                       std::size_t line) {
  std::int64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty())
    throw DataError("line " + std::to_string(line) + ": " + what +
                    " is not an integer: '" + s + "'");
  return v;
}

}  // namespace

void InteractionLog::sort_chronological() {
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) {
                     if (a.user != b.user) return a.user < b.user;
                     if (a.timestamp != b.timestamp)
                       return a.timestamp < b.timestamp;
                     return a.item < b.item;
                   });
}

void InteractionLog::validate() const {
  for (const auto& e : events) {
    if (e.user >= users || e.item >= items)
      throw DataError("event id out of range: user " + std::to_string(e.user) +
                      ", item " + std::to_string(e.item));
    if (e.label != 0 && e.label != 1)
      throw DataError("label must be 0 or 1, got " + std::to_string(e.label));
  }
}

std::vector<std::size_t> InteractionLog::user_counts() const {
  std::vector<std::size_t> c(users, 0);
  for (const auto& e : events) ++c[e.user];
  return c;
}

std::vector<std::size_t> InteractionLog::item_counts() const {
  std::vector<std::size_t> c(items, 0);
  for (const auto& e : events) ++c[e.item];
  return c;
}

std::size_t InteractionLog::active_users() const {
  const auto c = user_counts();
  return static_cast<std::size_t>(
      std::count_if(c.begin(), c.end(), [](std::size_t v) { return v > 0; }));
}

std::size_t InteractionLog::active_items() const {
  const auto c = item_counts();
  return static_cast<std::size_t>(
      std::count_if(c.begin(), c.end(), [](std::size_t v) { return v > 0; }));
}

std::vector<std::vector<Event>> InteractionLog::by_user() const {
  std::vector<std::vector<Event>> out(users);
  for (const auto& e : events) out[e.user].push_back(e);
  return out;
}

double SyntheticTruth::preference(std::size_t user, std::size_t item) const {
  if (user >= user_factors.rows() || item >= item_factors.rows())
    throw DataError("preference: id out of range");
  return sigmoid(dot_rows(user_factors, user, item_factors, item));
}

double SyntheticTruth::mean_preference() const {
  double s = 0.0;
  for (std::size_t u = 0; u < user_factors.rows(); ++u)
    for (std::size_t i = 0; i < item_factors.rows(); ++i)
      s += preference(u, i);
  return s / static_cast<double>(user_factors.rows() * item_factors.rows());
}

const SyntheticTruth::EventNoise* SyntheticTruth::find(std::size_t user,
                                                       std::size_t item) const {
  const auto it = index_.find(pair_key(user, item));
  return it == index_.end() ? nullptr : &channel[it->second];
}

std::pair<InteractionLog, SyntheticTruth> generate_synthetic(
    const SyntheticConfig& cfg) {
  if (cfg.users < 10 || cfg.items < 10)
    throw ConfigError("synthetic world needs at least 10 users and 10 items");
  if (cfg.latent_dim < 2) throw ConfigError("latent_dim must be at least 2");
  if (!(cfg.factor_scale > 0.0))
    throw ConfigError("factor_scale must be positive");
  if (!(cfg.channel.sigma >= 0.0))
    throw ConfigError("noise channel sigma must be non-negative");
  if (cfg.history_events + cfg.exposure_events > cfg.items)
    throw ConfigError("history_events + exposure_events exceeds item count");

  Rng root(cfg.seed);
  Rng factor_rng = root.fork(1);
  Rng event_rng = root.fork(2);

  SyntheticTruth truth;
  truth.user_factors = ad::Array2(cfg.users, cfg.latent_dim);
  truth.item_factors = ad::Array2(cfg.items, cfg.latent_dim);
  for (std::size_t k = 0; k < truth.user_factors.size(); ++k)
    truth.user_factors[k] = cfg.factor_scale * factor_rng.normal();
  for (std::size_t k = 0; k < truth.item_factors.size(); ++k)
    truth.item_factors[k] = cfg.factor_scale * factor_rng.normal();

  InteractionLog log;
  log.users = cfg.users;
  log.items = cfg.items;
  const std::size_t per_user = cfg.history_events + cfg.exposure_events;
  log.events.reserve(cfg.users * per_user);
  truth.channel.reserve(cfg.users * per_user);

  std::vector<std::pair<double, std::size_t>> keys(cfg.items);
  std::vector<std::size_t> chosen;
  for (std::size_t u = 0; u < cfg.users; ++u) {
    // Gumbel top-k draws the exposed set without replacement with
    // probability proportional to exp(u.v / temperature); the set is then
    // put in uniformly random chronological order.
    for (std::size_t i = 0; i < cfg.items; ++i) {
      double key = -std::log(-std::log(event_rng.uniform()));
      if (cfg.exposure_temperature > 0.0)
        key += dot_rows(truth.user_factors, u, truth.item_factors, i) /
               cfg.exposure_temperature;
      keys[i] = {-key, i};
    }
    std::partial_sort(keys.begin(),
                      keys.begin() + static_cast<std::ptrdiff_t>(per_user),
                      keys.end());
    chosen.clear();
    for (std::size_t t = 0; t < per_user; ++t) chosen.push_back(keys[t].second);
    shuffle(chosen, event_rng);

    for (std::size_t t = 0; t < per_user; ++t) {
      const std::size_t item = chosen[t];
      const double ideal = truth.preference(u, item);
      double eta = 0.0;
      double visible = ideal;
      if (t < cfg.history_events && cfg.channel.sigma > 0.0) {
        eta = cfg.channel.sigma * event_rng.normal();
        visible = std::clamp(ideal + eta, 0.0, 1.0);
      }
      const int label = event_rng.uniform() < visible ? 1 : 0;
      log.events.push_back({u, item, static_cast<std::int64_t>(t), label});
      truth.channel.push_back({u, item, ideal, eta, visible});
    }
  }
  for (std::size_t k = 0; k < truth.channel.size(); ++k)
    truth.index_.emplace(pair_key(truth.channel[k].user, truth.channel[k].item),
                         k);
  return {std::move(log), std::move(truth)};
}

nlohmann::json truth_to_json(const SyntheticTruth& truth) {
  auto matrix = [](const ad::Array2& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
      auto s = m.row_span(r);
      rows.push_back(std::vector<double>(s.begin(), s.end()));
    }
    return rows;
  };
  nlohmann::json channel = nlohmann::json::array();
  for (const auto& c : truth.channel)
    channel.push_back({{"user", c.user},
                       {"item", c.item},
                       {"ideal", c.ideal},
                       {"perturbation", c.perturbation},
                       {"visible", c.visible}});
  return {{"user_factors", matrix(truth.user_factors)},
          {"item_factors", matrix(truth.item_factors)},
          {"channel", std::move(channel)}};
}

InteractionLog parse_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV input");
  const auto header = split_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t c = 0; c < header.size(); ++c) col[header[c]] = c;
  std::size_t idx[4];
  const char* names[4] = {"user_id", "item_id", "timestamp", "label"};
  for (int k = 0; k < 4; ++k) {
    const auto it = col.find(names[k]);
    if (it == col.end())
      throw DataError(std::string("missing column '") + names[k] + "'");
    idx[k] = it->second;
  }

  InteractionLog log;
  std::map<std::int64_t, std::size_t> user_ix;
  std::map<std::int64_t, std::size_t> item_ix;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(cells.size()));
    const auto uid = parse_int(cells[idx[0]], "user_id", line_no);
    const auto iid = parse_int(cells[idx[1]], "item_id", line_no);
    const auto ts = parse_int(cells[idx[2]], "timestamp", line_no);
    const auto label = parse_int(cells[idx[3]], "label", line_no);
    if (label != 0 && label != 1)
      throw DataError("line " + std::to_string(line_no) +
                      ": label must be 0 or 1, got " + cells[idx[3]]);
    const auto u = user_ix.try_emplace(uid, user_ix.size()).first->second;
    const auto i = item_ix.try_emplace(iid, item_ix.size()).first->second;
    log.events.push_back({u, i, ts, static_cast<int>(label)});
  }
  log.users = user_ix.size();
  log.items = item_ix.size();
  log.sort_chronological();
  return log;
}

InteractionLog load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open " + path.string());
  return parse_csv(in);
}

std::string to_csv(const InteractionLog& log) {
  std::string out = "user_id,item_id,timestamp,label\n";
  for (const auto& e : log.events) {
    out += std::to_string(e.user);
    out += ',';
    out += std::to_string(e.item);
    out += ',';
    out += std::to_string(e.timestamp);
    out += ',';
    out += std::to_string(e.label);
    out += '\n';
  }
  return out;
}

InteractionLog filter_min_interactions(const InteractionLog& log,
                                       std::size_t threshold) {
  InteractionLog out = log;
  for (;;) {
    const auto uc = out.user_counts();
    const auto ic = out.item_counts();
    const auto before = out.events.size();
    std::erase_if(out.events, [&](const Event& e) {
      return uc[e.user] < threshold || ic[e.item] < threshold;
    });
    if (out.events.size() == before) break;
  }
  if (out.events.empty()) throw DataError("dataset vanished under filter");
  return out;
}

RetrieverSplit build_retriever_split(const InteractionLog& log, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw ConfigError("split ratio must lie in (0, 1]");
  if (log.events.empty()) throw DataError("cannot split an empty log");
  RetrieverSplit split;
  split.train.users = split.test.users = log.users;
  split.train.items = split.test.items = log.items;
  InteractionLog sorted = log;
  sorted.sort_chronological();
  for (const auto& events : sorted.by_user()) {
    if (events.empty()) continue;
    std::size_t cut = events.size();
    if (events.size() >= 2)
      cut = static_cast<std::size_t>(
          std::ceil(ratio * static_cast<double>(events.size()) - 1e-9));
    for (std::size_t t = 0; t < events.size(); ++t)
      (t < cut ? split.train : split.test).events.push_back(events[t]);
  }
  if (split.test.events.empty())
    split.warnings.push_back("retriever split has an empty test set");
  return split;
}

ExposureSplit split_exposure(const InteractionLog& log, std::size_t k) {
  ExposureSplit out;
  out.history.users = out.exposure.users = log.users;
  out.history.items = out.exposure.items = log.items;
  InteractionLog sorted = log;
  sorted.sort_chronological();
  for (const auto& events : sorted.by_user()) {
    const std::size_t cut = events.size() > k ? events.size() - k : 0;
    for (std::size_t t = 0; t < events.size(); ++t)
      (t < cut ? out.history : out.exposure).events.push_back(events[t]);
  }
  return out;
}

}  // namespace dnr::data
