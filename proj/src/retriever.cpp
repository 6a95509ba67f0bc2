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

#include "dnr/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dnr/error.hpp"
#include "dnr/metrics.hpp"

namespace dnr::retriever {
namespace {

std::vector<std::vector<std::size_t>> interacted_items(
    const data::InteractionLog& log) {
  std::vector<std::vector<std::size_t>> out(log.users);
  for (const auto& e : log.events) out[e.user].push_back(e.item);
  for (auto& v : out) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return out;
}

bool contains(const std::vector<std::size_t>& sorted, std::size_t x) {
  return std::binary_search(sorted.begin(), sorted.end(), x);
}

}  // namespace

MfModel::MfModel(std::size_t users, std::size_t items, std::size_t dim,
                 Rng& rng, double init_std) {
  if (users == 0 || items == 0 || dim == 0)
    throw ConfigError("MF model needs positive sizes");
  params_.add_normal("item_emb", items, dim, init_std, rng);
  params_.add_normal("user_emb", users, dim, init_std, rng);
}

double MfModel::dot(std::size_t user, std::size_t item) const {
  const auto& ue = params_.value("user_emb");
  const auto& ie = params_.value("item_emb");
  if (user >= ue.rows() || item >= ie.rows())
    throw DataError("score: id out of range (user " + std::to_string(user) +
                    ", item " + std::to_string(item) + ")");
  double s = 0.0;
  for (std::size_t k = 0; k < ue.cols(); ++k) s += ue(user, k) * ie(item, k);
  return s;
}

double MfModel::score(std::size_t user, std::size_t item) const {
  return 1.0 / (1.0 + std::exp(-dot(user, item)));
}

std::vector<double> MfModel::score(std::size_t user,
                                   std::span<const std::size_t> items) const {
  std::vector<double> out;
  out.reserve(items.size());
  for (const auto i : items) out.push_back(score(user, i));
  return out;
}

void MfModel::save(const std::filesystem::path& path) const {
  ad::save(params_, path);
}

MfModel MfModel::load(const std::filesystem::path& path) {
  MfModel m;
  m.params_ = ad::load(path);
  if (!m.params_.contains("user_emb") || !m.params_.contains("item_emb"))
    throw DataError("retriever checkpoint lacks user_emb/item_emb: " +
                    path.string());
  if (m.params_.value("user_emb").cols() != m.params_.value("item_emb").cols())
    throw DataError("retriever checkpoint has mismatched embedding widths");
  return m;
}

TrainResult train_mf(const data::InteractionLog& train,
                     const TrainOptions& opts) {
  if (train.events.empty()) throw DataError("retriever train split is empty");
  if (opts.batch_size == 0) throw ConfigError("batch_size must be positive");
  train.validate();

  Rng root(opts.seed);
  Rng init_rng = root.fork(1);
  Rng sample_rng = root.fork(2);
  TrainResult result{MfModel(train.users, train.items, opts.dim, init_rng,
                             opts.init_std),
                     {},
                     {}};
  auto& store = result.model.params();

  const auto seen = interacted_items(train);
  std::vector<bool> saturated(train.users, false);
  for (std::size_t u = 0; u < train.users; ++u) {
    if (!seen[u].empty() && seen[u].size() >= train.items) {
      saturated[u] = true;
      result.warnings.push_back("user " + std::to_string(u) +
                                " interacted with every item; no negatives");
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> positives;
  for (const auto& e : train.events)
    if (e.label == 1) positives.emplace_back(e.user, e.item);
  if (positives.empty()) throw DataError("retriever train split has no positives");

  ad::AdamOptions adam;
  adam.lr = opts.lr;
  adam.weight_decay = opts.weight_decay;

  struct Row {
    std::size_t user, item;
    double label;
  };
  std::vector<Row> rows;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    rows.clear();
    for (const auto& [u, i] : positives) {
      rows.push_back({u, i, 1.0});
      if (saturated[u]) continue;
      for (std::size_t k = 0; k < opts.negatives_per_positive; ++k) {
        std::size_t j = sample_rng.below(train.items);
        while (contains(seen[u], j)) j = sample_rng.below(train.items);
        rows.push_back({u, j, 0.0});
      }
    }
    shuffle(rows, sample_rng);

    double total = 0.0;
    for (std::size_t b = 0; b < rows.size(); b += opts.batch_size) {
      const std::size_t m = std::min(opts.batch_size, rows.size() - b);
      std::vector<std::size_t> us(m), is(m);
      ad::Array2 labels(m, 1), mask(m, 1, 1.0);
      for (std::size_t r = 0; r < m; ++r) {
        us[r] = rows[b + r].user;
        is[r] = rows[b + r].item;
        labels(r, 0) = rows[b + r].label;
      }
      ad::Graph g;
      auto ue = ad::gather_rows(g.param(store, "user_emb"), us);
      auto ie = ad::gather_rows(g.param(store, "item_emb"), is);
      auto pred = ad::sigmoid(ad::row_sum(ad::mul(ue, ie)));
      auto loss = ad::bce_loss(pred, labels, mask);
      total += loss.scalar() * static_cast<double>(m);
      g.backward(loss);
      ad::adam_step(store, adam);
    }
    result.epoch_loss.push_back(total / static_cast<double>(rows.size()));
  }
  return result;
}

std::vector<std::size_t> top_n(const MfModel& model, std::size_t user,
                               std::size_t n,
                               std::span<const std::size_t> exclude) {
  const std::size_t items = model.items();
  std::vector<bool> banned(items, false);
  for (const auto i : exclude) {
    if (i >= items) throw DataError("top_n: excluded id out of range");
    banned[i] = true;
  }
  std::vector<std::size_t> pool;
  std::vector<double> score;
  pool.reserve(items);
  for (std::size_t i = 0; i < items; ++i)
    if (!banned[i]) pool.push_back(i);
  if (n > pool.size())
    throw DataError("top_n: requested " + std::to_string(n) + " of only " +
                    std::to_string(pool.size()) + " eligible items");
  score.resize(items);
  for (const auto i : pool) score[i] = model.score(user, i);
  auto better = [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  };
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n),
                    pool.end(), better);
  pool.resize(n);
  return pool;
}

double rank_auc(std::span<const double> positive,
                std::span<const double> negative) {
  if (positive.empty()) throw DataError("AUC needs at least one positive");
  if (negative.empty()) throw DataError("AUC needs at least one negative");
  std::vector<double> scores(positive.begin(), positive.end());
  scores.insert(scores.end(), negative.begin(), negative.end());
  std::vector<int> labels(positive.size(), 1);
  labels.resize(scores.size(), 0);
  return *metrics::list_auc(scores, labels);
}

AucResult auc(const MfModel& model, const data::InteractionLog& test,
              const data::InteractionLog& known, std::uint64_t seed) {
  const auto seen = interacted_items(known);
  std::vector<std::size_t> active;
  {
    const auto c = known.item_counts();
    for (std::size_t i = 0; i < c.size(); ++i)
      if (c[i] > 0) active.push_back(i);
  }
  Rng rng(seed);
  std::vector<double> pos, neg;
  for (const auto& e : test.events) {
    if (e.label != 1) continue;
    pos.push_back(model.score(e.user, e.item));
    static const std::vector<std::size_t> kNone;
    const auto& s = e.user < seen.size() ? seen[e.user] : kNone;
    if (s.size() >= active.size()) continue;
    std::size_t j = active[rng.below(active.size())];
    while (contains(s, j)) j = active[rng.below(active.size())];
    neg.push_back(model.score(e.user, j));
  }
  AucResult r;
  r.positives = pos.size();
  r.negatives = neg.size();
  r.auc = rank_auc(pos, neg);
  return r;
}

}  // namespace dnr::retriever
