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

#include "dnr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "dnr/error.hpp"

namespace dnr::metrics {

namespace {

std::size_t hits_in_top(std::span<const int> labels, std::size_t k) {
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, labels.size()); ++r)
    if (labels[r] != 0) ++hits;
  return hits;
}

}  // namespace

double ndcg_at_k(std::span<const int> ranked_labels,
                 std::size_t total_positives, std::size_t k) {
  if (total_positives == 0 || k == 0) return 0.0;
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranked_labels.size()); ++r)
    if (ranked_labels[r] != 0) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, total_positives); ++r)
    idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

double hit_ratio_at_k(std::span<const int> ranked_labels,
                      std::size_t total_positives, std::size_t k) {
  if (total_positives == 0) return 0.0;
  return static_cast<double>(hits_in_top(ranked_labels, k)) /
         static_cast<double>(total_positives);
}

double map_at_k(std::span<const int> ranked_labels,
                std::size_t total_positives, std::size_t k) {
  if (total_positives == 0 || k == 0) return 0.0;
  double acc = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, ranked_labels.size()); ++r) {
    if (ranked_labels[r] == 0) continue;
    ++hits;
    acc += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return acc / static_cast<double>(std::min(k, total_positives));
}

double f1_at_k(std::span<const int> ranked_labels, std::size_t total_positives,
               std::size_t k) {
  if (total_positives == 0 || k == 0) return 0.0;
  const double hits = static_cast<double>(hits_in_top(ranked_labels, k));
  if (hits == 0.0) return 0.0;
  const double precision = hits / static_cast<double>(k);
  const double recall = hits / static_cast<double>(total_positives);
  return 2.0 * precision * recall / (precision + recall);
}

std::optional<double> list_auc(std::span<const double> scores,
                               std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("list_auc: " + std::to_string(scores.size()) +
                     " scores vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int z : labels) pos += z != 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    // ranks i+1 .. j+1 share their average
    const double avg = 0.5 * static_cast<double>(i + j + 2);
    for (std::size_t t = i; t <= j; ++t)
      if (labels[order[t]] != 0) rank_sum += avg;
    i = j + 1;
  }
  const double p = static_cast<double>(pos);
  const double q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

double auc_listwise(std::span<const std::vector<double>> scores,
                    std::span<const std::vector<int>> labels) {
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (auto a = list_auc(scores[i], labels[i])) {
      acc += *a;
      ++count;
    }
  }
  return count == 0 ? 0.5 : acc / static_cast<double>(count);
}

std::vector<std::size_t> top_k_indices(std::span<const double> scores,
                                       std::size_t k) {
  if (k > scores.size()) {
    throw DataError("top-k: K=" + std::to_string(k) + " exceeds list length " +
                    std::to_string(scores.size()));
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k),
                    idx.end(), better);
  idx.resize(k);
  return idx;
}

MetricsReport evaluate(std::span<const std::vector<double>> scores,
                       std::span<const std::vector<int>> labels,
                       std::size_t k) {
  if (scores.size() != labels.size())
    throw ShapeError("evaluate: scores/labels count mismatch");
  MetricsReport rep;
  rep.k = k;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t s = 0; s < scores.size(); ++s) {
    const auto& sc = scores[s];
    const auto& lb = labels[s];
    if (sc.size() != lb.size()) throw ShapeError("evaluate: list length mismatch");
    const auto order = top_k_indices(sc, k);
    std::vector<int> ranked;
    ranked.reserve(order.size());
    for (std::size_t i : order) ranked.push_back(lb[i]);
    std::size_t total = 0;
    for (int z : lb) total += z != 0;
    rep.hr.push_back(hit_ratio_at_k(ranked, total, k));
    rep.ndcg.push_back(ndcg_at_k(ranked, total, k));
    rep.map.push_back(map_at_k(ranked, total, k));
    rep.f1.push_back(f1_at_k(ranked, total, k));
    rep.list_auc.push_back(list_auc(sc, lb).value_or(nan));
  }
  auto avg = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  rep.hr_k = avg(rep.hr);
  rep.ndcg_k = avg(rep.ndcg);
  rep.map_k = avg(rep.map);
  rep.f1_k = avg(rep.f1);
  rep.auc = auc_listwise(scores, labels);
  return rep;
}

nlohmann::json to_json(const MetricsReport& r) {
  return {{"k", r.k},       {"hr_k", r.hr_k}, {"ndcg_k", r.ndcg_k},
          {"map_k", r.map_k}, {"f1_k", r.f1_k}, {"auc", r.auc},
          {"samples", r.ndcg.size()}};
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string per_sample_csv(const MetricsReport& r,
                           std::span<const std::size_t> users) {
  std::string out = "user,hr,ndcg,map,f1,auc\n";
  for (std::size_t i = 0; i < r.ndcg.size(); ++i) {
    out += std::to_string(i < users.size() ? users[i] : i) + "," + fmt(r.hr[i]) +
           "," + fmt(r.ndcg[i]) + "," + fmt(r.map[i]) + "," + fmt(r.f1[i]) +
           "," + fmt(r.list_auc[i]) + "\n";
  }
  return out;
}

// ---- noise diagnostics ----------------------------------------------

Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw DataError("histogram: zero bins");
  Histogram h;
  h.counts.assign(bins, 0);
  for (double v : values) {
    const double c = std::clamp(v, 0.0, 1.0);
    const auto b = std::min(bins - 1, static_cast<std::size_t>(c * static_cast<double>(bins)));
    ++h.counts[b];
  }
  const double denom = static_cast<double>(values.size() + bins);
  h.prob.resize(bins);
  for (std::size_t b = 0; b < bins; ++b)
    h.prob[b] = (static_cast<double>(h.counts[b]) + 1.0) / denom;
  return h;
}

double kl_divergence(const Histogram& p, const Histogram& q) {
  if (p.prob.size() != q.prob.size()) throw ShapeError("kl: bin count mismatch");
  double kl = 0.0;
  for (std::size_t b = 0; b < p.prob.size(); ++b)
    kl += p.prob[b] * std::log(p.prob[b] / q.prob[b]);
  return kl;
}

double median_pairwise_distance(std::span<const double> v) {
  std::vector<double> d;
  d.reserve(v.size() * (v.size() - 1) / 2);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j) d.push_back(std::abs(v[i] - v[j]));
  if (d.empty()) return 0.0;
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  double m = d[mid];
  if (d.size() % 2 == 0) {
    const double lo = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
    m = 0.5 * (m + lo);
  }
  return m;
}

double mmd2_rbf(std::span<const double> a, std::span<const double> b,
                double bandwidth) {
  if (a.empty() || b.empty()) throw DataError("mmd2: empty sample");
  const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);
  auto mean_k = [&](std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (double xi : x)
      for (double yj : y) s += std::exp(-gamma * (xi - yj) * (xi - yj));
    return s / static_cast<double>(x.size() * y.size());
  };
  return std::max(0.0, mean_k(a, a) + mean_k(b, b) - 2.0 * mean_k(a, b));
}

namespace {

std::vector<double> strided(std::span<const double> v, std::size_t cap) {
  if (v.size() <= cap) return {v.begin(), v.end()};
  std::vector<double> out;
  out.reserve(cap);
  for (std::size_t i = 0; i < cap; ++i) out.push_back(v[i * v.size() / cap]);
  return out;
}

}  // namespace

NoiseDiagnostics noise_diagnostics(std::span<const double> generated,
                                   std::span<const double> reference,
                                   std::size_t bins) {
  if (generated.empty() || reference.empty())
    throw DataError("noise_diagnostics: empty sample");
  NoiseDiagnostics d;
  d.generated = histogram(generated, bins);
  d.reference = histogram(reference, bins);
  d.kl = kl_divergence(d.reference, d.generated);
  const auto g = strided(generated, 2000);
  const auto r = strided(reference, 2000);
  d.bandwidth = median_pairwise_distance(r);
  if (!(d.bandwidth > 1e-6)) d.bandwidth = 1.0;
  d.mmd2 = mmd2_rbf(g, r, d.bandwidth);
  return d;
}

std::string histogram_csv(const NoiseDiagnostics& d) {
  std::string out = "bin,lo,hi,generated,reference\n";
  const std::size_t bins = d.generated.prob.size();
  for (std::size_t b = 0; b < bins; ++b) {
    const double lo = static_cast<double>(b) / static_cast<double>(bins);
    const double hi = static_cast<double>(b + 1) / static_cast<double>(bins);
    out += std::to_string(b) + "," + fmt(lo) + "," + fmt(hi) + "," +
           fmt(d.generated.prob[b]) + "," + fmt(d.reference.prob[b]) + "\n";
  }
  return out;
}

}  // namespace dnr::metrics
