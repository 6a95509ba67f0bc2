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

// Ranking metrics for the reranker stage and noise-distribution
// diagnostics.
//
// All list metrics take the labels of a ranked list (best first) together
// with the number of positives in the whole candidate list, so that
// positives ranked below the cutoff still count against recall.
//
//   HR@K   = |positives in top K| / total_positives      (recall@K)
//   NDCG@K = sum_{r<=K} label_r / log2(r + 1), normalised by the ideal DCG
//            over min(K, total_positives) leading ones
//   MAP@K  = sum over hit ranks r <= K of precision@r, / min(K, total)
//   F1@K   = harmonic mean of precision@K and recall@K
//
// Each returns 0 when total_positives is 0.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace dnr::metrics {

double ndcg_at_k(std::span<const int> ranked_labels,
                 std::size_t total_positives, std::size_t k);
double hit_ratio_at_k(std::span<const int> ranked_labels,
                      std::size_t total_positives, std::size_t k);
double map_at_k(std::span<const int> ranked_labels,
                std::size_t total_positives, std::size_t k);
double f1_at_k(std::span<const int> ranked_labels, std::size_t total_positives,
               std::size_t k);

// Mann-Whitney AUC of one list, average ranks on ties. Empty when the list
// lacks a positive or a negative.
std::optional<double> list_auc(std::span<const double> scores,
                               std::span<const int> labels);

// Mean of list_auc over the lists where it is defined (0.5 if none).
double auc_listwise(std::span<const std::vector<double>> scores,
                    std::span<const std::vector<int>> labels);

// Indices of the k highest scores, score-descending, ties by ascending index.
std::vector<std::size_t> top_k_indices(std::span<const double> scores,
                                       std::size_t k);

struct MetricsReport {
  std::size_t k = 0;
  double hr_k = 0.0;
  double ndcg_k = 0.0;
  double map_k = 0.0;
  double f1_k = 0.0;
  double auc = 0.0;
  std::vector<double> hr;
  std::vector<double> ndcg;
  std::vector<double> map;
  std::vector<double> f1;
  // NaN for lists with no positive or no negative.
  std::vector<double> list_auc;
};

// Ranks every list by its scores and averages the per-list metrics over all
// lists (lists without positives contribute 0 to the ranking metrics).
MetricsReport evaluate(std::span<const std::vector<double>> scores,
                       std::span<const std::vector<int>> labels,
                       std::size_t k);

nlohmann::json to_json(const MetricsReport& report);
// user,hr,ndcg,map,f1,auc per line.
std::string per_sample_csv(const MetricsReport& report,
                           std::span<const std::size_t> users);

// ---- noise diagnostics ----------------------------------------------

struct Histogram {
  std::vector<double> prob;  // Laplace-smoothed, sums to 1
  std::vector<std::size_t> counts;
};

// Equal-width bins over [0, 1]; values outside are clamped to the edge bins.
Histogram histogram(std::span<const double> values, std::size_t bins);

// sum_b p_b log(p_b / q_b).
double kl_divergence(const Histogram& p, const Histogram& q);

double median_pairwise_distance(std::span<const double> values);

// Biased (V-statistic) MMD^2 with an RBF kernel exp(-(a-b)^2 / (2 h^2)).
double mmd2_rbf(std::span<const double> a, std::span<const double> b,
                double bandwidth);

struct NoiseDiagnostics {
  Histogram generated;
  Histogram reference;
  double kl = 0.0;  // KL(reference || generated)
  double mmd2 = 0.0;
  double bandwidth = 0.0;
};

// MMD uses the median heuristic on the reference sample (1.0 if that is
// degenerate); at most 2000 evenly strided points per side enter the MMD.
NoiseDiagnostics noise_diagnostics(std::span<const double> generated,
                                   std::span<const double> reference,
                                   std::size_t bins = 32);

// bin,lo,hi,generated,reference
std::string histogram_csv(const NoiseDiagnostics& d);

}  // namespace dnr::metrics
