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

// Exact, fully enumerable probability worlds for checking the likelihood
// decompositions used by the denoising objective.
//
// A world has a score grid G and a list length n. Score vectors x range
// over G^n and are indexed in mixed radix (item 0 is the least significant
// digit); feedback vectors z range over {0,1}^n and are indexed as bit
// masks (bit i = z_i).
//
// For a reranker table q(z|x) and a synthetic posterior table p_phi(x|z):
//
//   -log p(z) = L_direct + L1 + L2
//     L_direct = -E_{p_x}[log q(z|x)]
//     L1       =  E_{p_x}[log q(z|x) / p(z|x)]
//     L2       = -KL(p_x || p(x|z))
//
//   -log p(z) = L_z + L_adv + L_x + delta_x
//     L_z      = -E_{p_phi}[log q(z|x)]
//     L_adv    =  E_{p_phi}[log q(z|x) / p(z|x)]
//     L_x      =  KL(p_phi(.|z) || p_x)
//     delta_x  = -KL(p_phi(.|z) || p(x|z))  <= 0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dnr/rng.hpp"

namespace dnr::oracle {

struct DiscreteWorld {
  std::vector<double> grid;
  std::size_t n = 1;
  std::vector<double> p_x;                       // [x]
  std::vector<std::vector<double>> p_z_given_x;  // [x][z]

  std::size_t num_x() const;
  std::size_t num_z() const { return std::size_t{1} << n; }
  // Score vector for a mixed-radix index.
  std::vector<double> scores(std::size_t x) const;
  // Throws DataError unless every table is nonnegative and sums to 1.
  void validate(double tol = 1e-12) const;
};

struct TableModel {
  std::vector<std::vector<double>> q;          // q(z|x): [x][z]
  std::vector<std::vector<double>> posterior;  // p_phi(x|z): [z][x]
};

// Random tables with entries floored at `floor` before normalisation.
DiscreteWorld random_world(Rng& rng, std::size_t n, std::size_t grid_size,
                           double floor = 1e-6);
TableModel random_model(const DiscreteWorld& w, Rng& rng, double floor = 1e-6);

// Model with q = p(z|x) and p_phi = p_x.
TableModel matched_model(const DiscreteWorld& w);

// Throws DataError unless both tables are strictly positive and their rows
// sum to 1 within tol.
void validate_model(const DiscreteWorld& w, const TableModel& m,
                    double tol = 1e-12);

// p(z) = sum_x p_x(x) p(z|x).
double evidence(const DiscreteWorld& w, std::size_t z);
// -log p(z); throws DataError if p(z) = 0.
double marginal_loglik(const DiscreteWorld& w, std::size_t z);
// p(x|z) by Bayes' rule.
std::vector<double> bayes_posterior(const DiscreteWorld& w, std::size_t z);

struct DirectTerms {
  double l_direct = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double residual = 0.0;  // |-log p(z) - (l_direct + l1 + l2)|
};

struct AugmentedTerms {
  double l_z = 0.0;
  double l_adv = 0.0;
  double l_x = 0.0;
  double delta_x = 0.0;
  double residual = 0.0;  // |-log p(z) - (l_z + l_adv + l_x + delta_x)|
};

DirectTerms decompose_direct(const DiscreteWorld& w,
                             const std::vector<std::vector<double>>& q,
                             std::size_t z);
AugmentedTerms decompose_augmented(const DiscreteWorld& w,
                                   const std::vector<std::vector<double>>& q,
                                   const std::vector<double>& posterior,
                                   std::size_t z);

struct WorldCheck {
  std::size_t index = 0;
  std::size_t n = 0;
  std::size_t grid_size = 0;
  double residual_direct = 0.0;     // max over z
  double residual_augmented = 0.0;  // max over z
  double max_delta_x = 0.0;         // max over z; must be <= 0
  double min_l_x = 0.0;
  double max_l2 = 0.0;
  double bayes_delta_x = 0.0;       // |delta_x| with p_phi = exact posterior
  bool tables_valid = true;
  std::string failure;
  bool ok() const { return failure.empty(); }
};

struct TheoryReport {
  std::vector<WorldCheck> worlds;
  double max_residual_direct = 0.0;
  double max_residual_augmented = 0.0;
  double max_delta_x = -1e300;
  double max_bayes_delta_x = 0.0;
  std::size_t failures = 0;
  bool passed() const { return failures == 0; }
};

struct VerifyOptions {
  std::size_t worlds = 100;
  std::uint64_t seed = 0;
  double tolerance = 1e-9;
  double bayes_tolerance = 1e-12;
  // Negative control: corrupt one world's q table so its rows no longer
  // sum to 1.
  bool inject_unnormalized_q = false;
};

// Random worlds with n in {1,2,3} and |grid| in {2,3,4}.
TheoryReport verify_theory(const VerifyOptions& opt);

std::string format_report(const TheoryReport& r);

}  // namespace dnr::oracle
