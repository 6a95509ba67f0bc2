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

#include "dnr/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dnr/error.hpp"

namespace dnr::oracle {

namespace {

std::vector<double> random_simplex(Rng& rng, std::size_t k, double floor) {
  std::vector<double> v(k);
  double s = 0.0;
  for (double& x : v) {
    x = rng.uniform() + floor;
    s += x;
  }
  for (double& x : v) x /= s;
  return v;
}

double row_sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

std::size_t DiscreteWorld::num_x() const {
  std::size_t k = 1;
  for (std::size_t i = 0; i < n; ++i) k *= grid.size();
  return k;
}

std::vector<double> DiscreteWorld::scores(std::size_t x) const {
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = grid[x % grid.size()];
    x /= grid.size();
  }
  return s;
}

void DiscreteWorld::validate(double tol) const {
  if (grid.empty() || n == 0) throw DataError("world: empty grid or n = 0");
  if (p_x.size() != num_x() || p_z_given_x.size() != num_x())
    throw DataError("world: table sizes do not match grid^n");
  if (std::any_of(p_x.begin(), p_x.end(), [](double v) { return v < 0; }) ||
      std::abs(row_sum(p_x) - 1.0) > tol)
    throw DataError("world: p_x is not a distribution");
  for (const auto& row : p_z_given_x) {
    if (row.size() != num_z() ||
        std::any_of(row.begin(), row.end(), [](double v) { return v < 0; }) ||
        std::abs(row_sum(row) - 1.0) > tol)
      throw DataError("world: p(z|x) row is not a distribution");
  }
}

DiscreteWorld random_world(Rng& rng, std::size_t n, std::size_t grid_size,
                           double floor) {
  DiscreteWorld w;
  w.n = n;
  // Distinct grid points: one uniform draw per equal-width cell, so the
  // grid is sorted and strictly increasing.
  for (std::size_t g = 0; g < grid_size; ++g)
    w.grid.push_back((static_cast<double>(g) + rng.uniform()) /
                     static_cast<double>(grid_size));
  w.p_x = random_simplex(rng, w.num_x(), floor);
  for (std::size_t x = 0; x < w.num_x(); ++x)
    w.p_z_given_x.push_back(random_simplex(rng, w.num_z(), floor));
  return w;
}

TableModel random_model(const DiscreteWorld& w, Rng& rng, double floor) {
  TableModel m;
  for (std::size_t x = 0; x < w.num_x(); ++x)
    m.q.push_back(random_simplex(rng, w.num_z(), floor));
  for (std::size_t z = 0; z < w.num_z(); ++z)
    m.posterior.push_back(random_simplex(rng, w.num_x(), floor));
  return m;
}

TableModel matched_model(const DiscreteWorld& w) {
  TableModel m;
  m.q = w.p_z_given_x;
  m.posterior.assign(w.num_z(), w.p_x);
  return m;
}

void validate_model(const DiscreteWorld& w, const TableModel& m, double tol) {
  auto check = [&](const std::vector<double>& row, std::size_t len,
                   const char* what) {
    if (row.size() != len) throw DataError(std::string(what) + ": wrong size");
    if (std::any_of(row.begin(), row.end(), [](double v) { return !(v > 0); }))
      throw DataError(std::string(what) + ": entry not strictly positive");
    if (std::abs(row_sum(row) - 1.0) > tol)
      throw DataError(std::string(what) + ": row does not sum to 1");
  };
  if (m.q.size() != w.num_x()) throw DataError("q: wrong number of rows");
  for (const auto& row : m.q) check(row, w.num_z(), "q");
  if (m.posterior.size() != w.num_z())
    throw DataError("posterior: wrong number of rows");
  for (const auto& row : m.posterior) check(row, w.num_x(), "posterior");
}

double evidence(const DiscreteWorld& w, std::size_t z) {
  double p = 0.0;
  for (std::size_t x = 0; x < w.num_x(); ++x)
    p += w.p_x[x] * w.p_z_given_x[x].at(z);
  return p;
}

double marginal_loglik(const DiscreteWorld& w, std::size_t z) {
  const double p = evidence(w, z);
  if (!(p > 0.0)) throw DataError("p(z) = 0 for feedback " + std::to_string(z));
  return -std::log(p);
}

std::vector<double> bayes_posterior(const DiscreteWorld& w, std::size_t z) {
  const double p = evidence(w, z);
  if (!(p > 0.0)) throw DataError("p(z) = 0 for feedback " + std::to_string(z));
  std::vector<double> post(w.num_x());
  for (std::size_t x = 0; x < w.num_x(); ++x)
    post[x] = w.p_x[x] * w.p_z_given_x[x][z] / p;
  return post;
}

DirectTerms decompose_direct(const DiscreteWorld& w,
                             const std::vector<std::vector<double>>& q,
                             std::size_t z) {
  const auto post = bayes_posterior(w, z);
  DirectTerms t;
  for (std::size_t x = 0; x < w.num_x(); ++x) {
    const double px = w.p_x[x];
    const double lq = std::log(q[x][z]);
    t.l_direct -= px * lq;
    t.l1 += px * (lq - std::log(w.p_z_given_x[x][z]));
    t.l2 -= px * (std::log(px) - std::log(post[x]));
  }
  t.residual = std::abs(marginal_loglik(w, z) - (t.l_direct + t.l1 + t.l2));
  return t;
}

AugmentedTerms decompose_augmented(const DiscreteWorld& w,
                                   const std::vector<std::vector<double>>& q,
                                   const std::vector<double>& posterior,
                                   std::size_t z) {
  const auto post = bayes_posterior(w, z);
  AugmentedTerms t;
  for (std::size_t x = 0; x < w.num_x(); ++x) {
    const double pp = posterior[x];
    const double lq = std::log(q[x][z]);
    const double lpp = std::log(pp);
    t.l_z -= pp * lq;
    t.l_adv += pp * (lq - std::log(w.p_z_given_x[x][z]));
    t.l_x += pp * (lpp - std::log(w.p_x[x]));
    t.delta_x -= pp * (lpp - std::log(post[x]));
  }
  t.residual = std::abs(marginal_loglik(w, z) -
                        (t.l_z + t.l_adv + t.l_x + t.delta_x));
  return t;
}

TheoryReport verify_theory(const VerifyOptions& opt) {
  TheoryReport rep;
  Rng rng(opt.seed);
  for (std::size_t i = 0; i < opt.worlds; ++i) {
    WorldCheck c;
    c.index = i;
    c.n = 1 + rng.below(3);
    c.grid_size = 2 + rng.below(3);
    const DiscreteWorld w = random_world(rng, c.n, c.grid_size);
    TableModel m = random_model(w, rng);
    if (opt.inject_unnormalized_q && i == opt.worlds / 2) {
      for (auto& row : m.q) row[0] *= 1.5;
    }

    try {
      w.validate();
      validate_model(w, m);
    } catch (const DataError& e) {
      c.tables_valid = false;
      c.failure = e.what();
    }

    c.max_delta_x = -1e300;
    c.min_l_x = 1e300;
    c.max_l2 = -1e300;
    for (std::size_t z = 0; z < w.num_z(); ++z) {
      const DirectTerms d = decompose_direct(w, m.q, z);
      const AugmentedTerms a = decompose_augmented(w, m.q, m.posterior[z], z);
      const AugmentedTerms b =
          decompose_augmented(w, m.q, bayes_posterior(w, z), z);
      c.residual_direct = std::max(c.residual_direct, d.residual);
      c.residual_augmented = std::max(c.residual_augmented, a.residual);
      c.max_delta_x = std::max(c.max_delta_x, a.delta_x);
      c.min_l_x = std::min(c.min_l_x, a.l_x);
      c.max_l2 = std::max(c.max_l2, d.l2);
      c.bayes_delta_x = std::max(c.bayes_delta_x, std::abs(b.delta_x));
    }
    if (c.failure.empty()) {
      if (c.residual_direct >= opt.tolerance)
        c.failure = "direct decomposition residual too large";
      else if (c.residual_augmented >= opt.tolerance)
        c.failure = "augmented decomposition residual too large";
      else if (c.max_delta_x > 0.0)
        c.failure = "delta_x positive";
      else if (c.min_l_x < 0.0)
        c.failure = "L_x negative";
      else if (c.max_l2 > 0.0)
        c.failure = "L2 positive";
      else if (c.bayes_delta_x >= opt.bayes_tolerance)
        c.failure = "delta_x not zero at the exact posterior";
    }

    rep.max_residual_direct = std::max(rep.max_residual_direct, c.residual_direct);
    rep.max_residual_augmented =
        std::max(rep.max_residual_augmented, c.residual_augmented);
    rep.max_delta_x = std::max(rep.max_delta_x, c.max_delta_x);
    rep.max_bayes_delta_x = std::max(rep.max_bayes_delta_x, c.bayes_delta_x);
    if (!c.ok()) ++rep.failures;
    rep.worlds.push_back(std::move(c));
  }
  return rep;
}

std::string format_report(const TheoryReport& r) {
  std::string out =
      "world  n  grid  residual_direct  residual_augmented  max_delta_x  "
      "status\n";
  char buf[256];
  for (const WorldCheck& c : r.worlds) {
    std::snprintf(buf, sizeof buf, "%5zu  %zu  %4zu  %15.3e  %18.3e  %11.3e  %s\n",
                  c.index, c.n, c.grid_size, c.residual_direct,
                  c.residual_augmented, c.max_delta_x,
                  c.ok() ? "ok" : ("FAIL: " + c.failure).c_str());
    out += buf;
  }
  std::snprintf(buf, sizeof buf,
                "max residual (direct)    %.3e\n"
                "max residual (augmented) %.3e\n"
                "max delta_x              %.3e\n"
                "max |delta_x| at exact posterior %.3e\n"
                "%zu/%zu worlds passed: %s\n",
                r.max_residual_direct, r.max_residual_augmented, r.max_delta_x,
                r.max_bayes_delta_x, r.worlds.size() - r.failures,
                r.worlds.size(), r.passed() ? "PASS" : "FAIL");
  out += buf;
  return out;
}

}  // namespace dnr::oracle
