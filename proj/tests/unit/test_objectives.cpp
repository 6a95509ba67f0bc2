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

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "doctest.h"
#include "dnr/error.hpp"
#include "dnr/grad_check.hpp"
#include "dnr/objectives.hpp"

using namespace dnr;
using namespace dnr::objectives;

namespace {

constexpr std::size_t kItems = 40;
constexpr std::size_t kUsers = 12;

data::RerankSample random_sample(std::size_t user, std::size_t n, Rng& rng) {
  data::RerankSample s;
  s.user = user;
  std::vector<std::size_t> ids(kItems);
  std::iota(ids.begin(), ids.end(), 0);
  shuffle(ids, rng);
  s.candidates.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
  s.history.assign(ids.begin() + static_cast<std::ptrdiff_t>(n),
                   ids.begin() + static_cast<std::ptrdiff_t>(n + 4));
  for (std::size_t i = 0; i < n; ++i) {
    s.x.push_back(rng.uniform());
    s.z.push_back(rng.uniform() < 0.3 ? 1 : 0);
  }
  std::sort(s.x.rbegin(), s.x.rend());
  return s;
}

std::vector<data::RerankSample> random_samples(std::size_t count,
                                               std::size_t n, Rng& rng) {
  std::vector<data::RerankSample> out;
  for (std::size_t u = 0; u < count; ++u)
    out.push_back(random_sample(u % kUsers, n, rng));
  return out;
}

reranker::RerankerConfig config(reranker::Integration i,
                                reranker::Backbone b = reranker::Backbone::kMlp) {
  reranker::RerankerConfig c;
  c.backbone = b;
  c.integration = i;
  c.hidden = 8;
  c.heads = 2;
  c.max_len = 12;
  return c;
}

// Per-cell BCE written out by hand from model predictions.
double bce_oracle(const std::vector<std::vector<double>>& pred,
                  const std::vector<data::RerankSample>& s, bool per_sample) {
  long double total = 0.0L;
  std::size_t cells = 0;
  for (std::size_t k = 0; k < s.size(); ++k)
    for (std::size_t i = 0; i < s[k].size(); ++i) {
      const long double p = pred[k][i];
      total -= s[k].z[i] ? std::log(p) : std::log1p(-p);
      ++cells;
    }
  return static_cast<double>(per_sample ? total / s.size() : total / cells);
}

ad::Array2 column(const std::vector<double>& v) {
  ad::Array2 a(v.size(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) a(i, 0) = v[i];
  return a;
}

std::vector<double> flat_x(const std::vector<data::RerankSample>& s) {
  std::vector<double> out;
  for (const auto& x : s)
    out.insert(out.end(), x.x.begin(), x.x.end());
  return out;
}

struct World {
  std::vector<data::RerankSample> train;
  std::vector<data::RerankSample> validation;
  retriever::MfModel retr;
  TrainData data() const { return {train, validation, retr, kItems}; }
};

World small_world(std::uint64_t seed) {
  Rng rng(seed);
  World w;
  w.train = random_samples(24, 10, rng);
  w.validation = random_samples(6, 10, rng);
  w.retr = retriever::MfModel(kUsers, kItems, 4, rng);
  return w;
}

TrainOptions small_options(std::size_t epochs) {
  TrainOptions o;
  o.epochs = epochs;
  o.batch_size = 8;
  o.lr = 1e-2;
  o.weight_decay = 0.0;
  o.seed = 11;
  return o;
}

}  // namespace

TEST_CASE("loss_direct matches a hand-written BCE over predictions") {
  Rng rng(1);
  const auto s = random_samples(3, 7, rng);
  for (auto b : {reranker::Backbone::kMlp, reranker::Backbone::kAttention}) {
    reranker::RerankerModel m(config(reranker::Integration::kConcat, b), kItems, rng);
    std::vector<std::vector<double>> pred;
    for (const auto& x : s) pred.push_back(m.predict(x, x.x));
    ad::Graph g;
    const double got = loss_direct(g, m, s).scalar();
    CHECK(got == doctest::Approx(bce_oracle(pred, s, false)).epsilon(1e-12));
  }
}

TEST_CASE("constant one-half predictions give ln 2") {
  Rng rng(2);
  const auto s = random_samples(2, 6, rng);
  reranker::RerankerModel m(config(reranker::Integration::kNone), kItems, rng);
  for (auto& [name, e] : m.params().entries()) e.value.fill(0.0);
  ad::Graph g;
  CHECK(loss_direct(g, m, s).scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("loss_z equals loss_direct when fed the observed scores") {
  Rng rng(3);
  const auto s = random_samples(4, 6, rng);
  reranker::RerankerModel m(config(reranker::Integration::kDenoise), kItems, rng);
  ad::Graph g;
  const double direct = loss_direct(g, m, s).scalar();
  const double z = loss_z(g, m, s, column(flat_x(s))).scalar();
  CHECK(direct == z);
}

TEST_CASE("loss_theta recombines its parts exactly") {
  Rng rng(4);
  const auto s = random_samples(3, 8, rng);
  reranker::RerankerModel m(config(reranker::Integration::kDenoise), kItems, rng);
  std::vector<int> z;
  for (const auto& x : s) z.insert(z.end(), x.z.begin(), x.z.end());
  const auto eps = noise::sample_beta(z.size(), 0.5, 0.5, rng);
  for (double lc : {0.0, 0.4, 1.0}) {
    const auto xp = column(noise::synthesize_scores(z, eps, lc));
    for (std::size_t i = 0; i < z.size(); ++i)
      CHECK(std::abs(xp(i, 0) - ((1.0 - lc) * z[i] + lc * eps[i])) <= 1e-12);
    for (double lm : {0.0, 0.4, 1.0}) {
      ad::Graph g;
      const double direct = loss_direct(g, m, s).scalar();
      const double lz = loss_z(g, m, s, xp).scalar();
      const double theta = loss_theta(g, m, s, xp, lm).scalar();
      CHECK(std::abs(theta - (direct + lm * lz)) <= 1e-12);
      if (lm == 0.0) CHECK(theta == direct);
    }
  }
  ad::Graph g;
  CHECK_THROWS_AS(loss_theta(g, m, s, column(flat_x(s)), -0.1), ConfigError);
}

TEST_CASE("loss_adv is the mean per-sample log-likelihood with theta frozen") {
  Rng rng(5);
  const auto s = random_samples(4, 6, rng);
  reranker::RerankerModel m(config(reranker::Integration::kDenoise), kItems, rng);
  ad::ParamStore phi;
  std::vector<double> xv(24);
  for (auto& v : xv) v = rng.uniform();
  phi.add("x", column(xv));

  std::vector<std::vector<double>> pred;
  for (std::size_t k = 0; k < s.size(); ++k)
    pred.push_back(m.predict(s[k], std::span<const double>(xv).subspan(6 * k, 6)));

  ad::Graph g;
  CHECK_THROWS_AS(loss_adv(g, m, s, g.param(phi, "x"), Phase::kWarmup), ConfigError);
  auto adv = loss_adv(g, m, s, g.param(phi, "x"), Phase::kAdversarial);
  CHECK(adv.scalar() == doctest::Approx(-bce_oracle(pred, s, true)).epsilon(1e-12));
  CHECK_FALSE(m.params().frozen());
  m.params().zero_grad();
  g.backward(adv);
  CHECK(m.params().grad_norm() == 0.0);
  CHECK(phi.grad_norm() > 0.0);
}

TEST_CASE("one small theta step lowers loss_theta") {
  Rng rng(6);
  const auto s = random_samples(6, 8, rng);
  reranker::RerankerModel m(config(reranker::Integration::kDenoise), kItems, rng);
  std::vector<int> z;
  for (const auto& x : s) z.insert(z.end(), x.z.begin(), x.z.end());
  const auto xp = column(noise::synthesize_scores(
      z, noise::sample_beta(z.size(), 0.5, 0.5, rng), 0.4));
  ad::Graph g;
  auto before = loss_theta(g, m, s, xp, 0.4);
  m.params().zero_grad();
  g.backward(before);
  for (auto& [name, e] : m.params().entries())
    for (std::size_t k = 0; k < e.value.size(); ++k) e.value[k] -= 1e-4 * e.grad[k];
  ad::Graph g2;
  CHECK(loss_theta(g2, m, s, xp, 0.4).scalar() < before.scalar());
}

TEST_CASE("one small phi step lowers loss_adv + loss_x") {
  Rng rng(7);
  const auto s = random_samples(6, 8, rng);
  reranker::RerankerModel m(config(reranker::Integration::kDenoise), kItems, rng);
  const retriever::MfModel retr(kUsers, kItems, 4, rng);
  noise::GeneratorModel gen(4, 8, rng);
  const auto z = reranker::stacked_labels(s);
  const auto real = reranker::stacked_scores(s);
  auto objective = [&](ad::Graph& g, Rng uniforms) {
    auto eps = noise::generate_model_noise(g, gen, s, retr, uniforms);
    auto xp = noise::synthesize_scores(g, z, eps, 0.4);
    return ad::add(loss_adv(g, m, s, xp, Phase::kAdversarial), loss_x(g, xp, real));
  };
  const Rng uniforms(99);
  ad::Graph g;
  auto before = objective(g, uniforms);
  gen.params().zero_grad();
  g.backward(before);
  for (auto& [name, e] : gen.params().entries())
    for (std::size_t k = 0; k < e.value.size(); ++k) e.value[k] -= 1e-4 * e.grad[k];
  ad::Graph g2;
  CHECK(objective(g2, uniforms).scalar() < before.scalar());
}

TEST_CASE("phi receives no gradient when lambda_c is zero") {
  Rng rng(8);
  const auto s = random_samples(4, 6, rng);
  reranker::RerankerModel m(config(reranker::Integration::kDenoise), kItems, rng);
  const retriever::MfModel retr(kUsers, kItems, 4, rng);
  noise::GeneratorModel gen(4, 8, rng);
  ad::Graph g;
  auto eps = noise::generate_model_noise(g, gen, s, retr, rng);
  auto xp = noise::synthesize_scores(g, reranker::stacked_labels(s), eps, 0.0);
  auto loss = ad::add(loss_adv(g, m, s, xp, Phase::kAdversarial),
                      loss_x(g, xp, reranker::stacked_scores(s)));
  gen.params().zero_grad();
  g.backward(loss);
  for (const auto& [name, e] : gen.params().entries())
    for (std::size_t k = 0; k < e.grad.size(); ++k) CHECK(e.grad[k] == 0.0);
}

TEST_CASE("MMD estimate: zero on identical samples, closed form on two points") {
  Rng rng(9);
  std::vector<double> v(30);
  for (auto& x : v) x = rng.uniform();
  {
    ad::Graph g;
    CHECK(std::abs(loss_x(g, g.constant(column(v)), column(v)).scalar()) <= 1e-12);
  }
  for (double h : {0.3, 1.0, 2.5}) {
    MmdOptions o;
    o.bandwidth = h;
    ad::Graph g;
    const double got =
        loss_x(g, g.constant(column({0.2, 0.2})), column({1.2, 1.2}), o).scalar();
    CHECK(got == doctest::Approx(2.0 * (1.0 - std::exp(-1.0 / (2.0 * h * h))))
                     .epsilon(1e-12));
  }
  ad::Graph g;
  CHECK_THROWS_AS(loss_x(g, g.constant(column({0.5})), column(v)), DataError);
}

TEST_CASE("MMD median bandwidth matches a pairwise loop") {
  Rng rng(10);
  std::vector<double> v(21);
  for (auto& x : v) x = rng.uniform();
  std::vector<double> d;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j) d.push_back(std::abs(v[i] - v[j]));
  std::sort(d.begin(), d.end());
  const double median = d.size() % 2 ? d[d.size() / 2]
                                     : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
  CHECK(mmd_bandwidth(column(v), {}) == doctest::Approx(median).epsilon(1e-14));
  CHECK(mmd_bandwidth(column(std::vector<double>(5, 0.3)), {}) == 1.0);
}

TEST_CASE("MMD gradient agrees with finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> a(15), b(20);
    for (auto& x : a) x = rng.uniform();
    for (auto& x : b) x = 0.3 + 0.5 * rng.uniform();
    ad::ParamStore p;
    p.add("x", column(a));
    const auto real = column(b);
    auto r = ad::grad_check(
        [&](ad::Graph& g) { return loss_x(g, g.param(p, "x"), real); }, p);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("warm-up spanning every epoch never touches phi") {
  auto w = small_world(21);
  DnrConfig cfg;
  cfg.lambda_e = 3;
  const auto r = train_dnr(small_options(3), cfg,
                           config(reranker::Integration::kDenoise), w.data());
  CHECK(ad::fingerprint(r.generator.params()) == r.generator_init_fingerprint);
  for (const auto& e : r.history.records) {
    CHECK(e.phase == Phase::kWarmup);
    CHECK(e.l_adv == 0.0);
  }
}

TEST_CASE("lambda_m = 0 with full warm-up reproduces the direct baseline bitwise") {
  for (double dropout : {0.0, 0.3}) {
    auto w = small_world(22);
    DnrConfig cfg;
    cfg.lambda_e = 4;
    cfg.lambda_m = 0.0;
    auto rc = config(reranker::Integration::kDenoise);
    rc.dropout = dropout;
    auto bc = rc;
    bc.integration = reranker::Integration::kConcat;
    const auto dnr = train_dnr(small_options(4), cfg, rc, w.data());
    const auto base = train_baseline(small_options(4), bc, w.data());
    CHECK(ad::serialize(dnr.model.params()) == ad::serialize(base.model.params()));
    for (std::size_t e = 0; e < 4; ++e) {
      CHECK(dnr.history.records[e].l_direct == base.history.records[e].l_direct);
      CHECK(dnr.history.records[e].val_ndcg == base.history.records[e].val_ndcg);
    }
  }
}

TEST_CASE("phase tags flip after epoch lambda_e and phi starts moving") {
  auto w = small_world(23);
  DnrConfig cfg;
  cfg.lambda_e = 2;
  const auto r = train_dnr(small_options(4), cfg,
                           config(reranker::Integration::kDenoise), w.data());
  REQUIRE(r.history.records.size() == 4);
  for (std::size_t e = 0; e < 4; ++e) {
    CHECK(r.history.records[e].epoch == e + 1);
    CHECK(r.history.records[e].phase ==
          (e + 1 <= 2 ? Phase::kWarmup : Phase::kAdversarial));
    if (e + 1 > 2) CHECK(r.history.records[e].l_adv < 0.0);
  }
  CHECK(ad::fingerprint(r.generator.params()) != r.generator_init_fingerprint);
  const auto csv = r.history.to_csv();
  CHECK(csv.rfind("epoch,phase,l_direct,l_z,l_theta,l_adv,l_x,val_ndcg\n", 0) == 0);
  CHECK(csv.find("\n3,adversarial,") != std::string::npos);
  CHECK(csv.find("\n2,warmup,") != std::string::npos);
}

TEST_CASE("training is a pure function of the seed") {
  auto w = small_world(24);
  DnrConfig cfg;
  cfg.lambda_e = 1;
  for (auto b : {reranker::Backbone::kMlp, reranker::Backbone::kAttention}) {
    const auto rc = config(reranker::Integration::kDenoise, b);
    const auto a = train_dnr(small_options(3), cfg, rc, w.data());
    const auto c = train_dnr(small_options(3), cfg, rc, w.data());
    CHECK(ad::serialize(a.model.params()) == ad::serialize(c.model.params()));
    CHECK(ad::serialize(a.generator.params()) == ad::serialize(c.generator.params()));
    CHECK(a.history.to_csv() == c.history.to_csv());
    auto other = small_options(3);
    other.seed = 12;
    const auto d = train_dnr(other, cfg, rc, w.data());
    CHECK(ad::serialize(a.model.params()) != ad::serialize(d.model.params()));
  }
}

TEST_CASE("configuration errors are rejected before training") {
  auto w = small_world(25);
  DnrConfig cfg;
  cfg.lambda_e = 5;
  const auto rc = config(reranker::Integration::kDenoise);
  CHECK_THROWS_AS(train_dnr(small_options(3), cfg, rc, w.data()), ConfigError);
  cfg.lambda_e = 1;
  cfg.noise.kind = noise::Kind::kModel;
  CHECK_THROWS_AS(train_dnr(small_options(3), cfg, rc, w.data()), ConfigError);
  cfg.noise.kind = noise::Kind::kGaussian;
  cfg.lambda_c = 1.5;
  CHECK_THROWS_AS(train_dnr(small_options(3), cfg, rc, w.data()), ConfigError);
  cfg.lambda_c = 0.4;
  CHECK_THROWS_AS(train_dnr(small_options(3), cfg,
                            config(reranker::Integration::kNone), w.data()),
                  ConfigError);
  CHECK_THROWS_AS(train_baseline(small_options(3), rc, w.data()), ConfigError);
}

TEST_CASE("a non-finite score surfaces as a located numeric error") {
  auto w = small_world(26);
  w.train[0].x[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train_baseline(small_options(2), config(reranker::Integration::kConcat),
                   w.data());
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("true_noise inverts the mixing rule") {
  Rng rng(27);
  auto s = random_samples(3, 6, rng);
  std::vector<double> eps;
  for (auto& x : s)
    for (std::size_t i = 0; i < x.size(); ++i) {
      eps.push_back(rng.uniform());
      x.x[i] = 0.6 * x.z[i] + 0.4 * eps.back();
    }
  const auto got = true_noise(s, 0.4);
  REQUIRE(got.size() == eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i)
    CHECK(got[i] == doctest::Approx(eps[i]).epsilon(1e-12));
  CHECK_THROWS_AS(true_noise(s, 0.0), ConfigError);
}
