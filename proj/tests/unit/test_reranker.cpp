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
#include <numeric>
#include <vector>

#include "doctest.h"
#include "dnr/error.hpp"
#include "dnr/grad_check.hpp"
#include "dnr/reranker.hpp"
#include "support/kinks.hpp"
#include "support/oracles.hpp"

using namespace dnr;
using namespace dnr::reranker;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat from(const ad::Array2& a) {
  Mat m(a.rows(), std::vector<double>(a.cols()));
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) m[r][c] = a(r, c);
  return m;
}

Mat mm(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

Mat plus_row(Mat a, const Mat& row) {
  for (auto& r : a)
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += row[0][j];
  return a;
}

Mat plus(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

Mat relu(Mat a) {
  for (auto& r : a)
    for (auto& v : r) v = std::max(v, 0.0);
  return a;
}

// Straight-line single-layer attention reranker with concat integration.
std::vector<double> attention_oracle(const RerankerModel& m,
                                     const data::RerankSample& s) {
  const auto& P = m.params();
  const std::size_t n = s.size();
  const std::size_t h = m.config().hidden;
  const std::size_t heads = m.config().heads;
  const std::size_t hd = h / heads;
  const Mat emb = from(P.value("rr.item_emb"));

  Mat state(1, std::vector<double>(h, 0.0));
  {
    Mat mean(1, std::vector<double>(h, 0.0));
    for (auto item : s.history)
      for (std::size_t k = 0; k < h; ++k)
        mean[0][k] += emb[item][k] / static_cast<double>(s.history.size());
    state = plus_row(mm(mean, from(P.value("rr.user_w"))), from(P.value("rr.user_b")));
  }
  Mat in(n);
  for (std::size_t i = 0; i < n; ++i) {
    in[i] = emb[s.candidates[i]];
    in[i].push_back(s.x[i]);
    in[i].insert(in[i].end(), state[0].begin(), state[0].end());
  }
  Mat h0 = relu(plus_row(mm(in, from(P.value("rr.in_w"))), from(P.value("rr.in_b"))));
  const Mat pos = from(P.value("rr.pos"));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < h; ++k) h0[i][k] += pos[i][k];

  const Mat q = mm(h0, from(P.value("rr.att0.wq")));
  const Mat kk = mm(h0, from(P.value("rr.att0.wk")));
  const Mat v = mm(h0, from(P.value("rr.att0.wv")));
  Mat o(n, std::vector<double>(h, 0.0));
  for (std::size_t a = 0; a < heads; ++a) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> logits(n);
      for (std::size_t j = 0; j < n; ++j) {
        double d = 0.0;
        for (std::size_t c = a * hd; c < (a + 1) * hd; ++c) d += q[i][c] * kk[j][c];
        logits[j] = d / std::sqrt(static_cast<double>(hd));
      }
      const double top = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (auto& l : logits) z += (l = std::exp(l - top));
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = a * hd; c < (a + 1) * hd; ++c)
          o[i][c] += logits[j] / z * v[j][c];
    }
  }
  const Mat h1 = plus(h0, mm(o, from(P.value("rr.att0.wo"))));
  const Mat ff = plus_row(
      mm(relu(plus_row(mm(h1, from(P.value("rr.att0.f1w"))), from(P.value("rr.att0.f1b")))),
         from(P.value("rr.att0.f2w"))),
      from(P.value("rr.att0.f2b")));
  const Mat h2 = plus(h1, ff);
  const Mat logit = plus_row(mm(h2, from(P.value("rr.out_w"))), from(P.value("rr.out_b")));
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-logit[i][0]));
  return out;
}

data::RerankSample random_sample(std::size_t n, std::size_t items,
                                 std::size_t hist, Rng& rng) {
  data::RerankSample s;
  std::vector<std::size_t> ids(items);
  std::iota(ids.begin(), ids.end(), 0);
  shuffle(ids, rng);
  s.candidates.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
  s.history.assign(ids.begin() + static_cast<std::ptrdiff_t>(n),
                   ids.begin() + static_cast<std::ptrdiff_t>(n + hist));
  for (std::size_t i = 0; i < n; ++i) {
    s.x.push_back(rng.uniform());
    s.z.push_back(rng.uniform() < 0.3 ? 1 : 0);
  }
  std::sort(s.x.rbegin(), s.x.rend());
  return s;
}

RerankerConfig make_config(Backbone b, Integration i, std::size_t hidden = 8) {
  RerankerConfig c;
  c.backbone = b;
  c.integration = i;
  c.hidden = hidden;
  c.heads = 2;
  c.max_len = 12;
  return c;
}

std::vector<double> column(const ad::Var& v) {
  std::vector<double> out(v.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v.value()(i, 0);
  return out;
}

}  // namespace

TEST_CASE("user encoder") {
  Rng rng(1);
  RerankerModel m(make_config(Backbone::kMlp, Integration::kConcat), 20, rng);
  ad::Graph g;
  const auto empty = m.encode_user(g, {});
  for (std::size_t k = 0; k < 8; ++k) CHECK(empty.value()(0, k) == 0.0);

  const std::vector<std::size_t> one{5};
  const auto single = m.encode_user(g, one);
  const auto& e = m.params().value("rr.item_emb");
  const auto& w = m.params().value("rr.user_w");
  const auto& b = m.params().value("rr.user_b");
  for (std::size_t k = 0; k < 8; ++k) {
    double v = b(0, k);
    for (std::size_t j = 0; j < 8; ++j) v += e(5, j) * w(j, k);
    CHECK(single.value()(0, k) == doctest::Approx(v).epsilon(1e-14));
  }

  const std::vector<std::size_t> h1{3, 9, 1, 14}, h2{14, 1, 9, 3};
  const ad::Array2 s1 = m.encode_user(g, h1).value();
  const ad::Array2 s2 = m.encode_user(g, h2).value();
  CHECK(s1 == s2);
  const std::vector<std::size_t> bad{20};
  CHECK_THROWS_AS(m.encode_user(g, bad), DataError);
}

TEST_CASE("integration none ignores the score input") {
  Rng rng(2);
  for (auto bb : {Backbone::kMlp, Backbone::kAttention}) {
    RerankerModel m(make_config(bb, Integration::kNone), 30, rng);
    const auto s = random_sample(10, 30, 4, rng);
    std::vector<double> other(10);
    for (auto& v : other) v = rng.uniform();
    CHECK(m.predict(s, s.x) == m.predict(s, other));
  }
}

TEST_CASE("integration weight with zero scores annihilates item features") {
  Rng rng(3);
  RerankerModel m(make_config(Backbone::kMlp, Integration::kWeight), 30, rng);
  const auto s = random_sample(10, 30, 4, rng);
  const auto out = m.predict(s, std::vector<double>(10, 0.0));
  for (double v : out) CHECK(v == out[0]);
}

TEST_CASE("attention backbone matches a hand-unrolled oracle") {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    RerankerModel m(make_config(Backbone::kAttention, Integration::kConcat), 25, rng);
    const auto s = random_sample(4, 25, 3, rng);
    const auto got = m.predict(s, s.x);
    const auto want = attention_oracle(m, s);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(got[i] - want[i]) < 1e-10);
  }
}

TEST_CASE("outputs stay inside (0, 1)") {
  Rng rng(5);
  for (auto bb : {Backbone::kMlp, Backbone::kAttention})
    for (auto in : {Integration::kNone, Integration::kConcat, Integration::kAdd,
                    Integration::kWeight, Integration::kDenoise}) {
      RerankerModel m(make_config(bb, in), 40, rng);
      const auto s = random_sample(12, 40, 5, rng);
      for (double v : m.predict(s, s.x)) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
    }
}

TEST_CASE("attention without positions is permutation-equivariant") {
  Rng rng(6);
  RerankerModel m(make_config(Backbone::kAttention, Integration::kConcat), 30, rng);
  auto& pos = m.params().at("rr.pos").value;
  for (std::size_t k = 0; k < pos.size(); ++k) pos[k] = 0.0;
  const auto s = random_sample(9, 30, 4, rng);
  const auto base = m.predict(s, s.x);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle(perm, rng);
  data::RerankSample p = s;
  for (std::size_t i = 0; i < 9; ++i) {
    p.candidates[i] = s.candidates[perm[i]];
    p.x[i] = s.x[perm[i]];
  }
  const auto out = m.predict(p, p.x);
  for (std::size_t i = 0; i < 9; ++i)
    CHECK(out[i] == doctest::Approx(base[perm[i]]).epsilon(1e-12));
}

TEST_CASE("batched scoring equals per-sample scoring") {
  Rng rng(7);
  for (auto bb : {Backbone::kMlp, Backbone::kAttention}) {
    RerankerModel m(make_config(bb, Integration::kAdd), 40, rng);
    std::vector<data::RerankSample> batch;
    for (int k = 0; k < 3; ++k) batch.push_back(random_sample(10, 40, 3, rng));
    ad::Graph g;
    const auto out = column(m.score_batch(g, batch, g.constant(stacked_scores(batch))));
    std::size_t at = 0;
    for (const auto& s : batch) {
      const auto single = m.predict(s, s.x);
      for (double v : single) CHECK(std::abs(out[at++] - v) < 1e-14);
    }
  }
}

TEST_CASE("reranker gradients match finite differences") {
  Rng rng(8);
  for (int seed = 0; seed < 4; ++seed)
    for (auto bb : {Backbone::kMlp, Backbone::kAttention})
      for (auto in : {Integration::kNone, Integration::kConcat, Integration::kAdd,
                      Integration::kWeight}) {
        RerankerModel m(make_config(bb, in, 6), 20, rng);
        std::vector<data::RerankSample> batch{random_sample(5, 20, 3, rng),
                                              random_sample(5, 20, 2, rng)};
        const auto labels = stacked_labels(batch);
        const ad::Array2 mask(labels.rows(), 1, 1.0);
        const auto f = [&](ad::Graph& g) {
          auto pred = m.score_batch(g, batch, g.constant(stacked_scores(batch)));
          return ad::bce_loss(pred, labels, mask);
        };
        // Zero biases put ReLU inputs of all-zero rows exactly on a kink.
        REQUIRE(testing::move_off_kinks(m.params(), f, rng, 1e-3) >= 1e-3);
        const auto res = ad::grad_check(f, m.params());
        CAPTURE(backbone_name(bb));
        CAPTURE(integration_name(in));
        CAPTURE(res.worst_entry);
        CAPTURE(res.worst_index);
        CHECK(res.max_rel_error < 1e-3);
      }
}

TEST_CASE("rank_top_k") {
  const std::vector<double> z{0.2, 0.9, 0.5, 0.9, 0.1};
  CHECK(rank_top_k(z, 5) == std::vector<std::size_t>{1, 3, 2, 0, 4});
  CHECK(rank_top_k(std::vector<double>(6, 0.3), 4) ==
        std::vector<std::size_t>{0, 1, 2, 3});
  CHECK_THROWS_AS(rank_top_k(z, 6), DataError);
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> s(30);
    for (auto& v : s) v = static_cast<double>(rng.below(10));
    const auto oracle = testing::full_sort_ranking(s);
    CHECK(rank_top_k(s, 6) == std::vector<std::size_t>(oracle.begin(), oracle.begin() + 6));
  }
}

TEST_CASE("shape and range errors") {
  Rng rng(10);
  RerankerModel m(make_config(Backbone::kAttention, Integration::kConcat), 30, rng);
  auto s = random_sample(5, 30, 2, rng);
  CHECK_THROWS_AS(m.predict(s, std::vector<double>(4, 0.5)), ShapeError);
  auto long_list = random_sample(13, 30, 2, rng);
  CHECK_THROWS_AS(m.predict(long_list, long_list.x), DataError);
  s.candidates[0] = 30;
  CHECK_THROWS_AS(m.predict(s, s.x), DataError);
  RerankerConfig bad = make_config(Backbone::kAttention, Integration::kConcat);
  bad.hidden = 7;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"hiddn", 3}}), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  Rng rng(11);
  RerankerModel m(make_config(Backbone::kAttention, Integration::kWeight), 30, rng);
  const auto stem = std::filesystem::temp_directory_path() / "dnr_rr_test";
  m.save(stem);
  auto back = RerankerModel::load(stem);
  CHECK(back.config().integration == Integration::kWeight);
  CHECK(ad::fingerprint(back.params()) == ad::fingerprint(m.params()));
  const auto s = random_sample(6, 30, 2, rng);
  CHECK(back.predict(s, s.x) == m.predict(s, s.x));
  std::filesystem::remove(stem.string() + ".dnrw");
  std::filesystem::remove(stem.string() + ".json");
}
