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

// Finite-difference cases for every autodiff primitive and for the reranker
// composites, shared by the unit tests and the acceptance run.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "dnr/autodiff.hpp"
#include "dnr/grad_check.hpp"
#include "dnr/param_store.hpp"
#include "dnr/rerank_data.hpp"
#include "dnr/reranker.hpp"
#include "dnr/rng.hpp"
#include "support/kinks.hpp"

namespace dnr::testing {

using namespace dnr::ad;

inline Array2 random_array(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0,
                    double hi = 1.0) {
  Array2 a(r, c);
  for (std::size_t i = 0; i < a.size(); ++i)
    a[i] = lo + (hi - lo) * rng.uniform();
  return a;
}

// Values bounded away from zero so relu's kink is never straddled by the
// finite-difference step.
inline Array2 away_from_zero(std::size_t r, std::size_t c, Rng& rng) {
  Array2 a = random_array(r, c, rng);
  for (std::size_t i = 0; i < a.size(); ++i)
    a[i] = (a[i] < 0 ? -0.1 : 0.1) + a[i];
  return a;
}

// sum(out * W) for a fixed random W gives every output a distinct upstream
// gradient.
inline Var weighted_sum(Graph& g, Var out, std::uint64_t seed) {
  Rng rng(seed);
  Var w = g.constant(random_array(out.rows(), out.cols(), rng));
  return sum(mul(out, w));
}

struct PrimitiveCase {
  const char* name;
  std::function<void(ParamStore&, Rng&, std::size_t, std::size_t)> init;
  std::function<Var(Graph&, ParamStore&)> body;
};

inline std::vector<PrimitiveCase> primitive_cases() {
  return {
      {"matmul",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r));
         p.add("b", random_array(n, m + 1, r));
       },
       [](Graph& g, ParamStore& p) {
         return matmul(g.param(p, "a"), g.param(p, "b"));
       }},
      {"add_row_broadcast",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r));
         p.add("b", random_array(1, n, r));
       },
       [](Graph& g, ParamStore& p) {
         return add(g.param(p, "a"), g.param(p, "b"));
       }},
      {"sub",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r));
         p.add("b", random_array(m, n, r));
       },
       [](Graph& g, ParamStore& p) {
         return sub(g.param(p, "a"), g.param(p, "b"));
       }},
      {"mul_col_broadcast",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r));
         p.add("b", random_array(m, 1, r));
       },
       [](Graph& g, ParamStore& p) {
         return mul(g.param(p, "a"), g.param(p, "b"));
       }},
      {"mul_scalar_broadcast",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r));
         p.add("b", random_array(1, 1, r));
       },
       [](Graph& g, ParamStore& p) {
         return mul(g.param(p, "a"), g.param(p, "b"));
       }},
      {"scale_add_scalar",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r));
       },
       [](Graph& g, ParamStore& p) {
         return add_scalar(scale(g.param(p, "a"), -1.7), 0.3);
       }},
      {"sigmoid",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r, -3, 3));
       },
       [](Graph& g, ParamStore& p) { return sigmoid(g.param(p, "a")); }},
      {"relu",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", away_from_zero(m, n, r));
       },
       [](Graph& g, ParamStore& p) { return relu(g.param(p, "a")); }},
      {"tanh",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r, -2, 2));
       },
       [](Graph& g, ParamStore& p) { return tanh(g.param(p, "a")); }},
      {"exp",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r));
       },
       [](Graph& g, ParamStore& p) { return exp(g.param(p, "a")); }},
      {"log",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r, 0.5, 2.0));
       },
       [](Graph& g, ParamStore& p) { return log(g.param(p, "a")); }},
      {"square",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r));
       },
       [](Graph& g, ParamStore& p) { return square(g.param(p, "a")); }},
      {"softmax_rows",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r, -2, 2));
       },
       [](Graph& g, ParamStore& p) { return softmax_rows(g.param(p, "a")); }},
      {"mean_row_sum",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r));
       },
       [](Graph& g, ParamStore& p) {
         Var a = g.param(p, "a");
         return concat_rows({row_sum(a), repeat_rows(mean(a), 1)});
       }},
      {"concat_slice",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r));
         p.add("b", random_array(m, 2, r));
       },
       [](Graph& g, ParamStore& p) {
         Var c = concat_cols({g.param(p, "a"), g.param(p, "b")});
         return slice_cols(c, 1, c.cols() - 1);
       }},
      {"concat_rows_slice_rows",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r));
         p.add("b", random_array(1, n, r));
       },
       [](Graph& g, ParamStore& p) {
         Var c = concat_rows({g.param(p, "a"), g.param(p, "b")});
         return slice_rows(c, 1, c.rows() - 1);
       }},
      {"gather_rows",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("t", random_array(m, n, r));
       },
       [](Graph& g, ParamStore& p) {
         Var t = g.param(p, "t");
         std::vector<std::size_t> idx{0, t.rows() - 1, 0};
         return gather_rows(t, idx);
       }},
      {"repeat_transpose",
       [](ParamStore& p, Rng& r, std::size_t, std::size_t n) {
         p.add("a", random_array(1, n, r));
       },
       [](Graph& g, ParamStore& p) {
         return transpose(repeat_rows(g.param(p, "a"), 3));
       }},
      {"pairwise_sqdist",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r));
         p.add("b", random_array(m + 2, n, r));
       },
       [](Graph& g, ParamStore& p) {
         return pairwise_sqdist(g.param(p, "a"), g.param(p, "b"));
       }},
      {"bce",
       [](ParamStore& p, Rng& r, std::size_t m, std::size_t n) {
         p.add("a", random_array(m, n, r, -2, 2));
       },
       [](Graph& g, ParamStore& p) {
         Var a = sigmoid(g.param(p, "a"));
         Array2 z(a.rows(), a.cols());
         Array2 mask(a.rows(), a.cols(), 1.0);
         for (std::size_t i = 0; i < z.size(); ++i) {
           z[i] = static_cast<double>(i % 2);
           if (i % 3 == 2) mask[i] = 0.0;
         }
         if (mask.size() > 0) mask[0] = 1.0;
         return repeat_rows(bce_loss(a, z, mask), 1);
       }},
  };

}

// Worst relative error of one primitive over `shapes` random shapes.
inline double primitive_error(const PrimitiveCase& c, std::size_t shapes) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < shapes; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t m = 1 + rng.below(8);
    const std::size_t n = 1 + rng.below(8);
    ParamStore ps;
    c.init(ps, rng, m, n);
    auto f = [&](Graph& g) { return weighted_sum(g, c.body(g, ps), seed); };
    const auto res = grad_check(f, ps, {.step = 1e-4, .coords_per_entry = 64});
    worst = std::max(worst, res.max_rel_error);
  }
  return worst;
}

inline data::RerankSample random_rerank_sample(std::size_t n, std::size_t items,
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

// BCE of a small reranker on a random two-sample batch, checked at a point
// at least 1e-3 away from every ReLU kink. Returns the max relative error.
inline double reranker_grad_error(reranker::Backbone bb, reranker::Integration in,
                                  Rng& rng) {
  reranker::RerankerConfig c;
  c.backbone = bb;
  c.integration = in;
  c.hidden = 6;
  c.heads = 2;
  c.max_len = 12;
  reranker::RerankerModel m(c, 20, rng);
  std::vector<data::RerankSample> batch{random_rerank_sample(5, 20, 3, rng),
                                        random_rerank_sample(5, 20, 2, rng)};
  const auto labels = reranker::stacked_labels(batch);
  const Array2 mask(labels.rows(), 1, 1.0);
  const auto f = [&](Graph& g) {
    auto pred = m.score_batch(g, batch, g.constant(reranker::stacked_scores(batch)));
    return bce_loss(pred, labels, mask);
  };
  if (move_off_kinks(m.params(), f, rng, 1e-3) < 1e-3) return 1.0;
  return grad_check(f, m.params()).max_rel_error;
}

}  // namespace dnr::testing
