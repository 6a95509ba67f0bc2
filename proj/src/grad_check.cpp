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

#include "dnr/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dnr::ad {

namespace {

double evaluate(const LossFn& f) {
  Graph g;
  return f(g).scalar();
}

}  // namespace

GradCheckResult grad_check(const LossFn& f, ParamStore& params,
                           const GradCheckOptions& opt) {
  params.zero_grad();
  {
    Graph g;
    Var loss = f(g);
    g.backward(loss);
  }

  GradCheckResult result;
  Rng rng(opt.seed);
  for (auto& [name, e] : params.entries()) {
    std::vector<std::size_t> coords(e.value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > opt.coords_per_entry) {
      shuffle(coords, rng);
      coords.resize(opt.coords_per_entry);
    }
    for (std::size_t i : coords) {
      const double orig = e.value[i];
      e.value[i] = orig + opt.step;
      const double up = evaluate(f);
      e.value[i] = orig - opt.step;
      const double down = evaluate(f);
      e.value[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double analytic = e.grad[i];
      const double rel =
          std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_entry = name;
        result.worst_index = i;
      }
    }
  }
  params.zero_grad();
  return result;
}

}  // namespace dnr::ad
