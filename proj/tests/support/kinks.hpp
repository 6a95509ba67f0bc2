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

// Finite differences with step h are only meaningful where the loss is
// smooth within h. These helpers measure how close a forward pass sits to
// the ReLU kinks so checks can be placed at generic points.

#pragma once

#include <cmath>
#include <limits>

#include "dnr/autodiff.hpp"
#include "dnr/grad_check.hpp"
#include "dnr/param_store.hpp"
#include "dnr/rng.hpp"

namespace dnr::testing {

// Smallest |input| over all ReLU nodes of one forward pass.
inline double relu_margin(const ad::LossFn& f) {
  ad::Graph g;
  f(g);
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t id = 0; id < g.size(); ++id) {
    const auto& node = g.node(id);
    if (node.kind != ad::OpKind::kRelu) continue;
    const auto& in = g.value(node.inputs[0]);
    for (std::size_t k = 0; k < in.size(); ++k) m = std::min(m, std::abs(in[k]));
  }
  return m;
}

// Adds N(0, 0.1) to every bias row until every ReLU input is at least
// `margin` away from zero (or `tries` attempts run out). Returns the
// final margin.
inline double move_off_kinks(ad::ParamStore& params, const ad::LossFn& f,
                             Rng& rng, double margin, int tries = 50) {
  double m = relu_margin(f);
  for (int t = 0; t < tries && m < margin; ++t) {
    for (auto& [name, e] : params.entries())
      if (e.value.rows() == 1)
        for (std::size_t k = 0; k < e.value.size(); ++k)
          e.value[k] += 0.1 * rng.normal();
    m = relu_margin(f);
  }
  return m;
}

}  // namespace dnr::testing
