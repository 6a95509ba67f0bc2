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

#pragma once

#include <cstdint>
#include <functional>

#include "dnr/autodiff.hpp"
#include "dnr/param_store.hpp"

namespace dnr::ad {

struct GradCheckOptions {
  double step = 1e-4;
  // Coordinates checked per entry; entries smaller than this are checked
  // exhaustively.
  std::size_t coords_per_entry = 24;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_entry;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

using LossFn = std::function<Var(Graph&)>;

// Compares backward() gradients against central differences,
// |analytic - numeric| / max(1, |numeric|), over sampled coordinates of every
// entry in `params`. `f` must be deterministic given the params.
GradCheckResult grad_check(const LossFn& f, ParamStore& params,
                           const GradCheckOptions& opt = {});

}  // namespace dnr::ad
