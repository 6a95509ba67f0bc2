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
#include <filesystem>
#include <map>
#include <string>

#include "dnr/autodiff.hpp"
#include "dnr/rng.hpp"

namespace dnr::ad {

struct ParamEntry {
  Array2 value;
  Array2 grad;
  // Adam moments, shape-congruent with value.
  Array2 m;
  Array2 v;
};

// Named trainable arrays plus optimizer state. Entries are kept in name
// order, which fixes the checkpoint layout.
class ParamStore {
 public:
  ParamEntry& add(const std::string& name, Array2 init);
  // Xavier-uniform initialisation with the given gain.
  ParamEntry& add_xavier(const std::string& name, std::size_t rows,
                         std::size_t cols, Rng& rng, double gain = 1.0);
  ParamEntry& add_normal(const std::string& name, std::size_t rows,
                         std::size_t cols, double stddev, Rng& rng);
  ParamEntry& add_zeros(const std::string& name, std::size_t rows,
                        std::size_t cols);

  bool contains(const std::string& name) const {
    return entries_.count(name) != 0;
  }
  ParamEntry& at(const std::string& name);
  const ParamEntry& at(const std::string& name) const;
  const Array2& value(const std::string& name) const { return at(name).value; }

  std::map<std::string, ParamEntry>& entries() { return entries_; }
  const std::map<std::string, ParamEntry>& entries() const { return entries_; }

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

  // A frozen store hands out constant leaves: no gradient reaches it.
  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }

  void zero_grad();
  double grad_norm() const;
  // Rescales all gradients so their global L2 norm is at most max_norm.
  // Returns the norm before clipping.
  double clip_grad_norm(double max_norm);
  std::size_t parameter_count() const;

 private:
  std::map<std::string, ParamEntry> entries_;
  std::int64_t step_ = 0;
  bool frozen_ = false;
};

// RAII freeze for the duration of a scope.
class FreezeGuard {
 public:
  explicit FreezeGuard(ParamStore& s) : store_(s), was_(s.frozen()) {
    store_.set_frozen(true);
  }
  ~FreezeGuard() { store_.set_frozen(was_); }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParamStore& store_;
  bool was_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled (AdamW-style): w -= lr * weight_decay * w.
  double weight_decay = 0.0;
};

// One bias-corrected Adam update on every entry, then zero the gradients.
void adam_step(ParamStore& store, const AdamOptions& opt);

// ---- checkpoints -----------------------------------------------------
//
// Layout: "DNRW", u32 version, then for each entry in name order
// u32 name length, UTF-8 name, u32 rows, u32 cols, rows*cols f64. All
// integers and floats little-endian. Optimizer state is not stored.

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize(const ParamStore& store);
ParamStore deserialize(const std::string& bytes);
void save(const ParamStore& store, const std::filesystem::path& path);
ParamStore load(const std::filesystem::path& path);

// FNV-1a 64 of the serialized bytes.
std::uint64_t fingerprint(const ParamStore& store);
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace dnr::ad
