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

#include "dnr/param_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace dnr::ad {

ParamEntry& ParamStore::add(const std::string& name, Array2 init) {
  if (contains(name)) throw Error("duplicate parameter '" + name + "'");
  ParamEntry e;
  e.grad = Array2(init.rows(), init.cols());
  e.m = Array2(init.rows(), init.cols());
  e.v = Array2(init.rows(), init.cols());
  e.value = std::move(init);
  return entries_.emplace(name, std::move(e)).first->second;
}

ParamEntry& ParamStore::add_xavier(const std::string& name, std::size_t rows,
                                   std::size_t cols, Rng& rng, double gain) {
  const double limit =
      gain * std::sqrt(6.0 / static_cast<double>(rows + cols));
  Array2 w(rows, cols);
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = (2.0 * rng.uniform() - 1.0) * limit;
  return add(name, std::move(w));
}

ParamEntry& ParamStore::add_normal(const std::string& name, std::size_t rows,
                                   std::size_t cols, double stddev,
                                   Rng& rng) {
  Array2 w(rows, cols);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = stddev * rng.normal();
  return add(name, std::move(w));
}

ParamEntry& ParamStore::add_zeros(const std::string& name, std::size_t rows,
                                  std::size_t cols) {
  return add(name, Array2(rows, cols));
}

ParamEntry& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("no parameter named '" + name + "'");
  return it->second;
}

const ParamEntry& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("no parameter named '" + name + "'");
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [_, e] : entries_) e.grad.fill(0.0);
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& [_, e] : entries_)
    for (double g : e.grad.data()) s += g * g;
  return std::sqrt(s);
}

double ParamStore::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (norm > max_norm && norm > 0.0) {
    const double k = max_norm / norm;
    for (auto& [_, e] : entries_)
      for (double& g : e.grad.data()) g *= k;
  }
  return norm;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.size();
  return n;
}

void adam_step(ParamStore& store, const AdamOptions& opt) {
  store.set_step(store.step() + 1);
  const double t = static_cast<double>(store.step());
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (auto& [name, e] : store.entries()) {
    if (!e.grad.same_shape(e.value)) e.grad = Array2(e.value.rows(), e.value.cols());
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad[i];
      e.m[i] = opt.beta1 * e.m[i] + (1.0 - opt.beta1) * g;
      e.v[i] = opt.beta2 * e.v[i] + (1.0 - opt.beta2) * g * g;
      const double mhat = e.m[i] / c1;
      const double vhat = e.v[i] / c2;
      e.value[i] -= opt.lr * (mhat / (std::sqrt(vhat) + opt.eps) +
                              opt.weight_decay * e.value[i]);
    }
    if (!e.value.all_finite()) {
      throw NumericError("adam_step produced a non-finite value in '" + name +
                         "'");
    }
    e.grad.fill(0.0);
  }
}

// ---- checkpoints -----------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_f64(std::string& out, double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  bool done() const { return pos_ == s_.size(); }
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) throw DataError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, s_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    double v;
    std::memcpy(&v, s_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string v = s_.substr(pos_, n);
    pos_ += n;
    return v;
  }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize(const ParamStore& store) {
  std::string out = "DNRW";
  put_u32(out, kCheckpointVersion);
  for (const auto& [name, e] : store.entries()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(e.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(e.value.cols()));
    for (double v : e.value.data()) put_f64(out, v);
  }
  return out;
}

ParamStore deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(4) != "DNRW") throw DataError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " +
                    std::to_string(version));
  }
  ParamStore store;
  while (!r.done()) {
    const std::uint32_t len = r.u32();
    std::string name = r.bytes(len);
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    std::vector<double> data(static_cast<std::size_t>(rows) * cols);
    for (double& v : data) v = r.f64();
    store.add(name, Array2(rows, cols, std::move(data)));
  }
  return store;
}

void save(const ParamStore& store, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  const std::string bytes = serialize(store);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ParamStore load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingInputError("missing checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fingerprint(const ParamStore& store) {
  return fnv1a(serialize(store));
}

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace dnr::ad
