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

#include "dnr/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "dnr/param_store.hpp"

namespace dnr::ad {

// ---- Array2 ------------------------------------------------------------

Array2::Array2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("Array2: data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

Array2 Array2::column(std::span<const double> values) {
  return Array2(values.size(), 1, {values.begin(), values.end()});
}

Array2 Array2::row(std::span<const double> values) {
  return Array2(1, values.size(), {values.begin(), values.end()});
}

bool Array2::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double x) { return std::isfinite(x); });
}

void Array2::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Array2::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

// ---- names / errors ----------------------------------------------------

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kParam: return "param";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kRelu: return "relu";
    case OpKind::kTanh: return "tanh";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSquare: return "square";
    case OpKind::kSoftmaxRows: return "softmax_rows";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kRowSum: return "row_sum";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kRepeatRows: return "repeat_rows";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kPairwiseSqDist: return "pairwise_sqdist";
    case OpKind::kBce: return "bce_loss";
  }
  return "unknown";
}

void throw_shape(OpKind kind, const Array2& a, const Array2& b) {
  throw ShapeError(std::string(op_name(kind)) + ": incompatible shapes " +
                   a.shape_string() + " and " + b.shape_string());
}

namespace {

void check_finite(OpKind kind, const Array2& v) {
  if (!v.all_finite()) {
    throw NumericError(std::string(op_name(kind)) +
                       " produced a non-finite value");
  }
}

enum Broadcast : std::size_t { kSame = 0, kRowB = 1, kColB = 2, kScalarB = 3 };

Broadcast broadcast_mode(OpKind kind, const Array2& a, const Array2& b) {
  if (a.same_shape(b)) return kSame;
  if (b.rows() == 1 && b.cols() == a.cols()) return kRowB;
  if (b.cols() == 1 && b.rows() == a.rows()) return kColB;
  if (b.rows() == 1 && b.cols() == 1) return kScalarB;
  throw_shape(kind, a, b);
}

inline double bval(const Array2& b, Broadcast m, std::size_t r,
                   std::size_t c) {
  switch (m) {
    case kSame: return b(r, c);
    case kRowB: return b(0, c);
    case kColB: return b(r, 0);
    case kScalarB: return b(0, 0);
  }
  return 0.0;
}

inline void bacc(Array2& gb, Broadcast m, std::size_t r, std::size_t c,
                 double v) {
  switch (m) {
    case kSame: gb(r, c) += v; break;
    case kRowB: gb(0, c) += v; break;
    case kColB: gb(r, 0) += v; break;
    case kScalarB: gb(0, 0) += v; break;
  }
}

Graph& same_graph(std::span<const Var> vs) {
  if (vs.empty()) throw ShapeError("op with no inputs");
  Graph& g = vs[0].graph();
  for (const Var& v : vs) {
    if (&v.graph() != &g) throw Error("ops across different graphs");
  }
  return g;
}

Var emit(Graph& g, OpKind kind, Array2 value, std::vector<std::size_t> in,
         double scalar = 0.0, std::vector<std::size_t> index = {}) {
  check_finite(kind, value);
  Graph::Node n;
  n.kind = kind;
  n.value = std::move(value);
  n.inputs = std::move(in);
  n.scalar = scalar;
  n.index = std::move(index);
  return g.push(std::move(n));
}

template <typename F>
Var unary(Var a, OpKind kind, F f) {
  const Array2& x = a.value();
  Array2 y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return emit(a.graph(), kind, std::move(y), {a.id()});
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---- Var / Graph -------------------------------------------------------

const Array2& Var::value() const { return graph_->value(id_); }

double Var::scalar() const {
  const Array2& v = value();
  if (v.size() != 1) {
    throw ShapeError("scalar(): node is " + v.shape_string());
  }
  return v[0];
}

Var Graph::push(Node node) {
  if (released_) throw Error("graph already consumed by backward()");
  for (std::size_t in : node.inputs) {
    if (nodes_[in].requires_grad) node.requires_grad = true;
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Array2 value) {
  check_finite(OpKind::kLeaf, value);
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::variable(Array2 value) {
  check_finite(OpKind::kLeaf, value);
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.keep_grad = true;
  return push(std::move(n));
}

Var Graph::param(ParamStore& store, const std::string& name) {
  ParamEntry& e = store.at(name);
  if (store.frozen()) return constant(e.value);
  if (auto it = param_nodes_.find(&e); it != param_nodes_.end()) {
    return Var(this, it->second);
  }
  Node n;
  n.kind = OpKind::kParam;
  n.value = e.value;
  n.requires_grad = true;
  n.param = &e;
  Var v = push(std::move(n));
  param_nodes_.emplace(&e, v.id());
  return v;
}

Var Graph::detach(Var v) { return constant(v.value()); }

const Array2& Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (!n.keep_grad) throw Error("gradient of this node was not retained");
  return n.grad;
}

Array2& Graph::ensure_grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || n.grad.rows() != n.value.rows()) {
    n.grad = Array2(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

void Graph::backward(Var loss) {
  if (released_) throw Error("graph already consumed by backward()");
  if (&loss.graph() != this) throw Error("loss belongs to another graph");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " +
                     loss.value().shape_string());
  }
  for (Node& n : nodes_) n.grad = Array2();
  ensure_grad(loss.id())[0] = 1.0;

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.kind == OpKind::kParam) {
      Array2& pg = n.param->grad;
      if (!pg.same_shape(n.value)) pg = Array2(n.value.rows(), n.value.cols());
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
      continue;
    }
    if (n.kind == OpKind::kLeaf) continue;
    backward_node(id);
  }

  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    Node& n = nodes_[id];
    if (n.keep_grad) continue;
    n.grad = Array2();
    if (id != loss.id()) n.value = Array2();
    n.aux0 = Array2();
    n.aux1 = Array2();
  }
  param_nodes_.clear();
  released_ = true;
}

void Graph::backward_node(std::size_t id) {
  // Copy what we need: ensure_grad may not reallocate nodes_, but keep
  // references short-lived anyway.
  Node& n = nodes_[id];
  const Array2& g = n.grad;
  const Array2& y = n.value;
  auto in_req = [&](std::size_t k) {
    return nodes_[n.inputs[k]].requires_grad;
  };
  auto in_val = [&](std::size_t k) -> const Array2& {
    return nodes_[n.inputs[k]].value;
  };
  auto in_grad = [&](std::size_t k) -> Array2& {
    return ensure_grad(n.inputs[k]);
  };

  switch (n.kind) {
    case OpKind::kLeaf:
    case OpKind::kParam:
      break;

    case OpKind::kMatmul: {
      const Array2& a = in_val(0);
      const Array2& b = in_val(1);
      const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
      if (in_req(0)) {
        Array2& ga = in_grad(0);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            double s = 0.0;
            for (std::size_t j = 0; j < p; ++j) s += g(i, j) * b(kk, j);
            ga(i, kk) += s;
          }
        }
      }
      if (in_req(1)) {
        Array2& gb = in_grad(1);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = a(i, kk);
            if (av == 0.0) continue;
            double* gbr = gb.row_span(kk).data();
            const double* gr = g.row_span(i).data();
            for (std::size_t j = 0; j < p; ++j) gbr[j] += av * gr[j];
          }
        }
      }
      break;
    }

    case OpKind::kAdd:
    case OpKind::kSub: {
      const auto mode = static_cast<Broadcast>(n.index[0]);
      const double sign = n.kind == OpKind::kSub ? -1.0 : 1.0;
      if (in_req(0)) {
        Array2& ga = in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (in_req(1)) {
        Array2& gb = in_grad(1);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c)
            bacc(gb, mode, r, c, sign * g(r, c));
      }
      break;
    }

    case OpKind::kMul: {
      const auto mode = static_cast<Broadcast>(n.index[0]);
      const Array2& a = in_val(0);
      const Array2& b = in_val(1);
      if (in_req(0)) {
        Array2& ga = in_grad(0);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c)
            ga(r, c) += g(r, c) * bval(b, mode, r, c);
      }
      if (in_req(1)) {
        Array2& gb = in_grad(1);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c)
            bacc(gb, mode, r, c, g(r, c) * a(r, c));
      }
      break;
    }

    case OpKind::kScale: {
      Array2& ga = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.scalar * g[i];
      break;
    }
    case OpKind::kAddScalar: {
      Array2& ga = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      break;
    }
    case OpKind::kSigmoid: {
      Array2& ga = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * y[i] * (1.0 - y[i]);
      break;
    }
    case OpKind::kRelu: {
      const Array2& x = in_val(0);
      Array2& ga = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0.0) ga[i] += g[i];
      break;
    }
    case OpKind::kTanh: {
      Array2& ga = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * (1.0 - y[i] * y[i]);
      break;
    }
    case OpKind::kExp: {
      Array2& ga = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      break;
    }
    case OpKind::kLog: {
      const Array2& x = in_val(0);
      Array2& ga = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] >= kLogFloor) ga[i] += g[i] / x[i];
      break;
    }
    case OpKind::kSquare: {
      const Array2& x = in_val(0);
      Array2& ga = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * x[i] * g[i];
      break;
    }
    case OpKind::kSoftmaxRows: {
      Array2& ga = in_grad(0);
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c)
          ga(r, c) += y(r, c) * (g(r, c) - dot);
      }
      break;
    }
    case OpKind::kMean:
    case OpKind::kSum: {
      Array2& ga = in_grad(0);
      const double k = n.kind == OpKind::kMean
                           ? g[0] / static_cast<double>(ga.size())
                           : g[0];
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += k;
      break;
    }
    case OpKind::kRowSum: {
      Array2& ga = in_grad(0);
      for (std::size_t r = 0; r < ga.rows(); ++r)
        for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(r, 0);
      break;
    }
    case OpKind::kConcatCols: {
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t w = in_val(k).cols();
        if (in_req(k)) {
          Array2& gk = in_grad(k);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < w; ++c) gk(r, c) += g(r, off + c);
        }
        off += w;
      }
      break;
    }
    case OpKind::kConcatRows: {
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t h = in_val(k).rows();
        if (in_req(k)) {
          Array2& gk = in_grad(k);
          for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < g.cols(); ++c)
              gk(r, c) += g(off + r, c);
        }
        off += h;
      }
      break;
    }
    case OpKind::kSliceCols: {
      const std::size_t begin = n.index[0];
      Array2& ga = in_grad(0);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga(r, begin + c) += g(r, c);
      break;
    }
    case OpKind::kSliceRows: {
      const std::size_t begin = n.index[0];
      Array2& ga = in_grad(0);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga(begin + r, c) += g(r, c);
      break;
    }
    case OpKind::kGatherRows: {
      Array2& ga = in_grad(0);
      for (std::size_t r = 0; r < n.index.size(); ++r) {
        double* dst = ga.row_span(n.index[r]).data();
        const double* src = g.row_span(r).data();
        for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += src[c];
      }
      break;
    }
    case OpKind::kRepeatRows: {
      Array2& ga = in_grad(0);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga(0, c) += g(r, c);
      break;
    }
    case OpKind::kTranspose: {
      Array2& ga = in_grad(0);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga(c, r) += g(r, c);
      break;
    }
    case OpKind::kPairwiseSqDist: {
      const Array2& a = in_val(0);
      const Array2& b = in_val(1);
      const bool ra = in_req(0), rb = in_req(1);
      Array2* ga = ra ? &in_grad(0) : nullptr;
      Array2* gb = rb ? &in_grad(1) : nullptr;
      for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
          const double gij = 2.0 * g(i, j);
          if (gij == 0.0) continue;
          for (std::size_t k = 0; k < a.cols(); ++k) {
            const double d = gij * (a(i, k) - b(j, k));
            if (ra) (*ga)(i, k) += d;
            if (rb) (*gb)(j, k) -= d;
          }
        }
      }
      break;
    }
    case OpKind::kBce: {
      const Array2& p = in_val(0);
      const Array2& z = n.aux0;
      const Array2& mask = n.aux1;
      const double denom = n.scalar;
      Array2& ga = in_grad(0);
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (mask[i] == 0.0) continue;
        const double pi = p[i];
        if (pi < kProbClamp || pi > 1.0 - kProbClamp) continue;
        const double d = -z[i] / pi + (1.0 - z[i]) / (1.0 - pi);
        ga[i] += g[0] * mask[i] * d / denom;
      }
      break;
    }
  }
}

// ---- forward ops -----------------------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = same_graph(std::array{a, b});
  const Array2& x = a.value();
  const Array2& w = b.value();
  if (x.cols() != w.rows()) throw_shape(OpKind::kMatmul, x, w);
  const std::size_t m = x.rows(), k = x.cols(), p = w.cols();
  Array2 y(m, p);
  for (std::size_t i = 0; i < m; ++i) {
    double* yr = y.row_span(i).data();
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double xv = x(i, kk);
      if (xv == 0.0) continue;
      const double* wr = w.row_span(kk).data();
      for (std::size_t j = 0; j < p; ++j) yr[j] += xv * wr[j];
    }
  }
  return emit(g, OpKind::kMatmul, std::move(y), {a.id(), b.id()});
}

namespace {

template <typename F>
Var binary(Var a, Var b, OpKind kind, F f) {
  Graph& g = same_graph(std::array{a, b});
  const Array2& x = a.value();
  const Array2& w = b.value();
  const Broadcast mode = broadcast_mode(kind, x, w);
  Array2 y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c)
      y(r, c) = f(x(r, c), bval(w, mode, r, c));
  return emit(g, kind, std::move(y), {a.id(), b.id()}, 0.0, {mode});
}

}  // namespace

Var add(Var a, Var b) {
  return binary(a, b, OpKind::kAdd, [](double x, double y) { return x + y; });
}
Var sub(Var a, Var b) {
  return binary(a, b, OpKind::kSub, [](double x, double y) { return x - y; });
}
Var mul(Var a, Var b) {
  return binary(a, b, OpKind::kMul, [](double x, double y) { return x * y; });
}

Var scale(Var a, double k) {
  const Array2& x = a.value();
  Array2 y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = k * x[i];
  return emit(a.graph(), OpKind::kScale, std::move(y), {a.id()}, k);
}

Var add_scalar(Var a, double k) {
  const Array2& x = a.value();
  Array2 y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + k;
  return emit(a.graph(), OpKind::kAddScalar, std::move(y), {a.id()}, k);
}

Var sigmoid(Var a) { return unary(a, OpKind::kSigmoid, stable_sigmoid); }
Var relu(Var a) {
  return unary(a, OpKind::kRelu, [](double x) { return x > 0.0 ? x : 0.0; });
}
Var tanh(Var a) {
  return unary(a, OpKind::kTanh, [](double x) { return std::tanh(x); });
}
Var exp(Var a) {
  return unary(a, OpKind::kExp, [](double x) { return std::exp(x); });
}
Var log(Var a) {
  return unary(a, OpKind::kLog,
               [](double x) { return std::log(std::max(x, kLogFloor)); });
}
Var square(Var a) {
  return unary(a, OpKind::kSquare, [](double x) { return x * x; });
}

Var softmax_rows(Var a) {
  const Array2& x = a.value();
  Array2 y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row_span(r);
    const double mx = *std::max_element(xr.begin(), xr.end());
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      y(r, c) = std::exp(x(r, c) - mx);
      s += y(r, c);
    }
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) /= s;
  }
  return emit(a.graph(), OpKind::kSoftmaxRows, std::move(y), {a.id()});
}

Var mean(Var a) {
  const Array2& x = a.value();
  if (x.empty()) throw ShapeError("mean: empty input");
  double s = 0.0;
  for (double v : x.data()) s += v;
  return emit(a.graph(), OpKind::kMean,
              Array2::scalar(s / static_cast<double>(x.size())), {a.id()});
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return emit(a.graph(), OpKind::kSum, Array2::scalar(s), {a.id()});
}

Var row_sum(Var a) {
  const Array2& x = a.value();
  Array2 y(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row_span(r)) s += v;
    y(r, 0) = s;
  }
  return emit(a.graph(), OpKind::kRowSum, std::move(y), {a.id()});
}

Var concat_cols(std::span<const Var> parts) {
  Graph& g = same_graph(parts);
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != rows)
      throw_shape(OpKind::kConcatCols, parts[0].value(), p.value());
    cols += p.value().cols();
  }
  Array2 y(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Array2& x = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(x.row_span(r).begin(), x.row_span(r).end(),
                y.row_span(r).begin() + static_cast<std::ptrdiff_t>(off));
    off += x.cols();
    ids.push_back(p.id());
  }
  return emit(g, OpKind::kConcatCols, std::move(y), std::move(ids));
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_rows(std::span<const Var> parts) {
  Graph& g = same_graph(parts);
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != cols)
      throw_shape(OpKind::kConcatRows, parts[0].value(), p.value());
    rows += p.value().rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
    ids.push_back(p.id());
  }
  return emit(g, OpKind::kConcatRows, Array2(rows, cols, std::move(data)),
              std::move(ids));
}

Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Array2& x = a.value();
  if (begin + count > x.cols() || count == 0) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", +" +
                     std::to_string(count) + ") out of " + x.shape_string());
  }
  Array2 y(x.rows(), count);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) y(r, c) = x(r, begin + c);
  return emit(a.graph(), OpKind::kSliceCols, std::move(y), {a.id()}, 0.0,
              {begin});
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Array2& x = a.value();
  if (begin + count > x.rows() || count == 0) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", +" +
                     std::to_string(count) + ") out of " + x.shape_string());
  }
  auto d = x.data().subspan(begin * x.cols(), count * x.cols());
  return emit(a.graph(), OpKind::kSliceRows,
              Array2(count, x.cols(), {d.begin(), d.end()}), {a.id()}, 0.0,
              {begin});
}

Var gather_rows(Var table, std::span<const std::size_t> rows) {
  const Array2& t = table.value();
  Array2 y(rows.size(), t.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= t.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[r]) +
                       " out of " + t.shape_string());
    }
    std::copy(t.row_span(rows[r]).begin(), t.row_span(rows[r]).end(),
              y.row_span(r).begin());
  }
  return emit(table.graph(), OpKind::kGatherRows, std::move(y), {table.id()},
              0.0, {rows.begin(), rows.end()});
}

Var repeat_rows(Var row, std::size_t times) {
  const Array2& x = row.value();
  if (x.rows() != 1) {
    throw ShapeError("repeat_rows: expected a single row, got " +
                     x.shape_string());
  }
  Array2 y(times, x.cols());
  for (std::size_t r = 0; r < times; ++r)
    std::copy(x.data().begin(), x.data().end(), y.row_span(r).begin());
  return emit(row.graph(), OpKind::kRepeatRows, std::move(y), {row.id()});
}

Var transpose(Var a) {
  const Array2& x = a.value();
  Array2 y(x.cols(), x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) y(c, r) = x(r, c);
  return emit(a.graph(), OpKind::kTranspose, std::move(y), {a.id()});
}

Var pairwise_sqdist(Var a, Var b) {
  Graph& g = same_graph(std::array{a, b});
  const Array2& x = a.value();
  const Array2& w = b.value();
  if (x.cols() != w.cols()) throw_shape(OpKind::kPairwiseSqDist, x, w);
  Array2 y(x.rows(), w.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < w.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) {
        const double d = x(i, k) - w(j, k);
        s += d * d;
      }
      y(i, j) = s;
    }
  return emit(g, OpKind::kPairwiseSqDist, std::move(y), {a.id(), b.id()});
}

Var bce_loss(Var pred, const Array2& labels, const Array2& mask) {
  const Array2& p = pred.value();
  if (!p.same_shape(labels)) throw_shape(OpKind::kBce, p, labels);
  if (!p.same_shape(mask)) throw_shape(OpKind::kBce, p, mask);
  double denom = 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (mask[i] == 0.0) continue;
    denom += mask[i];
    const double q = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    acc += mask[i] * (labels[i] * std::log(q) +
                      (1.0 - labels[i]) * std::log(1.0 - q));
  }
  if (denom == 0.0) throw DataError("empty batch");
  check_finite(OpKind::kBce, Array2::scalar(acc));
  Graph::Node n;
  n.kind = OpKind::kBce;
  n.value = Array2::scalar(-acc / denom);
  n.inputs = {pred.id()};
  n.scalar = denom;
  n.aux0 = labels;
  n.aux1 = mask;
  return pred.graph().push(std::move(n));
}

Var forward_op(OpKind kind, std::span<const Var> in) {
  auto need = [&](std::size_t k) {
    if (in.size() != k) {
      throw ShapeError(std::string(op_name(kind)) + ": expected " +
                       std::to_string(k) + " inputs, got " +
                       std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::kMatmul: need(2); return matmul(in[0], in[1]);
    case OpKind::kAdd: need(2); return add(in[0], in[1]);
    case OpKind::kSub: need(2); return sub(in[0], in[1]);
    case OpKind::kMul: need(2); return mul(in[0], in[1]);
    case OpKind::kSigmoid: need(1); return sigmoid(in[0]);
    case OpKind::kRelu: need(1); return relu(in[0]);
    case OpKind::kTanh: need(1); return tanh(in[0]);
    case OpKind::kExp: need(1); return exp(in[0]);
    case OpKind::kLog: need(1); return log(in[0]);
    case OpKind::kSquare: need(1); return square(in[0]);
    case OpKind::kSoftmaxRows: need(1); return softmax_rows(in[0]);
    case OpKind::kMean: need(1); return mean(in[0]);
    case OpKind::kSum: need(1); return sum(in[0]);
    case OpKind::kRowSum: need(1); return row_sum(in[0]);
    case OpKind::kTranspose: need(1); return transpose(in[0]);
    case OpKind::kConcatCols: return concat_cols(in);
    case OpKind::kConcatRows: return concat_rows(in);
    case OpKind::kPairwiseSqDist: need(2); return pairwise_sqdist(in[0], in[1]);
    default:
      throw Error(std::string(op_name(kind)) +
                  " needs arguments beyond its inputs; call it directly");
  }
}

}  // namespace dnr::ad
