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

// Minimal reverse-mode automatic differentiation over dense row-major 2-D
// arrays of doubles.
//
// A Graph is a tape: every forward op appends a node holding its value and
// the tag of the backward rule to apply. Nodes are appended in topological
// order, so backward() walks the tape once in reverse. Parameter leaves
// link back to their ParamStore entry and receive gradients there.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dnr/error.hpp"

namespace dnr::ad {

class Array2 {
 public:
  Array2() = default;
  Array2(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Array2(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Array2 scalar(double v) { return Array2(1, 1, v); }
  // Single column from a list of values.
  static Array2 column(std::span<const double> values);
  static Array2 row(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row_span(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  bool same_shape(const Array2& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }
  bool all_finite() const;
  void fill(double v);
  std::string shape_string() const;

  friend bool operator==(const Array2&, const Array2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class OpKind {
  kLeaf,
  kParam,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kSigmoid,
  kRelu,
  kTanh,
  kExp,
  kLog,
  kSquare,
  kSoftmaxRows,
  kMean,
  kSum,
  kRowSum,
  kConcatCols,
  kConcatRows,
  kSliceCols,
  kSliceRows,
  kGatherRows,
  kRepeatRows,
  kTranspose,
  kPairwiseSqDist,
  kBce,
};

std::string_view op_name(OpKind kind);

// Inputs to log (and to the log inside bce) are clamped to at least this.
inline constexpr double kLogFloor = 1e-12;
// bce clamps probabilities into [kProbClamp, 1 - kProbClamp].
inline constexpr double kProbClamp = 1e-7;

class Graph;
class ParamStore;
struct ParamEntry;

// Handle to a node on a Graph. Cheap to copy; valid while the graph lives
// and has not been released by backward().
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Array2& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const;  // value of a 1x1 node
  std::size_t id() const { return id_; }
  Graph& graph() const { return *graph_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf that never receives gradient.
  Var constant(Array2 value);
  // Leaf whose gradient is tracked (for grad checks on free inputs).
  Var variable(Array2 value);
  // Leaf bound to a ParamStore entry. If the store is frozen the leaf is a
  // constant and no gradient reaches the store.
  Var param(ParamStore& store, const std::string& name);

  // Constant copy of v's value; cuts the gradient path.
  Var detach(Var v);

  const Array2& value(std::size_t id) const { return nodes_.at(id).value; }
  // Gradient of a node after backward(); only kept for variable() leaves.
  const Array2& grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  bool released() const { return released_; }

  // Reverse sweep from a scalar loss. Parameter gradients are added into
  // their ParamStore (so two forward/backward passes without zero_grad
  // accumulate). Intermediate values are dropped afterwards; only the
  // variable() leaf gradients and the loss value stay readable.
  void backward(Var loss);

  // Internal: used by the op functions.
  struct Node {
    OpKind kind = OpKind::kLeaf;
    Array2 value;
    Array2 grad;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    bool keep_grad = false;
    double scalar = 0.0;
    std::vector<std::size_t> index;
    Array2 aux0;
    Array2 aux1;
    ParamEntry* param = nullptr;
  };
  Var push(Node node);
  const Node& node(std::size_t id) const { return nodes_.at(id); }

 private:
  void backward_node(std::size_t id);
  Array2& ensure_grad(std::size_t id);

  std::vector<Node> nodes_;
  std::unordered_map<const ParamEntry*, std::size_t> param_nodes_;
  bool released_ = false;
};

// ---- forward ops -----------------------------------------------------

Var matmul(Var a, Var b);
// a + b. b may match a's shape, be a 1xC row (broadcast over rows), an Rx1
// column (broadcast over columns), or 1x1.
Var add(Var a, Var b);
Var sub(Var a, Var b);
// Element-wise product with the same broadcasting rules as add.
Var mul(Var a, Var b);
Var scale(Var a, double k);
Var add_scalar(Var a, double k);
Var sigmoid(Var a);
Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var softmax_rows(Var a);
Var mean(Var a);
Var sum(Var a);
Var row_sum(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var concat_rows(std::span<const Var> parts);
Var concat_rows(std::initializer_list<Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var gather_rows(Var table, std::span<const std::size_t> rows);
Var repeat_rows(Var row, std::size_t times);
Var transpose(Var a);
// out(i, j) = ||a_i - b_j||^2 over the rows of a (m x d) and b (k x d).
Var pairwise_sqdist(Var a, Var b);

// Masked mean binary cross-entropy of probabilities `pred` against 0/1
// `labels`: -sum(mask * (z log p + (1 - z) log(1 - p))) / sum(mask), with p
// clamped into [1e-7, 1 - 1e-7]. Throws DataError("empty batch") if the
// mask is all zero.
Var bce_loss(Var pred, const Array2& labels, const Array2& mask);

// Dispatch by tag for the parameterless ops.
Var forward_op(OpKind kind, std::span<const Var> inputs);

// Throws ShapeError naming the op and both shapes.
[[noreturn]] void throw_shape(OpKind kind, const Array2& a, const Array2& b);

}  // namespace dnr::ad
