// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lwlm/rng.hpp"

namespace lwlm::nn {

using Matrix = Eigen::MatrixXd;

/// Trainable tensor with its accumulated gradient and Adam state.
struct Parameter {
  Matrix value;
  Matrix grad;
  Matrix adam_m, adam_v;

  Parameter() = default;
  Parameter(int rows, int cols) { resize(rows, cols); }

  void resize(int rows, int cols) {
    value.setZero(rows, cols);
    grad.setZero(rows, cols);
    adam_m.setZero(rows, cols);
    adam_v.setZero(rows, cols);
  }
  void init_gaussian(Rng& rng, double std) {
    for (Eigen::Index j = 0; j < value.cols(); ++j)
      for (Eigen::Index i = 0; i < value.rows(); ++i) value(i, j) = std * rng.gaussian();
  }
  void zero_grad() { grad.setZero(); }
  Eigen::Index count() const { return value.size(); }
};

struct Value {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

/// Define-by-run reverse-mode tape over dense double matrices (scalars are
/// 1x1). Creation order is the topological order; backward() sweeps it in
/// reverse. Leaves bound to a Parameter add their gradient into the
/// parameter, so several tapes can accumulate into one set of weights before
/// an optimizer step.
class Graph {
 public:
  const Matrix& val(Value v) const { return nodes_[v.idx].val; }
  Matrix& grad(Value v) { return ensure_grad(v.idx); }

  Value constant(Matrix m);
  /// Memoized per parameter: repeated calls reuse one node per tape.
  Value leaf(Parameter& p);

  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);  // elementwise
  Value cdiv(Value a, Value b); // elementwise
  Value scale(Value a, double s);
  Value add_scalar(Value a, double s);
  Value matmul(Value a, Value b);
  Value matmul_nt(Value a, Value b);  // a * b^T
  Value add_row_broadcast(Value x, Value row);
  Value div_col_broadcast(Value x, Value col);
  Value softmax_rows(Value x);
  Value logsumexp_rows(Value x);  // column vector
  Value layernorm_rows(Value x, Value gamma, Value beta, double eps = 1e-5);
  Value gelu(Value x);
  Value square(Value x);
  Value sqrt_el(Value x);
  Value abs_el(Value x);
  Value slice_rows(Value x, int r0, int n);
  Value slice_cols(Value x, int c0, int n);
  Value concat_rows(const std::vector<Value>& parts);
  Value concat_cols(const std::vector<Value>& parts);
  Value sum_all(Value x);    // 1x1
  Value mean_rows(Value x);  // row vector, mean over rows
  Value row_sums(Value x);   // column vector
  Value gather(Value x, std::vector<std::pair<int, int>> entries);  // n x 1
  /// Inverted dropout; identity when rate == 0 or rng == nullptr (eval mode).
  Value dropout(Value x, double rate, Rng* rng);
  /// Gather through an index map: out(i, j) = x(map(i, j)) over x's flattened
  /// row-major storage, 0 where map(i, j) < 0. Used for patch unfold.
  Value index_gather(Value x, const Eigen::MatrixXi& map, int out_rows, int out_cols);
  /// Adjoint scatter-add: out accumulates x(i, j) at flat row-major position
  /// map(i, j) of an out_rows x out_cols matrix. Used for patch fold.
  Value index_scatter_add(Value x, const Eigen::MatrixXi& map, int out_rows, int out_cols);

  /// Seeds d(root)/d(root) = seed (ones(1,1) when omitted for scalars) and
  /// runs the reverse sweep, accumulating into bound Parameters.
  void backward(Value root);
  void backward(Value root, const Matrix& seed);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix val;
    Matrix grad;  // empty until touched
    std::function<void(Graph&)> back;
  };

  Matrix& ensure_grad(int idx) {
    Node& n = nodes_[idx];
    if (n.grad.size() == 0) n.grad.setZero(n.val.rows(), n.val.cols());
    return n.grad;
  }
  bool has_grad(int idx) const { return nodes_[idx].grad.size() != 0; }

  Value push(Matrix val, std::function<void(Graph&)> back = nullptr) {
    nodes_.push_back({std::move(val), Matrix(), std::move(back)});
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> leaf_cache_;
};

}  // namespace lwlm::nn
