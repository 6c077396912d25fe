// Copyright 2026 The promptts Authors
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

// Reverse-mode automatic differentiation over dense row-major matrices of
// doubles. Every value is a 2-D [rows x cols] block; vectors are [1 x n] and
// scalars are [1 x 1]. Graphs are built eagerly while grad mode is enabled
// and released when the last Var referencing them goes out of scope.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace promptts::ag {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // lazily sized to value.size()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents' grads.
  std::function<void(Node&)> backward;

  std::size_t size() const { return value.size(); }
  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(std::size_t rows, std::size_t cols, std::vector<double> value);
  static Var constant(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Var scalar(double v) { return constant(1, 1, std::vector<double>{v}); }
  static Var row(std::vector<double> value);
  /// Leaf that accumulates gradients.
  static Var leaf(std::size_t rows, std::size_t cols, std::vector<double> value,
                  bool requires_grad = true);

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }

  const std::vector<double>& value() const { return node_->value; }
  /// Direct write access; only valid on leaves (parameters, inputs).
  std::vector<double>& mutable_value() { return node_->value; }
  const std::vector<double>& grad() const { return node_->grad; }
  std::vector<double>& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  double item() const;
  double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Backpropagates from a scalar.
  void backward() const;
  /// Same value, no graph history.
  Var detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// ---- elementwise binary (equal shapes) ----
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(const Var& a, double s);
Var operator*(double s, const Var& a);
Var operator+(const Var& a, double s);
Var operator-(const Var& a, double s);

// ---- broadcasting ----
/// x [m x n] + row [1 x n]
Var add_row(const Var& x, const Var& row);
/// x [m x n] * row [1 x n]
Var mul_row(const Var& x, const Var& row);
/// x [m x n] + col [m x 1]
Var add_col(const Var& x, const Var& col);
/// x [m x n] * col [m x 1]
Var mul_col(const Var& x, const Var& col);

// ---- elementwise unary ----
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var abs(const Var& x);
Var square(const Var& x);
Var swish(const Var& x);
/// Exact (erf) GELU.
Var gelu(const Var& x);
/// max(x, lo); gradient is zero where clamped.
Var clamp_min(const Var& x, double lo);

// ---- reductions ----
Var sum(const Var& x);
Var mean(const Var& x);
/// Column-wise sum over rows: [m x n] -> [1 x n].
Var sum_rows(const Var& x);
/// Row-wise sum over columns: [m x n] -> [m x 1].
Var sum_cols(const Var& x);
/// Row-wise: [m x n] -> [m x n].
Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);
/// Row-wise stabilized log-sum-exp: [m x n] -> [m x 1].
Var logsumexp_rows(const Var& x);
/// Row-wise unit L2 normalization.
Var l2_normalize_rows(const Var& x, double eps = 1e-12);

// ---- structure ----
Var slice_rows(const Var& x, std::size_t start, std::size_t count);
Var slice_cols(const Var& x, std::size_t start, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var reshape(const Var& x, std::size_t rows, std::size_t cols);
/// Repeats row i of x counts[i] times, preserving order.
Var repeat_rows(const Var& x, std::span<const std::size_t> counts);
/// Looks up rows of table by index.
Var gather_rows(const Var& table, std::span<const std::size_t> ids);

// ---- convolution helpers ----
/// Sequence im2col with "same" zero padding: x [T x C] -> [T x kernel*C],
/// column block k holds x[t + (k - kernel/2) * dilation]. kernel must be odd.
Var im2col_1d(const Var& x, std::size_t kernel, std::size_t dilation);
/// Channels-last image im2col: x [(H*W) x C] -> [(Ho*Wo) x (kernel*kernel*C)],
/// Ho = (H + 2*pad - kernel)/stride + 1 (same for W).
Var im2col_2d(const Var& x, std::size_t height, std::size_t width, std::size_t kernel,
              std::size_t stride, std::size_t pad);
/// Depthwise "same" convolution: x [T x C], weight [kernel x C] -> [T x C].
Var depthwise_conv1d(const Var& x, const Var& weight);
/// Row-wise layer normalization with affine gamma/beta [1 x n].
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// ---- mixture density ----
/// Per-row negative log-likelihood of diagonal Gaussian mixtures.
///
/// logits [N x K], means [N x K*D], log_scales [N x K*D], targets [N x D],
/// component k of row n uses columns [k*D, (k+1)*D). Returns [N x 1] with
///   -log sum_k softmax(logits)_k * N(target; mean_k, diag(exp(log_scale_k))^2)
/// evaluated with log-sum-exp stabilization.
Var gmm_nll_rows(const Var& logits, const Var& means, const Var& log_scales,
                 const Var& targets);

// ---- graph utilities ----
/// Number of graph nodes reachable from root (diagnostics).
std::size_t graph_size(const Var& root);

}  // namespace promptts::ag
