// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

// Dense 2-D tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle to shared storage. Handles that are attached to a
// Tape record every op they take part in, provided at least one input requires
// a gradient. Handles without a tape (parameters, constants, inference inputs)
// compute values only, so the same forward code serves training and inference.

#pragma once

#include "moerec/kernels.hpp"

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace moerec {

using Shape = std::array<Index, 2>;

std::string to_string(const Shape& shape);

struct TensorNode {
  Mat value;
  Mat grad;  // meaningful only while has_grad; storage survives zero_grad
  bool requires_grad = false;
  bool has_grad = false;

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (has_grad) {
      grad.noalias() += g;
    } else {
      grad.noalias() = g;
      has_grad = true;
    }
  }

  void zero_grad() { has_grad = false; }
};

class Tape;

class Tensor {
 public:
  Tensor() = default;

  /// Value without gradient tracking.
  static Tensor constant(Mat value);
  /// Leaf whose gradient is accumulated by backward().
  static Tensor parameter(Mat value);
  static Tensor scalar(double v);

  Tensor(std::shared_ptr<TensorNode> node, Tape* tape) : node_(std::move(node)), tape_(tape) {}

  const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }

  /// Gradient, or a zero matrix of the value's shape when nothing reached it.
  Mat grad() const;
  bool has_grad() const { return node_->has_grad; }
  void zero_grad() { node_->zero_grad(); }

  Shape shape() const { return {rows(), cols()}; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool defined() const { return node_ != nullptr; }

  Tape* tape() const { return tape_; }
  const std::shared_ptr<TensorNode>& node() const { return node_; }

  /// Returns a handle to the same storage that records onto `tape`.
  Tensor on(Tape& tape) const { return Tensor(node_, &tape); }
  /// Handle to a copy of the value with no tape and no gradient.
  Tensor detach() const { return constant(node_->value); }

 private:
  std::shared_ptr<TensorNode> node_;
  Tape* tape_ = nullptr;
};

/// Ordered record of differentiable ops for one forward pass.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records `output` as produced from `inputs`. Ops record as they execute,
  /// so every input precedes the op that consumes it.
  void record(std::vector<std::shared_ptr<TensorNode>> inputs, std::shared_ptr<TensorNode> output,
              BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and replays the records in reverse. Each
  /// record is visited once; a tape can be replayed only once.
  void backward(const Tensor& loss);

  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Record {
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::shared_ptr<TensorNode> output;
    BackwardFn backward;
  };
  std::vector<Record> records_;
  bool consumed_ = false;
};

/// Populates gradients of every requires_grad tensor reachable from `loss`.
void backward(const Tensor& loss);

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
/// Adds a 1 x n row to every row of a.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);

/// Softmax along `axis` (1 or -1: within each row, 0: within each column).
Tensor softmax(const Tensor& x, int axis = -1);

/// Per-row standardization followed by gain and bias (both 1 x d).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Mean over rows of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Row-major reinterpretation; rows * cols must equal x.size().
Tensor reshape(const Tensor& x, Index rows, Index cols);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, Index start, Index count);

/// Softmax over the `k` largest logits of each row, zero elsewhere. The
/// selection is treated as constant when differentiating.
Tensor top_k_softmax(const Tensor& logits, Index k);

/// out.row(b) = sum_e weights(b, e) * experts[e].row(b).
Tensor mix_rows(std::span<const Tensor> experts, const Tensor& weights);

/// Scaled dot-product self-attention. q, k and v are (batch*seq_len) x
/// (n_heads*head_dim); rows of one sample are contiguous and heads occupy
/// contiguous column blocks.
Tensor self_attention(const Tensor& q, const Tensor& k, const Tensor& v, Index seq_len, Index n_heads);

/// Same-length 1-D convolution. x is batch x (in_channels*length), channel
/// major; weight is out_channels x (in_channels*kernel); bias is
/// 1 x out_channels. Kernel must be odd; padding is (kernel - 1) / 2.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, Index in_channels, Index kernel);

}  // namespace moerec
