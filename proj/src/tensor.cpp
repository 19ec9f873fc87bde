// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "moerec/tensor.hpp"

#include "moerec/errors.hpp"

#include <cmath>
#include <sstream>

namespace moerec {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[" << shape[0] << "x" << shape[1] << "]";
  return os.str();
}

Tensor Tensor::constant(Mat value) {
  auto node = std::make_shared<TensorNode>();
  node->value = std::move(value);
  return Tensor(std::move(node), nullptr);
}

Tensor Tensor::parameter(Mat value) {
  auto node = std::make_shared<TensorNode>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Tensor(std::move(node), nullptr);
}

Tensor Tensor::scalar(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Mat Tensor::grad() const {
  if (!node_->has_grad) return Mat::Zero(rows(), cols());
  return node_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() needs a 1x1 tensor, got " + to_string(shape()));
  return node_->value(0, 0);
}

void Tape::record(std::vector<std::shared_ptr<TensorNode>> inputs, std::shared_ptr<TensorNode> output,
                  BackwardFn backward) {
  if (consumed_) throw ContractError("cannot record onto a tape that has been replayed");
  records_.push_back({std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw ContractError("backward needs a scalar loss, got " + to_string(loss.shape()));
  if (consumed_) throw ContractError("tape has already been replayed");
  consumed_ = true;
  loss.node()->accumulate(Mat::Ones(1, 1));
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (!it->output->has_grad) continue;  // not on a path to the loss
    it->backward();
  }
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw ContractError("backward needs a scalar loss, got " + to_string(loss.shape()));
  if (loss.tape() == nullptr) throw ContractError("loss was not computed on a tape");
  loss.tape()->backward(loss);
}

namespace {

using NodePtr = std::shared_ptr<TensorNode>;

// Wraps an op result. When some input requires a gradient and some input is
// attached to a tape, `tape` is set to that tape and the caller must record.
Tensor emit(Mat value, std::initializer_list<const Tensor*> inputs, Tape*& tape) {
  Tape* found = nullptr;
  bool needs_grad = false;
  for (const Tensor* t : inputs) {
    if (!found && t->tape()) found = t->tape();
    needs_grad = needs_grad || t->requires_grad();
  }
  auto node = std::make_shared<TensorNode>();
  node->value = std::move(value);
  node->requires_grad = found && needs_grad;
  tape = node->requires_grad ? found : nullptr;
  return Tensor(std::move(node), found);
}

Tensor emit_many(Mat value, std::span<const Tensor> inputs, const Tensor* extra, Tape*& tape) {
  Tape* found = nullptr;
  bool needs_grad = false;
  auto visit = [&](const Tensor& t) {
    if (!found && t.tape()) found = t.tape();
    needs_grad = needs_grad || t.requires_grad();
  };
  for (const Tensor& t : inputs) visit(t);
  if (extra) visit(*extra);
  auto node = std::make_shared<TensorNode>();
  node->value = std::move(value);
  node->requires_grad = found && needs_grad;
  tape = node->requires_grad ? found : nullptr;
  return Tensor(std::move(node), found);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " differ");
}

void require_row(const char* op, const Tensor& row, Index cols) {
  if (row.rows() != 1 || row.cols() != cols)
    throw ShapeError(std::string(op) + ": expected [1x" + std::to_string(cols) + "] row, got " +
                     to_string(row.shape()));
}

// y = softmax(x) row-wise; returns dx given dy.
Mat softmax_rows_backward(const Mat& y, const Mat& dy) {
  const Eigen::VectorXd dots = (dy.array() * y.array()).rowwise().sum();
  return (y.array() * (dy.colwise() - dots).array()).matrix();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions differ for " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Tape* tape;
  Tensor out = emit(a.value() * b.value(), {&a, &b}, tape);
  if (tape) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    tape->record({an, bn}, on, [an, bn, on] {
      if (an->requires_grad) an->accumulate(on->grad * bn->value.transpose());
      if (bn->requires_grad) bn->accumulate(an->value.transpose() * on->grad);
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tape* tape;
  Tensor out = emit(a.value() + b.value(), {&a, &b}, tape);
  if (tape) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    tape->record({an, bn}, on, [an, bn, on] {
      if (an->requires_grad) an->accumulate(on->grad);
      if (bn->requires_grad) bn->accumulate(on->grad);
    });
  }
  return out;
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_row("add_row", row, a.cols());
  Tape* tape;
  Mat value = a.value().rowwise() + RowVec(row.value().row(0));
  Tensor out = emit(std::move(value), {&a, &row}, tape);
  if (tape) {
    NodePtr an = a.node(), rn = row.node(), on = out.node();
    tape->record({an, rn}, on, [an, rn, on] {
      if (an->requires_grad) an->accumulate(on->grad);
      if (rn->requires_grad) rn->accumulate(on->grad.colwise().sum());
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tape* tape;
  Tensor out = emit(a.value().cwiseProduct(b.value()), {&a, &b}, tape);
  if (tape) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    tape->record({an, bn}, on, [an, bn, on] {
      if (an->requires_grad) an->accumulate(on->grad.cwiseProduct(bn->value));
      if (bn->requires_grad) bn->accumulate(on->grad.cwiseProduct(an->value));
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tape* tape;
  Tensor out = emit(a.value() * s, {&a}, tape);
  if (tape) {
    NodePtr an = a.node(), on = out.node();
    tape->record({an}, on, [an, on, s] { an->accumulate(on->grad * s); });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tape* tape;
  Tensor out = emit(x.value().cwiseMax(0.0), {&x}, tape);
  if (tape) {
    NodePtr xn = x.node(), on = out.node();
    tape->record({xn}, on, [xn, on] {
      xn->accumulate((xn->value.array() > 0.0).select(on->grad, 0.0));
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tape* tape;
  Tensor out = emit(x.value().unaryExpr([](double v) { return moerec::gelu(v); }), {&x}, tape);
  if (tape) {
    NodePtr xn = x.node(), on = out.node();
    tape->record({xn}, on, [xn, on] {
      xn->accumulate(on->grad.cwiseProduct(xn->value.unaryExpr([](double v) { return gelu_derivative(v); })));
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis != 0 && axis != 1 && axis != -1) throw ContractError("softmax: axis must be 0, 1 or -1");
  const bool by_column = axis == 0;
  Tape* tape;
  Mat value = by_column ? Mat(softmax_rows(x.value().transpose()).transpose()) : softmax_rows(x.value());
  Tensor out = emit(std::move(value), {&x}, tape);
  if (tape) {
    NodePtr xn = x.node(), on = out.node();
    tape->record({xn}, on, [xn, on, by_column] {
      if (by_column)
        xn->accumulate(
            softmax_rows_backward(on->value.transpose(), on->grad.transpose()).transpose());
      else
        xn->accumulate(softmax_rows_backward(on->value, on->grad));
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Index d = x.cols();
  if (d < 2) throw ShapeError("layer_norm: need at least 2 features, got " + to_string(x.shape()));
  require_row("layer_norm gain", gain, d);
  require_row("layer_norm bias", bias, d);
  RowVec inv_std;
  Mat xhat = standardize_rows(x.value(), eps, &inv_std);
  Mat value = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  value.rowwise() += RowVec(bias.value().row(0));
  Tape* tape;
  Tensor out = emit(std::move(value), {&x, &gain, &bias}, tape);
  if (tape) {
    NodePtr xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
    tape->record({xn, gn, bn}, on, [xn, gn, bn, on, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const Mat& dy = on->grad;
      if (gn->requires_grad) gn->accumulate(dy.cwiseProduct(xhat).colwise().sum());
      if (bn->requires_grad) bn->accumulate(dy.colwise().sum());
      if (xn->requires_grad) {
        const auto n = static_cast<double>(xhat.cols());
        const Mat dxhat = (dy.array().rowwise() * gn->value.row(0).array()).matrix();
        const Eigen::VectorXd sum_dxhat = dxhat.rowwise().sum();
        const Eigen::VectorXd sum_dxhat_xhat = dxhat.cwiseProduct(xhat).rowwise().sum();
        Mat dx = (n * dxhat).colwise() - sum_dxhat;
        dx -= (xhat.array().colwise() * sum_dxhat_xhat.array()).matrix();
        dx = (dx.array().colwise() * (inv_std.transpose().array() / n)).matrix();
        xn->accumulate(dx);
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const Index batch = logits.rows(), classes = logits.cols();
  if (static_cast<Index>(labels.size()) != batch)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + to_string(logits.shape()) +
                     " logits");
  if (batch == 0) throw ShapeError("cross_entropy: empty batch");
  for (int label : labels)
    if (label < 0 || label >= classes)
      throw IndexError("cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(classes) +
                       ")");
  const Mat logp = log_softmax_rows(logits.value());
  double total = 0.0;
  for (Index r = 0; r < batch; ++r) total -= logp(r, labels[static_cast<std::size_t>(r)]);
  Mat value(1, 1);
  value(0, 0) = total / static_cast<double>(batch);
  Tape* tape;
  Tensor out = emit(std::move(value), {&logits}, tape);
  if (tape) {
    NodePtr ln = logits.node(), on = out.node();
    std::vector<int> owned(labels.begin(), labels.end());
    tape->record({ln}, on, [ln, on, logp, owned = std::move(owned)] {
      Mat g = logp.array().exp().matrix();
      for (Index r = 0; r < g.rows(); ++r) g(r, owned[static_cast<std::size_t>(r)]) -= 1.0;
      ln->accumulate(g * (on->grad(0, 0) / static_cast<double>(g.rows())));
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  Mat value(1, 1);
  value(0, 0) = x.value().sum();
  Tape* tape;
  Tensor out = emit(std::move(value), {&x}, tape);
  if (tape) {
    NodePtr xn = x.node(), on = out.node();
    tape->record({xn}, on, [xn, on] {
      xn->accumulate(Mat::Constant(xn->value.rows(), xn->value.cols(), on->grad(0, 0)));
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor reshape(const Tensor& x, Index rows, Index cols) {
  if (rows * cols != x.size())
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string({rows, cols}));
  Mat value = Eigen::Map<const Mat>(x.value().data(), rows, cols);
  Tape* tape;
  Tensor out = emit(std::move(value), {&x}, tape);
  if (tape) {
    NodePtr xn = x.node(), on = out.node();
    tape->record({xn}, on, [xn, on] {
      xn->accumulate(Eigen::Map<const Mat>(on->grad.data(), xn->value.rows(), xn->value.cols()));
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != rows)
      throw ShapeError("concat_cols: row counts differ (" + to_string(parts.front().shape()) + " vs " +
                       to_string(p.shape()) + ")");
    cols += p.cols();
  }
  Mat value(rows, cols);
  std::vector<NodePtr> nodes;
  std::vector<Index> offsets;
  Index offset = 0;
  for (const Tensor& p : parts) {
    value.middleCols(offset, p.cols()) = p.value();
    nodes.push_back(p.node());
    offsets.push_back(offset);
    offset += p.cols();
  }
  Tape* tape;
  Tensor out = emit_many(std::move(value), parts, nullptr, tape);
  if (tape) {
    NodePtr on = out.node();
    tape->record(nodes, on, [nodes, offsets, on] {
      for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i]->requires_grad) nodes[i]->accumulate(on->grad.middleCols(offsets[i], nodes[i]->value.cols()));
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols())
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + to_string(x.shape()));
  Tape* tape;
  Tensor out = emit(x.value().middleCols(start, count), {&x}, tape);
  if (tape) {
    NodePtr xn = x.node(), on = out.node();
    tape->record({xn}, on, [xn, on, start, count] {
      xn->accumulate(Mat::Zero(xn->value.rows(), xn->value.cols()));
      xn->grad.middleCols(start, count) += on->grad;
    });
  }
  return out;
}

Tensor top_k_softmax(const Tensor& logits, Index k) {
  if (k < 1 || k > logits.cols())
    throw ContractError("top_k_softmax: k=" + std::to_string(k) + " outside [1, " + std::to_string(logits.cols()) +
                        "]");
  const Mat& x = logits.value();
  Mat value = Mat::Zero(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const auto chosen = top_k_indices(x.row(r), k);
    const double m = x(r, chosen.front());
    double z = 0.0;
    for (Index c : chosen) z += (value(r, c) = std::exp(x(r, c) - m));
    for (Index c : chosen) value(r, c) /= z;
  }
  Tape* tape;
  Tensor out = emit(std::move(value), {&logits}, tape);
  if (tape) {
    NodePtr xn = logits.node(), on = out.node();
    tape->record({xn}, on, [xn, on] { xn->accumulate(softmax_rows_backward(on->value, on->grad)); });
  }
  return out;
}

Tensor mix_rows(std::span<const Tensor> experts, const Tensor& weights) {
  if (experts.empty()) throw ShapeError("mix_rows: no experts");
  const auto n = static_cast<Index>(experts.size());
  if (weights.cols() != n || weights.rows() != experts.front().rows())
    throw ShapeError("mix_rows: weights " + to_string(weights.shape()) + " do not match " + std::to_string(n) +
                     " experts of " + to_string(experts.front().shape()));
  Mat value = Mat::Zero(experts.front().rows(), experts.front().cols());
  std::vector<NodePtr> nodes;
  for (Index e = 0; e < n; ++e) {
    const Tensor& y = experts[static_cast<std::size_t>(e)];
    require_same_shape("mix_rows", experts.front(), y);
    value += weights.value().col(e).asDiagonal() * y.value();
    nodes.push_back(y.node());
  }
  Tape* tape;
  Tensor out = emit_many(std::move(value), experts, &weights, tape);
  if (tape) {
    NodePtr wn = weights.node(), on = out.node();
    auto inputs = nodes;
    inputs.push_back(wn);
    tape->record(std::move(inputs), on, [nodes, wn, on] {
      Mat dw;
      if (wn->requires_grad) dw.resize(wn->value.rows(), wn->value.cols());
      for (std::size_t e = 0; e < nodes.size(); ++e) {
        const auto col = static_cast<Index>(e);
        if (nodes[e]->requires_grad) nodes[e]->accumulate(wn->value.col(col).asDiagonal() * on->grad);
        if (wn->requires_grad) dw.col(col) = on->grad.cwiseProduct(nodes[e]->value).rowwise().sum();
      }
      if (wn->requires_grad) wn->accumulate(dw);
    });
  }
  return out;
}

Tensor self_attention(const Tensor& q, const Tensor& k, const Tensor& v, Index seq_len, Index n_heads) {
  require_same_shape("self_attention", q, k);
  require_same_shape("self_attention", q, v);
  if (seq_len < 1 || q.rows() % seq_len != 0)
    throw ShapeError("self_attention: " + std::to_string(q.rows()) + " rows is not a multiple of seq_len " +
                     std::to_string(seq_len));
  if (n_heads < 1 || q.cols() % n_heads != 0)
    throw ShapeError("self_attention: " + std::to_string(q.cols()) + " columns do not split into " +
                     std::to_string(n_heads) + " heads");
  const Index batch = q.rows() / seq_len;
  const Index head_dim = q.cols() / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  // probs holds one seq_len x seq_len block per (sample, head), stacked by rows.
  Mat probs(batch * n_heads * seq_len, seq_len);
  Mat value(q.rows(), q.cols());
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < n_heads; ++h) {
      const auto qb = q.value().block(b * seq_len, h * head_dim, seq_len, head_dim);
      const auto kb = k.value().block(b * seq_len, h * head_dim, seq_len, head_dim);
      const auto vb = v.value().block(b * seq_len, h * head_dim, seq_len, head_dim);
      auto p = probs.middleRows((b * n_heads + h) * seq_len, seq_len);
      p = softmax_rows(Mat(qb * kb.transpose() * inv_sqrt));
      value.block(b * seq_len, h * head_dim, seq_len, head_dim).noalias() = p * vb;
    }
  }
  Tape* tape;
  Tensor out = emit(std::move(value), {&q, &k, &v}, tape);
  if (tape) {
    NodePtr qn = q.node(), kn = k.node(), vn = v.node(), on = out.node();
    tape->record({qn, kn, vn}, on,
                 [qn, kn, vn, on, probs = std::move(probs), batch, seq_len, n_heads, head_dim, inv_sqrt] {
                   Mat dq = Mat::Zero(qn->value.rows(), qn->value.cols());
                   Mat dk = Mat::Zero(dq.rows(), dq.cols());
                   Mat dv = Mat::Zero(dq.rows(), dq.cols());
                   for (Index b = 0; b < batch; ++b) {
                     for (Index h = 0; h < n_heads; ++h) {
                       const Index r0 = b * seq_len, c0 = h * head_dim;
                       const auto qb = qn->value.block(r0, c0, seq_len, head_dim);
                       const auto kb = kn->value.block(r0, c0, seq_len, head_dim);
                       const auto vb = vn->value.block(r0, c0, seq_len, head_dim);
                       const auto dout = on->grad.block(r0, c0, seq_len, head_dim);
                       const Mat p = probs.middleRows((b * n_heads + h) * seq_len, seq_len);
                       dv.block(r0, c0, seq_len, head_dim).noalias() = p.transpose() * dout;
                       const Mat ds = softmax_rows_backward(p, dout * vb.transpose()) * inv_sqrt;
                       dq.block(r0, c0, seq_len, head_dim).noalias() = ds * kb;
                       dk.block(r0, c0, seq_len, head_dim).noalias() = ds.transpose() * qb;
                     }
                   }
                   if (qn->requires_grad) qn->accumulate(dq);
                   if (kn->requires_grad) kn->accumulate(dk);
                   if (vn->requires_grad) vn->accumulate(dv);
                 });
  }
  return out;
}

namespace {

// Column matrix for one sample: rows are (channel, tap), columns positions.
Mat im2col(const Eigen::Ref<const RowVec>& x, Index in_channels, Index length, Index kernel) {
  const Index pad = (kernel - 1) / 2;
  Mat cols = Mat::Zero(in_channels * kernel, length);
  for (Index c = 0; c < in_channels; ++c)
    for (Index t = 0; t < kernel; ++t) {
      const Index shift = t - pad;
      const Index lo = std::max<Index>(0, -shift), hi = std::min(length, length - shift);
      if (hi > lo) cols.row(c * kernel + t).segment(lo, hi - lo) = x.segment(c * length + lo + shift, hi - lo);
    }
  return cols;
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, Index in_channels, Index kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw ShapeError("conv1d: kernel must be odd, got " + std::to_string(kernel));
  if (in_channels < 1 || x.cols() % in_channels != 0)
    throw ShapeError("conv1d: " + to_string(x.shape()) + " does not split into " + std::to_string(in_channels) +
                     " channels");
  if (weight.cols() != in_channels * kernel)
    throw ShapeError("conv1d: weight " + to_string(weight.shape()) + " does not match " +
                     std::to_string(in_channels) + " channels x kernel " + std::to_string(kernel));
  const Index out_channels = weight.rows();
  require_row("conv1d bias", bias, out_channels);
  const Index length = x.cols() / in_channels;
  const Index batch = x.rows();

  Mat value(batch, out_channels * length);
  for (Index b = 0; b < batch; ++b) {
    Mat y = weight.value() * im2col(x.value().row(b), in_channels, length, kernel);
    y.colwise() += bias.value().row(0).transpose();
    value.row(b) = Eigen::Map<const RowVec>(y.data(), y.size());
  }
  Tape* tape;
  Tensor out = emit(std::move(value), {&x, &weight, &bias}, tape);
  if (tape) {
    NodePtr xn = x.node(), wn = weight.node(), bn = bias.node(), on = out.node();
    tape->record({xn, wn, bn}, on, [xn, wn, bn, on, in_channels, out_channels, length, kernel, batch] {
      const Index pad = (kernel - 1) / 2;
      Mat dw = Mat::Zero(wn->value.rows(), wn->value.cols());
      Mat db = Mat::Zero(1, out_channels);
      Mat dx = Mat::Zero(batch, in_channels * length);
      for (Index b = 0; b < batch; ++b) {
        const Eigen::Map<const Mat> dy(on->grad.row(b).data(), out_channels, length);
        if (wn->requires_grad) dw.noalias() += dy * im2col(xn->value.row(b), in_channels, length, kernel).transpose();
        if (bn->requires_grad) db += dy.rowwise().sum().transpose();
        if (xn->requires_grad) {
          const Mat dcols = wn->value.transpose() * dy;
          for (Index c = 0; c < in_channels; ++c)
            for (Index t = 0; t < kernel; ++t) {
              const Index shift = t - pad;
              const Index lo = std::max<Index>(0, -shift), hi = std::min(length, length - shift);
              if (hi > lo)
                dx.row(b).segment(c * length + lo + shift, hi - lo) += dcols.row(c * kernel + t).segment(lo, hi - lo);
            }
        }
      }
      if (wn->requires_grad) wn->accumulate(dw);
      if (bn->requires_grad) bn->accumulate(db);
      if (xn->requires_grad) xn->accumulate(dx);
    });
  }
  return out;
}

}  // namespace moerec
