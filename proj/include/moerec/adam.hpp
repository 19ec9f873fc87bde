// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "moerec/tensor.hpp"

#include <cstdint>
#include <vector>

namespace moerec {

struct AdamHyperparams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment estimates for one parameter.
struct AdamState {
  Mat m;
  Mat v;
  std::int64_t t = 0;
  AdamHyperparams hp;

  AdamState() = default;
  AdamState(Index rows, Index cols, AdamHyperparams hyper = {})
      : m(Mat::Zero(rows, cols)), v(Mat::Zero(rows, cols)), hp(hyper) {}
};

/// One bias-corrected Adam update of `param` in place. The step counter is
/// incremented before the bias corrections are formed.
void adam_step(Mat& param, const Mat& grad, AdamState& state);

/// Adam over a fixed list of parameter tensors.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamHyperparams hp = {});

  /// Applies one update from the accumulated gradients. Parameters that
  /// received no gradient are updated with a zero gradient.
  void step();
  void zero_grad();

  const std::vector<AdamState>& states() const { return states_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
};

}  // namespace moerec
