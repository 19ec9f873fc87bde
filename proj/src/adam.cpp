// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "moerec/adam.hpp"

#include "moerec/errors.hpp"

#include <cmath>

namespace moerec {

void adam_step(Mat& param, const Mat& grad, AdamState& state) {
  if (grad.rows() != param.rows() || grad.cols() != param.cols())
    throw ShapeError("adam_step: gradient " + to_string({grad.rows(), grad.cols()}) + " vs parameter " +
                     to_string({param.rows(), param.cols()}));
  if (state.m.size() == 0) {
    state.m = Mat::Zero(param.rows(), param.cols());
    state.v = Mat::Zero(param.rows(), param.cols());
  }
  if (state.m.rows() != param.rows() || state.m.cols() != param.cols())
    throw ShapeError("adam_step: state " + to_string({state.m.rows(), state.m.cols()}) + " vs parameter " +
                     to_string({param.rows(), param.cols()}));

  const auto& hp = state.hp;
  ++state.t;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));
  state.m = hp.beta1 * state.m + (1.0 - hp.beta1) * grad;
  state.v = hp.beta2 * state.v + (1.0 - hp.beta2) * grad.cwiseAbs2();
  param.array() -= hp.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + hp.epsilon);
}

Adam::Adam(std::vector<Tensor> params, AdamHyperparams hp) : params_(std::move(params)) {
  states_.reserve(params_.size());
  for (const Tensor& p : params_) states_.emplace_back(p.rows(), p.cols(), hp);
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (p.has_grad())
      adam_step(p.mutable_value(), p.node()->grad, states_[i]);
    else
      adam_step(p.mutable_value(), Mat::Zero(p.rows(), p.cols()), states_[i]);
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace moerec
