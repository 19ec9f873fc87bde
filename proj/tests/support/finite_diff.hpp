// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

// Central finite-difference oracle for the autodiff tests. Independent of the
// backward rules: it only ever evaluates forward values.

#pragma once

#include "moerec/rng.hpp"
#include "moerec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace moerec::testing {

inline Mat random_matrix(Rng& rng, Index rows, Index cols, double lo = -1.0, double hi = 1.0) {
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

/// |a - b| / max(|a|, |b|, floor).
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

using OpBuilder = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares autodiff gradients of sum(op(inputs) * R), R a fixed random
/// weighting, against central differences for every entry of every input.
/// Returns the worst relative error.
inline double gradient_check(std::vector<Tensor> inputs, const OpBuilder& op, double h = 1e-5,
                             std::uint64_t seed = 99) {
  Mat weighting;
  {
    Tape tape;
    std::vector<Tensor> attached;
    for (const Tensor& t : inputs) attached.push_back(t.on(tape));
    for (Tensor& t : inputs) t.zero_grad();
    Tensor out = op(attached);
    Rng rng(seed);
    weighting = random_matrix(rng, out.rows(), out.cols());
    Tensor loss = sum(mul(out, Tensor::constant(weighting).on(tape)));
    backward(loss);
  }
  auto objective = [&] { return op(inputs).value().cwiseProduct(weighting).sum(); };

  double worst = 0.0;
  for (Tensor& t : inputs) {
    if (!t.requires_grad()) continue;
    const Mat analytic = t.grad();
    Mat& value = t.mutable_value();
    for (Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + h;
      const double up = objective();
      value.data()[i] = saved - h;
      const double down = objective();
      value.data()[i] = saved;
      worst = std::max(worst, relative_error(analytic.data()[i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace moerec::testing
