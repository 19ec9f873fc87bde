// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

// Property checks for top-k gate weights over random logit vectors.

#pragma once

#include "support/finite_diff.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace moerec::testing {

struct GatingResult {
  long vectors = 0;
  long failures = 0;
  std::string first_failure;
};

inline std::vector<int> support_of(const Mat& row) {
  std::vector<int> s;
  for (Index i = 0; i < row.cols(); ++i)
    if (row(0, i) != 0.0) s.push_back(static_cast<int>(i));
  return s;
}

/// For each random logit row: weights are a probability vector with at most
/// k nonzeros; adding a constant leaves them unchanged; a strictly
/// increasing transform keeps the selected set; k = 1 gives a one-hot of the
/// argmax.
inline GatingResult check_gating(long n_vectors, std::uint64_t seed) {
  Rng rng(seed);
  GatingResult r;
  auto fail = [&](const std::string& why) {
    if (r.failures++ == 0) r.first_failure = why;
  };
  for (long v = 0; v < n_vectors; ++v) {
    const Index n = 2 + static_cast<Index>(rng.below(7));
    const Index k = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    const Mat logits = random_matrix(rng, 1, n, -5.0, 5.0);
    ++r.vectors;

    const Mat w = top_k_softmax(Tensor::constant(logits), k).value();
    const auto chosen = support_of(w);
    if ((w.array() < 0.0).any() || std::abs(w.sum() - 1.0) > 1e-12 || static_cast<Index>(chosen.size()) > k)
      fail("not a top-k probability vector");

    const double shift = rng.uniform(-100.0, 100.0);
    const Mat shifted = top_k_softmax(Tensor::constant((logits.array() + shift).matrix()), k).value();
    if ((shifted - w).cwiseAbs().maxCoeff() > 1e-9) fail("shift changed the weights");

    const Mat monotone = logits.unaryExpr([](double x) { return std::exp(0.3 * x) + x * x * x; });
    if (support_of(top_k_softmax(Tensor::constant(monotone), k).value()) != chosen)
      fail("monotone transform changed the selected set");

    const Mat one = top_k_softmax(Tensor::constant(logits), 1).value();
    Index argmax = 0;
    logits.row(0).maxCoeff(&argmax);
    if (one(0, argmax) != 1.0 || one.sum() != 1.0) fail("top-1 is not one-hot on the argmax");
  }
  return r;
}

}  // namespace moerec::testing
