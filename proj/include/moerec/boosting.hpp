// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

// Multiclass gradient-boosted regression trees: the base learner whose class
// scores are stacked into the gating network.

#pragma once

#include "moerec/kernels.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <vector>

namespace moerec {

struct RegressionTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // rows with x[feature] < threshold go left
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  std::vector<Node> nodes;  // nodes[0] is the root

  template <typename Derived>
  double predict(const Eigen::MatrixBase<Derived>& row) const {
    int at = 0;
    while (nodes[static_cast<std::size_t>(at)].feature >= 0) {
      const Node& n = nodes[static_cast<std::size_t>(at)];
      at = row(n.feature) < n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(at)].value;
  }

  int depth() const;
  bool operator==(const RegressionTree& other) const;
};

struct BoostingParams {
  int rounds = 50;
  int max_depth = 2;
  double shrinkage = 0.1;
  std::uint64_t seed = 0;  // recorded; tree growth is exhaustive and needs no randomness
};

class BoostedEnsemble {
 public:
  BoostedEnsemble() = default;

  int n_classes() const { return static_cast<int>(prior_.size()); }
  int n_rounds() const { return static_cast<int>(trees_.size()); }
  double shrinkage() const { return shrinkage_; }
  const std::vector<double>& prior() const { return prior_; }
  /// trees()[m][c] is round m's tree for class c.
  const std::vector<std::vector<RegressionTree>>& trees() const { return trees_; }

  /// prior + shrinkage * sum of leaf values over the first `rounds` rounds
  /// (all rounds when negative). One row per sample, one column per class.
  Mat raw_scores(const Mat& features, int rounds = -1) const;
  Mat predict_proba(const Mat& features, int rounds = -1) const;
  std::vector<int> predict(const Mat& features, int rounds = -1) const;

  /// Mean multiclass log-loss.
  double log_loss(const Mat& features, std::span<const int> labels, int rounds = -1) const;

  friend BoostedEnsemble boosted_fit(const Mat& features, std::span<const int> labels, int n_classes,
                                     const BoostingParams& params);
  friend void to_json(nlohmann::json& j, const BoostedEnsemble& e);
  friend void from_json(const nlohmann::json& j, BoostedEnsemble& e);

  bool operator==(const BoostedEnsemble& other) const;

 private:
  std::vector<double> prior_;
  std::vector<std::vector<RegressionTree>> trees_;
  double shrinkage_ = 0.1;
};

/// Stagewise multiclass boosting on the softmax objective. Each round fits
/// one depth-limited least-squares tree per class to the negative gradient
/// (one-hot minus predicted probability), leaves holding the mean residual.
/// The prior is the Laplace-smoothed log class frequency. Throws
/// ContractError when fewer than two classes occur in `labels`.
BoostedEnsemble boosted_fit(const Mat& features, std::span<const int> labels, int n_classes,
                            const BoostingParams& params = {});

}  // namespace moerec
