// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "moerec/boosting.hpp"

#include "moerec/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace moerec {

using nlohmann::json;

int RegressionTree::depth() const {
  std::vector<int> depth(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    if (n.feature < 0) continue;
    depth[static_cast<std::size_t>(n.left)] = depth[i] + 1;
    depth[static_cast<std::size_t>(n.right)] = depth[i] + 1;
    deepest = std::max(deepest, depth[i] + 1);
  }
  return deepest;
}

bool RegressionTree::operator==(const RegressionTree& other) const {
  return std::equal(nodes.begin(), nodes.end(), other.nodes.begin(), other.nodes.end(),
                    [](const Node& a, const Node& b) {
                      return a.feature == b.feature && a.threshold == b.threshold && a.left == b.left &&
                             a.right == b.right && a.value == b.value;
                    });
}

bool BoostedEnsemble::operator==(const BoostedEnsemble& other) const {
  return prior_ == other.prior_ && trees_ == other.trees_ && shrinkage_ == other.shrinkage_;
}

Mat BoostedEnsemble::raw_scores(const Mat& features, int rounds) const {
  const int used = rounds < 0 ? n_rounds() : std::min(rounds, n_rounds());
  Mat scores(features.rows(), n_classes());
  for (Index r = 0; r < features.rows(); ++r) {
    for (int c = 0; c < n_classes(); ++c) {
      double acc = 0.0;
      for (int m = 0; m < used; ++m)
        acc += trees_[static_cast<std::size_t>(m)][static_cast<std::size_t>(c)].predict(features.row(r));
      scores(r, c) = prior_[static_cast<std::size_t>(c)] + shrinkage_ * acc;
    }
  }
  return scores;
}

Mat BoostedEnsemble::predict_proba(const Mat& features, int rounds) const {
  return softmax_rows(raw_scores(features, rounds));
}

std::vector<int> BoostedEnsemble::predict(const Mat& features, int rounds) const {
  const Mat scores = raw_scores(features, rounds);
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Index r = 0; r < scores.rows(); ++r) {
    Index arg = 0;
    scores.row(r).maxCoeff(&arg);
    out[static_cast<std::size_t>(r)] = static_cast<int>(arg);
  }
  return out;
}

double BoostedEnsemble::log_loss(const Mat& features, std::span<const int> labels, int rounds) const {
  const Mat logp = log_softmax_rows(raw_scores(features, rounds));
  double total = 0.0;
  for (Index r = 0; r < logp.rows(); ++r) total -= logp(r, labels[static_cast<std::size_t>(r)]);
  return total / static_cast<double>(logp.rows());
}

namespace {

struct TreeBuilder {
  const Mat& x;
  const std::vector<std::vector<Index>>& sorted;  // per feature, sample order by value
  const Eigen::VectorXd& target;
  int max_depth;
  std::vector<char> member;
  RegressionTree tree;

  int grow(const std::vector<Index>& rows, int depth) {
    double total = 0.0;
    for (Index i : rows) total += target(i);
    const auto n = static_cast<double>(rows.size());
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes.back().value = total / n;
    if (depth >= max_depth || rows.size() < 2) return id;

    for (Index i : rows) member[static_cast<std::size_t>(i)] = 1;
    const double base = total * total / n;
    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    for (Index f = 0; f < x.cols(); ++f) {
      double left_sum = 0.0;
      std::size_t left_n = 0;
      Index prev = -1;
      for (Index i : sorted[static_cast<std::size_t>(f)]) {
        if (!member[static_cast<std::size_t>(i)]) continue;
        if (prev >= 0 && x(i, f) > x(prev, f)) {
          const double right_sum = total - left_sum;
          const auto right_n = static_cast<double>(rows.size() - left_n);
          const double gain =
              left_sum * left_sum / static_cast<double>(left_n) + right_sum * right_sum / right_n - base;
          if (gain > best_gain) {
            best_gain = gain;
            best_feature = static_cast<int>(f);
            best_threshold = 0.5 * (x(prev, f) + x(i, f));
            // adjacent doubles: the midpoint can round down onto the left value
            if (!(best_threshold > x(prev, f))) best_threshold = x(i, f);
          }
        }
        left_sum += target(i);
        ++left_n;
        prev = i;
      }
    }
    for (Index i : rows) member[static_cast<std::size_t>(i)] = 0;
    if (best_feature < 0) return id;

    std::vector<Index> left, right;
    for (Index i : rows) (x(i, best_feature) < best_threshold ? left : right).push_back(i);
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return id;
  }
};

}  // namespace

BoostedEnsemble boosted_fit(const Mat& features, std::span<const int> labels, int n_classes,
                            const BoostingParams& params) {
  const Index n = features.rows();
  if (static_cast<Index>(labels.size()) != n)
    throw ShapeError("boosted_fit: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  if (params.rounds < 0 || params.max_depth < 0 || !(params.shrinkage > 0.0))
    throw ContractError("boosted_fit: invalid parameters");
  std::set<int> present;
  for (int y : labels) {
    if (y < 0 || y >= n_classes)
      throw IndexError("boosted_fit: label " + std::to_string(y) + " outside [0, " + std::to_string(n_classes) + ")");
    present.insert(y);
  }
  if (present.size() < 2) throw ContractError("boosted_fit needs at least two classes in the labels");

  BoostedEnsemble model;
  model.shrinkage_ = params.shrinkage;
  std::vector<double> counts(static_cast<std::size_t>(n_classes), 0.0);
  for (int y : labels) counts[static_cast<std::size_t>(y)] += 1.0;
  for (double c : counts)
    model.prior_.push_back(std::log((c + 1.0) / (static_cast<double>(n) + static_cast<double>(n_classes))));

  std::vector<std::vector<Index>> sorted(static_cast<std::size_t>(features.cols()));
  for (Index f = 0; f < features.cols(); ++f) {
    auto& order = sorted[static_cast<std::size_t>(f)];
    order.resize(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return features(a, f) < features(b, f); });
  }

  Mat scores(n, n_classes);
  for (Index r = 0; r < n; ++r)
    for (int c = 0; c < n_classes; ++c) scores(r, c) = model.prior_[static_cast<std::size_t>(c)];

  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index{0});
  for (int m = 0; m < params.rounds; ++m) {
    const Mat prob = softmax_rows(scores);
    std::vector<RegressionTree> round;
    for (int c = 0; c < n_classes; ++c) {
      Eigen::VectorXd residual = -prob.col(c);
      for (Index r = 0; r < n; ++r)
        if (labels[static_cast<std::size_t>(r)] == c) residual(r) += 1.0;
      TreeBuilder builder{features, sorted, residual, params.max_depth, std::vector<char>(static_cast<std::size_t>(n), 0), {}};
      builder.grow(all, 0);
      round.push_back(std::move(builder.tree));
    }
    for (Index r = 0; r < n; ++r)
      for (int c = 0; c < n_classes; ++c)
        scores(r, c) += params.shrinkage * round[static_cast<std::size_t>(c)].predict(features.row(r));
    model.trees_.push_back(std::move(round));
  }
  return model;
}

void to_json(json& j, const BoostedEnsemble& e) {
  json rounds = json::array();
  for (const auto& round : e.trees_) {
    json trees = json::array();
    for (const auto& tree : round) {
      json nodes = json::array();
      for (const auto& n : tree.nodes)
        nodes.push_back({{"feature", n.feature},
                         {"threshold", n.threshold},
                         {"left", n.left},
                         {"right", n.right},
                         {"value", n.value}});
      trees.push_back(std::move(nodes));
    }
    rounds.push_back(std::move(trees));
  }
  j = json{{"n_classes", e.n_classes()}, {"shrinkage", e.shrinkage_}, {"prior", e.prior_}, {"rounds", rounds}};
}

void from_json(const json& j, BoostedEnsemble& e) {
  e.shrinkage_ = j.at("shrinkage").get<double>();
  e.prior_ = j.at("prior").get<std::vector<double>>();
  e.trees_.clear();
  for (const auto& round : j.at("rounds")) {
    std::vector<RegressionTree> trees;
    for (const auto& nodes : round) {
      RegressionTree tree;
      for (const auto& n : nodes)
        tree.nodes.push_back({n.at("feature").get<int>(), n.at("threshold").get<double>(), n.at("left").get<int>(),
                              n.at("right").get<int>(), n.at("value").get<double>()});
      if (tree.nodes.empty()) throw ValidationError("boost.json: empty tree");
      trees.push_back(std::move(tree));
    }
    if (static_cast<int>(trees.size()) != e.n_classes()) throw ValidationError("boost.json: tree count mismatch");
    e.trees_.push_back(std::move(trees));
  }
}

}  // namespace moerec
