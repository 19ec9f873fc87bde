// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "moerec/boosting.hpp"
#include "moerec/errors.hpp"
#include "moerec/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

namespace moerec {
namespace {

// Two features; class is the quadrant-ish region, separable by axis-aligned splits.
struct Fixture {
  Mat x;
  std::vector<int> y;
};

Fixture separable() {
  Fixture f;
  f.x.resize(20, 2);
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const int cls = i % 3;
    f.x(i, 0) = cls + rng.uniform(0.1, 0.9);
    f.x(i, 1) = rng.uniform(-1.0, 1.0);
    f.y.push_back(cls);
  }
  return f;
}

TEST(Boosting, ZeroRoundsGivesSmoothedPrior) {
  Mat x = Mat::Zero(6, 1);
  const std::vector<int> y{0, 0, 0, 1, 1, 2};
  const auto model = boosted_fit(x, y, 4, {.rounds = 0});
  EXPECT_EQ(model.n_rounds(), 0);
  const Mat p = model.predict_proba(x);
  // (count + 1) / (n + classes)
  const double expected[] = {4.0 / 10, 3.0 / 10, 2.0 / 10, 1.0 / 10};
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(p(0, c), expected[c], 1e-12);
  for (int r : model.predict(x)) EXPECT_EQ(r, 0);
}

TEST(Boosting, SeparableFixtureIsLearned) {
  const auto f = separable();
  const auto model = boosted_fit(f.x, f.y, 3, {.rounds = 10, .max_depth = 2, .shrinkage = 0.3});
  EXPECT_EQ(model.predict(f.x), f.y);
  for (const auto& round : model.trees())
    for (const auto& tree : round) EXPECT_LE(tree.depth(), 2);
}

TEST(Boosting, OneFeatureTwoClassesWithinTenRounds) {
  Mat x(20, 1);
  std::vector<int> y;
  for (int i = 0; i < 20; ++i) {
    x(i, 0) = 0.37 * i - 2.0;
    y.push_back(i < 9 ? 0 : 1);
  }
  const auto model = boosted_fit(x, y, 2, {.rounds = 10});
  int correct = 0;
  const auto pred = model.predict(x);
  for (int i = 0; i < 20; ++i) correct += pred[std::size_t(i)] == y[std::size_t(i)];
  EXPECT_EQ(correct, 20);
}

TEST(Boosting, AdjacentValuesStillSplit) {
  Mat x(4, 1);
  x << 1.0, 1.0, std::nextafter(1.0, 2.0), std::nextafter(1.0, 2.0);
  const std::vector<int> y{0, 0, 1, 1};
  const auto model = boosted_fit(x, y, 2, {.rounds = 5});
  EXPECT_TRUE(model.predict_proba(x).allFinite());
  EXPECT_EQ(model.predict(x), y);
}

TEST(Boosting, LogLossNonIncreasingOverRounds) {
  const auto f = separable();
  const auto model = boosted_fit(f.x, f.y, 3, {.rounds = 15});
  double previous = model.log_loss(f.x, f.y, 0);
  for (int m = 1; m <= model.n_rounds(); ++m) {
    const double current = model.log_loss(f.x, f.y, m);
    EXPECT_LE(current, previous + 1e-12) << "round " << m;
    previous = current;
  }
}

TEST(Boosting, ProbabilitiesSumToOne) {
  const auto f = separable();
  const Mat p = boosted_fit(f.x, f.y, 5, {.rounds = 5}).predict_proba(f.x);
  for (Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
  EXPECT_EQ(p.cols(), 5);
}

TEST(Boosting, Deterministic) {
  const auto f = separable();
  EXPECT_TRUE(boosted_fit(f.x, f.y, 3, {.rounds = 8}) == boosted_fit(f.x, f.y, 3, {.rounds = 8}));
}

TEST(Boosting, Errors) {
  const auto f = separable();
  const std::vector<int> one_class(20, 1);
  EXPECT_THROW(boosted_fit(f.x, one_class, 3), ContractError);
  EXPECT_THROW(boosted_fit(f.x, std::vector<int>(19, 0), 3), ShapeError);
  std::vector<int> bad = f.y;
  bad[0] = 7;
  EXPECT_THROW(boosted_fit(f.x, bad, 3), IndexError);
}

TEST(Boosting, JsonRoundTrip) {
  const auto f = separable();
  const auto model = boosted_fit(f.x, f.y, 3, {.rounds = 6});
  const nlohmann::json j = model;
  const auto back = j.get<BoostedEnsemble>();
  EXPECT_TRUE(back == model);
  EXPECT_TRUE(back.predict_proba(f.x).isApprox(model.predict_proba(f.x), 0.0));
}

}  // namespace
}  // namespace moerec
