// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "moerec/errors.hpp"
#include "moerec/metrics.hpp"
#include "support/metric_oracle.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace moerec {
namespace {

// Item labels: a=0, b=1, c=2, d=3; x, y, z are irrelevant 10, 11, 12.
constexpr int a = 0, b = 1, c = 2, d = 3, x = 10, y = 11, z = 12;

TEST(Precision, Fixtures) {
  EXPECT_NEAR(user_precision_at_k({a, b, c}, {a, x, b, y, z}, 5), 0.4, 1e-6);
  EXPECT_EQ(user_precision_at_k({a, b}, {b, a}, 2), 1.0);
  const GroundTruth truth{{"u1", {a, b, c}}, {"u2", {a, b, c, d}}};
  const Rankings rankings{{"u1", {a, x, b, y, z}}, {"u2", {a, b, c, d, x}}};
  EXPECT_NEAR(precision_at_k(truth, rankings, 5), 0.6, 1e-6);
}

TEST(Precision, ShortListKeepsDenominator) { EXPECT_EQ(user_precision_at_k({a}, {a}, 5), 0.2); }

TEST(Recall, Fixtures) {
  EXPECT_EQ(user_recall_at_k({a}, {x, a}, 5), 1.0);
  EXPECT_NEAR(user_recall_at_k({a, b, c, d}, {a, x, c, y, z}, 5), 0.5, 1e-6);
  EXPECT_EQ(user_recall_at_k({a}, {x, y}, 5), 0.0);
}

TEST(Ndcg, Fixtures) {
  EXPECT_NEAR(user_ndcg_at_k({a, b}, {b, a, x}, 3), 1.0, 1e-12);
  EXPECT_NEAR(user_ndcg_at_k({a}, {x, a}, 2), 0.6309, 1e-4);
  EXPECT_NEAR(user_ndcg_at_k({a}, {x, a}, 2), 1.0 / std::log2(3.0), 1e-12);
  EXPECT_EQ(user_ndcg_at_k({a}, {x, y}, 2), 0.0);
}

TEST(Map, Fixtures) {
  EXPECT_NEAR(user_average_precision_at_k({a, b}, {a, x, b}, 3), 0.8333, 1e-4);
  EXPECT_NEAR(user_average_precision_at_k({a, b}, {a, x, b}, 3), (1.0 + 2.0 / 3.0) / 2.0, 1e-12);
  EXPECT_EQ(user_average_precision_at_k({a, b}, {b, a}, 5), 1.0);
}

TEST(Metrics, KBelowOneRejected) {
  EXPECT_THROW(user_precision_at_k({a}, {a}, 0), ValidationError);
  EXPECT_THROW(user_recall_at_k({a}, {a}, 0), ValidationError);
  EXPECT_THROW(user_ndcg_at_k({a}, {a}, -1), ValidationError);
  EXPECT_THROW(user_average_precision_at_k({a}, {a}, 0), ValidationError);
  EXPECT_THROW(evaluate({}, {}, 0), ValidationError);
}

TEST(Metrics, EmptyTruthExcludedAndMissingRankingCounted) {
  const GroundTruth truth{{"u1", {a}}, {"u2", {}}, {"u3", {b}}};
  const Rankings rankings{{"u1", {a}}};
  const auto r = evaluate(truth, rankings, 1);
  EXPECT_EQ(r.n_users_evaluated, 2);
  EXPECT_EQ(r.precision_at_k, 0.5);
  EXPECT_EQ(r.map_at_k, 0.5);
}

TEST(Metrics, TailBelowKIgnored) {
  const RelevantSet truth{a, b, c};
  for (int k = 1; k <= 3; ++k) {
    EXPECT_EQ(user_ndcg_at_k(truth, {x, a, y}, k), user_ndcg_at_k(truth, {x, a, y, b, c}, k));
    EXPECT_EQ(user_average_precision_at_k(truth, {x, a, y}, k),
              user_average_precision_at_k(truth, {x, a, y, b, c}, k));
  }
}

TEST(Metrics, SwappingRelevantUpwardNeverHurts) {
  const RelevantSet truth{a, b};
  const Ranking before{x, y, a, z, b}, after{x, a, y, z, b};
  EXPECT_GE(user_ndcg_at_k(truth, after, 5), user_ndcg_at_k(truth, before, 5));
  EXPECT_GE(user_average_precision_at_k(truth, after, 5), user_average_precision_at_k(truth, before, 5));
  EXPECT_EQ(user_precision_at_k(truth, after, 5), user_precision_at_k(truth, before, 5));
}

TEST(Metrics, ExhaustiveOracleSixItems) {
  const auto result = testing::compare_with_oracle(6, 7);
  EXPECT_GT(result.cases, 100000);
  EXPECT_EQ(result.mismatches, 0);
}

TEST(Metrics, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path();
  const Rankings rankings{{"u1", {3, 1, 2}}, {"u2", {}}};
  const GroundTruth truth{{"u1", {1}}, {"u2", {0, 4}}};
  write_rankings(dir / "moerec_rank.jsonl", rankings);
  write_truth(dir / "moerec_truth.jsonl", truth);
  EXPECT_EQ(read_rankings(dir / "moerec_rank.jsonl"), rankings);
  EXPECT_EQ(read_truth(dir / "moerec_truth.jsonl"), truth);

  std::ofstream(dir / "moerec_dup.jsonl") << R"({"user_id":"u","ranking":[1,1]})" << "\n";
  EXPECT_THROW(read_rankings(dir / "moerec_dup.jsonl"), ValidationError);
}

}  // namespace
}  // namespace moerec
