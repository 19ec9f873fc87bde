// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

// Top-K ranking metrics with binary relevance. Users whose relevant set is
// empty are left out of every average.

#pragma once

#include <json.hpp>

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace moerec {

using Ranking = std::vector<int>;  // product labels, best first
using RelevantSet = std::set<int>;

/// Keyed by user_id; iteration order fixes the summation order.
using Rankings = std::map<std::string, Ranking>;
using GroundTruth = std::map<std::string, RelevantSet>;

// Per-user scores. Each throws ValidationError when k < 1.
double user_precision_at_k(const RelevantSet& truth, const Ranking& ranked, int k);
double user_recall_at_k(const RelevantSet& truth, const Ranking& ranked, int k);
/// DCG over the top k with gain rel_i / log2(i + 1), divided by the DCG of
/// min(|truth|, k) hits at the top.
double user_ndcg_at_k(const RelevantSet& truth, const Ranking& ranked, int k);
/// Sum of precision@i at each hit rank i <= k, over min(|truth|, k).
double user_average_precision_at_k(const RelevantSet& truth, const Ranking& ranked, int k);

// Means over users with a nonempty relevant set. A user missing from
// `rankings` counts as an empty ranking.
double precision_at_k(const GroundTruth& truth, const Rankings& rankings, int k);
double recall_at_k(const GroundTruth& truth, const Rankings& rankings, int k);
double ndcg_at_k(const GroundTruth& truth, const Rankings& rankings, int k);
double map_at_k(const GroundTruth& truth, const Rankings& rankings, int k);

struct MetricReport {
  double precision_at_k = 0.0;
  double recall_at_k = 0.0;
  double ndcg_at_k = 0.0;
  double map_at_k = 0.0;
  int k = 5;
  int n_users_evaluated = 0;
};

MetricReport evaluate(const GroundTruth& truth, const Rankings& rankings, int k);

void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);

Rankings read_rankings(const std::filesystem::path& path);
GroundTruth read_truth(const std::filesystem::path& path);
void write_rankings(const std::filesystem::path& path, const Rankings& rankings);
void write_truth(const std::filesystem::path& path, const GroundTruth& truth);

}  // namespace moerec
