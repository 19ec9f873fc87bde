// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "moerec/metrics.hpp"

#include "moerec/data.hpp"
#include "moerec/errors.hpp"

#include <algorithm>
#include <cmath>

namespace moerec {

using nlohmann::json;

namespace {

void check_k(int k) {
  if (k < 1) throw ValidationError("K must be >= 1, got " + std::to_string(k));
}

std::size_t depth(const Ranking& ranked, int k) { return std::min(ranked.size(), static_cast<std::size_t>(k)); }

int hits(const RelevantSet& truth, const Ranking& ranked, int k) {
  int n = 0;
  for (std::size_t i = 0; i < depth(ranked, k); ++i) n += truth.count(ranked[i]) ? 1 : 0;
  return n;
}

template <typename PerUser>
double mean_over_users(const GroundTruth& truth, const Rankings& rankings, int k, PerUser per_user) {
  check_k(k);
  static const Ranking empty;
  double total = 0.0;
  int users = 0;
  for (const auto& [user, relevant] : truth) {
    if (relevant.empty()) continue;
    const auto it = rankings.find(user);
    total += per_user(relevant, it == rankings.end() ? empty : it->second, k);
    ++users;
  }
  return users == 0 ? 0.0 : total / users;
}

}  // namespace

double user_precision_at_k(const RelevantSet& truth, const Ranking& ranked, int k) {
  check_k(k);
  return static_cast<double>(hits(truth, ranked, k)) / k;
}

double user_recall_at_k(const RelevantSet& truth, const Ranking& ranked, int k) {
  check_k(k);
  if (truth.empty()) return 0.0;
  return static_cast<double>(hits(truth, ranked, k)) / static_cast<double>(truth.size());
}

double user_ndcg_at_k(const RelevantSet& truth, const Ranking& ranked, int k) {
  check_k(k);
  if (truth.empty()) return 0.0;
  double dcg = 0.0;
  for (std::size_t i = 0; i < depth(ranked, k); ++i)
    if (truth.count(ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  double idcg = 0.0;
  const std::size_t ideal = std::min(truth.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return dcg / idcg;
}

double user_average_precision_at_k(const RelevantSet& truth, const Ranking& ranked, int k) {
  check_k(k);
  if (truth.empty()) return 0.0;
  double sum = 0.0;
  int found = 0;
  for (std::size_t i = 0; i < depth(ranked, k); ++i) {
    if (!truth.count(ranked[i])) continue;
    ++found;
    sum += static_cast<double>(found) / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(std::min(truth.size(), static_cast<std::size_t>(k)));
}

double precision_at_k(const GroundTruth& truth, const Rankings& rankings, int k) {
  return mean_over_users(truth, rankings, k, user_precision_at_k);
}

double recall_at_k(const GroundTruth& truth, const Rankings& rankings, int k) {
  return mean_over_users(truth, rankings, k, user_recall_at_k);
}

double ndcg_at_k(const GroundTruth& truth, const Rankings& rankings, int k) {
  return mean_over_users(truth, rankings, k, user_ndcg_at_k);
}

double map_at_k(const GroundTruth& truth, const Rankings& rankings, int k) {
  return mean_over_users(truth, rankings, k, user_average_precision_at_k);
}

MetricReport evaluate(const GroundTruth& truth, const Rankings& rankings, int k) {
  MetricReport r;
  r.k = k;
  r.precision_at_k = precision_at_k(truth, rankings, k);
  r.recall_at_k = recall_at_k(truth, rankings, k);
  r.ndcg_at_k = ndcg_at_k(truth, rankings, k);
  r.map_at_k = map_at_k(truth, rankings, k);
  r.n_users_evaluated =
      static_cast<int>(std::count_if(truth.begin(), truth.end(), [](const auto& e) { return !e.second.empty(); }));
  return r;
}

void to_json(json& j, const MetricReport& r) {
  j = json{{"precision_at_k", r.precision_at_k},
           {"recall_at_k", r.recall_at_k},
           {"ndcg_at_k", r.ndcg_at_k},
           {"map_at_k", r.map_at_k},
           {"k", r.k},
           {"n_users_evaluated", r.n_users_evaluated}};
}

void from_json(const json& j, MetricReport& r) {
  j.at("precision_at_k").get_to(r.precision_at_k);
  j.at("recall_at_k").get_to(r.recall_at_k);
  j.at("ndcg_at_k").get_to(r.ndcg_at_k);
  j.at("map_at_k").get_to(r.map_at_k);
  j.at("k").get_to(r.k);
  j.at("n_users_evaluated").get_to(r.n_users_evaluated);
}

namespace {

template <typename Out>
Out read_keyed(const std::filesystem::path& path, const char* field) {
  Out out;
  std::size_t line = 0;
  for (const json& row : read_jsonl(path)) {
    ++line;
    try {
      const auto user = row.at("user_id").get<std::string>();
      const auto labels = row.at(field).get<std::vector<int>>();
      if (out.count(user)) throw ValidationError("duplicate user_id " + user);
      out[user] = {labels.begin(), labels.end()};
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ": record " + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

Rankings read_rankings(const std::filesystem::path& path) {
  Rankings out = read_keyed<Rankings>(path, "ranking");
  for (const auto& [user, ranked] : out) {
    std::set<int> seen(ranked.begin(), ranked.end());
    if (seen.size() != ranked.size()) throw ValidationError(path.string() + ": duplicate labels in ranking of " + user);
  }
  return out;
}

GroundTruth read_truth(const std::filesystem::path& path) { return read_keyed<GroundTruth>(path, "relevant"); }

void write_rankings(const std::filesystem::path& path, const Rankings& rankings) {
  std::vector<json> rows;
  for (const auto& [user, ranked] : rankings) rows.push_back({{"user_id", user}, {"ranking", ranked}});
  write_jsonl(path, rows);
}

void write_truth(const std::filesystem::path& path, const GroundTruth& truth) {
  std::vector<json> rows;
  for (const auto& [user, relevant] : truth) rows.push_back({{"user_id", user}, {"relevant", relevant}});
  write_jsonl(path, rows);
}

}  // namespace moerec
