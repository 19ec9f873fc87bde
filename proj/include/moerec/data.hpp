// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

// Dataset schema and preprocessing: merge with the image index, default
// filling, label assignment and the seeded train/test split.

#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace moerec {

enum class Gender { female, male, other, unknown };
enum class Category { food, fruit, recommendation };

inline constexpr int kNumGenders = 4;
inline constexpr int kNumEducationLevels = 6;
inline constexpr int kNumCategories = 3;
inline constexpr const char* kUnknownProduct = "unknown product";

std::string to_string(Gender g);
std::string to_string(Category c);
Gender parse_gender(const std::string& s);
Category parse_category(const std::string& s);

struct UserRecord {
  std::string user_id;
  std::string query_date;  // YYYY-MM-DD
  Gender gender = Gender::unknown;
  std::optional<int> age;
  int education = 0;  // ordinal 0..5
  std::optional<double> weight;
  std::string self_description;
  std::optional<std::string> image_ref;

  bool operator==(const UserRecord&) const = default;
};

struct ProductRecord {
  std::string product_id;
  std::string description;  // empty means missing
  Category category = Category::food;
  std::optional<std::string> image_ref;
  std::optional<int> label;

  bool operator==(const ProductRecord&) const = default;
};

struct Interaction {
  std::string user_id;
  std::string product_id;
  int relevance = 1;  // binary

  bool operator==(const Interaction&) const = default;
};

struct ImageIndexEntry {
  enum class Kind { user, product };
  Kind kind = Kind::product;
  std::string entity_id;
  std::string image_ref;
};

/// Month of an ISO-8601 date, 1..12. Throws ValidationError when malformed.
int query_month(const std::string& iso_date);

void validate(const UserRecord& u);
void validate(const ProductRecord& p);
void validate(const Interaction& i);

void to_json(nlohmann::json& j, const UserRecord& u);
void from_json(const nlohmann::json& j, UserRecord& u);
void to_json(nlohmann::json& j, const ProductRecord& p);
void from_json(const nlohmann::json& j, ProductRecord& p);
void to_json(nlohmann::json& j, const Interaction& i);
void from_json(const nlohmann::json& j, Interaction& i);
void to_json(nlohmann::json& j, const ImageIndexEntry& e);
void from_json(const nlohmann::json& j, ImageIndexEntry& e);

// ---- JSON Lines --------------------------------------------------------------

/// Parses every non-blank line; errors name the file and 1-based line.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);

std::vector<UserRecord> read_users(const std::filesystem::path& path);
std::vector<ProductRecord> read_products(const std::filesystem::path& path);
std::vector<Interaction> read_interactions(const std::filesystem::path& path);
std::vector<ImageIndexEntry> read_image_index(const std::filesystem::path& path);

template <typename T>
std::vector<nlohmann::json> to_json_rows(const std::vector<T>& items) {
  std::vector<nlohmann::json> rows;
  rows.reserve(items.size());
  for (const T& item : items) rows.emplace_back(item);
  return rows;
}

// ---- preprocessing -----------------------------------------------------------

struct MergeReport {
  std::vector<std::string> dropped_products;  // no image index entry
  std::size_t dropped_interactions = 0;       // referenced a dropped product
};

struct MergedDataset {
  std::vector<UserRecord> users;        // sorted by user_id
  std::vector<ProductRecord> products;  // sorted by product_id
  std::vector<Interaction> interactions;  // sorted by (user_id, product_id)
  MergeReport report;
};

/// Joins products and users with their image refs and resolves interactions.
/// Products without an image index entry are dropped along with the
/// interactions that reference them.
MergedDataset merge_datasets(std::vector<UserRecord> users, std::vector<ProductRecord> products,
                             std::vector<Interaction> interactions, const std::vector<ImageIndexEntry>& image_index);

struct NumericMedians {
  std::optional<double> age;
  std::optional<double> weight;
};

/// Medians of age and weight over the given users, ignoring missing values.
NumericMedians compute_medians(const std::vector<UserRecord>& users);

std::vector<ProductRecord> fill_missing(std::vector<ProductRecord> products);
std::vector<UserRecord> fill_missing(std::vector<UserRecord> users, const NumericMedians& medians);

/// Labels 0..n-1 in lexicographic product_id order. Returns products in that
/// order with `label` set.
std::vector<ProductRecord> map_labels(std::vector<ProductRecord> products);

struct SplitDataset {
  std::vector<Interaction> train;
  std::vector<Interaction> test;
  std::vector<std::size_t> train_indices;  // positions in the input
  std::vector<std::size_t> test_indices;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
};

/// Seeded Fisher-Yates shuffle followed by a prefix split of
/// round(fraction * N) rows, clamped so both partitions are nonempty.
SplitDataset split(const std::vector<Interaction>& interactions, std::uint64_t seed, double fraction = 0.8);

/// Train-set min/max used to scale numeric user features.
struct NormStats {
  double age_min = 0, age_max = 0;
  double weight_min = 0, weight_max = 0;
};

NormStats compute_norm_stats(const std::vector<UserRecord>& users);

struct PipelineManifest {
  std::string fill_text = kUnknownProduct;
  NumericMedians medians;
  NormStats norm_stats;
  std::vector<std::string> label_map;  // label -> product_id
  std::uint64_t split_seed = 0;
  double train_fraction = 0.8;
  std::string image_root;
  std::vector<std::string> dropped_products;
  std::size_t dropped_interactions = 0;
};

void to_json(nlohmann::json& j, const PipelineManifest& m);
void from_json(const nlohmann::json& j, PipelineManifest& m);

/// Fully preprocessed dataset, the input to encoding and training.
struct PreparedDataset {
  std::vector<UserRecord> users;
  std::vector<ProductRecord> products;  // labelled, sorted by label
  std::vector<Interaction> interactions;
  SplitDataset split;
  PipelineManifest manifest;

  const ProductRecord& product(const std::string& product_id) const;
  const UserRecord& user(const std::string& user_id) const;
};

/// merge -> label -> split -> medians/norm stats over training users -> fill.
PreparedDataset preprocess(std::vector<UserRecord> users, std::vector<ProductRecord> products,
                           std::vector<Interaction> interactions, const std::vector<ImageIndexEntry>& image_index,
                           std::uint64_t split_seed, double train_fraction = 0.8);

/// Writes users/products/interactions JSONL plus split.json and manifest.json.
void write_prepared(const PreparedDataset& data, const std::filesystem::path& dir);
PreparedDataset read_prepared(const std::filesystem::path& dir);

}  // namespace moerec
