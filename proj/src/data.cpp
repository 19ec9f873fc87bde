// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "moerec/data.hpp"

#include "moerec/errors.hpp"
#include "moerec/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace moerec {

using nlohmann::json;

std::string to_string(Gender g) {
  switch (g) {
    case Gender::female: return "female";
    case Gender::male: return "male";
    case Gender::other: return "other";
    case Gender::unknown: return "unknown";
  }
  return "unknown";
}

std::string to_string(Category c) {
  switch (c) {
    case Category::food: return "food";
    case Category::fruit: return "fruit";
    case Category::recommendation: return "recommendation";
  }
  return "food";
}

Gender parse_gender(const std::string& s) {
  if (s == "female") return Gender::female;
  if (s == "male") return Gender::male;
  if (s == "other") return Gender::other;
  if (s == "unknown") return Gender::unknown;
  throw ValidationError("unknown gender '" + s + "'");
}

Category parse_category(const std::string& s) {
  if (s == "food") return Category::food;
  if (s == "fruit") return Category::fruit;
  if (s == "recommendation") return Category::recommendation;
  throw ValidationError("unknown category '" + s + "'");
}

int query_month(const std::string& d) {
  auto digits = [&](std::size_t from, std::size_t n) {
    for (std::size_t i = from; i < from + n; ++i)
      if (!std::isdigit(static_cast<unsigned char>(d[i]))) return false;
    return true;
  };
  if (d.size() != 10 || d[4] != '-' || d[7] != '-' || !digits(0, 4) || !digits(5, 2) || !digits(8, 2))
    throw ValidationError("query_date '" + d + "' is not YYYY-MM-DD");
  const int month = std::stoi(d.substr(5, 2));
  const int day = std::stoi(d.substr(8, 2));
  if (month < 1 || month > 12 || day < 1 || day > 31) throw ValidationError("query_date '" + d + "' out of range");
  return month;
}

void validate(const UserRecord& u) {
  if (u.user_id.empty()) throw ValidationError("user_id is empty");
  query_month(u.query_date);
  if (u.age && (*u.age < 0 || *u.age > 150))
    throw ValidationError("user " + u.user_id + ": age " + std::to_string(*u.age) + " outside [0, 150]");
  if (u.education < 0 || u.education >= kNumEducationLevels)
    throw ValidationError("user " + u.user_id + ": education " + std::to_string(u.education) + " outside [0, 5]");
  if (u.weight && !(*u.weight > 0.0 && *u.weight < 500.0))
    throw ValidationError("user " + u.user_id + ": weight outside (0, 500)");
}

void validate(const ProductRecord& p) {
  if (p.product_id.empty()) throw ValidationError("product_id is empty");
  if (p.label && *p.label < 0) throw ValidationError("product " + p.product_id + ": negative label");
}

void validate(const Interaction& i) {
  if (i.user_id.empty() || i.product_id.empty()) throw ValidationError("interaction with empty id");
  if (i.relevance != 0 && i.relevance != 1)
    throw ValidationError("interaction " + i.user_id + "/" + i.product_id + ": relevance must be 0 or 1");
}

namespace {

template <typename T>
std::optional<T> optional_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

template <typename T>
void put_optional(json& j, const char* key, const std::optional<T>& v) {
  if (v)
    j[key] = *v;
  else
    j[key] = nullptr;
}

}  // namespace

void to_json(json& j, const UserRecord& u) {
  j = json{{"user_id", u.user_id},
           {"query_date", u.query_date},
           {"gender", to_string(u.gender)},
           {"education", u.education},
           {"self_description", u.self_description}};
  put_optional(j, "age", u.age);
  put_optional(j, "weight", u.weight);
  if (u.image_ref) j["image_ref"] = *u.image_ref;
}

void from_json(const json& j, UserRecord& u) {
  u.user_id = j.at("user_id").get<std::string>();
  u.query_date = j.at("query_date").get<std::string>();
  u.gender = parse_gender(j.value("gender", std::string("unknown")));
  u.age = optional_field<int>(j, "age");
  u.education = j.value("education", 0);
  u.weight = optional_field<double>(j, "weight");
  u.self_description = optional_field<std::string>(j, "self_description").value_or("");
  u.image_ref = optional_field<std::string>(j, "image_ref");
}

void to_json(json& j, const ProductRecord& p) {
  j = json{{"product_id", p.product_id}, {"description", p.description}, {"category", to_string(p.category)}};
  if (p.image_ref) j["image_ref"] = *p.image_ref;
  if (p.label) j["label"] = *p.label;
}

void from_json(const json& j, ProductRecord& p) {
  p.product_id = j.at("product_id").get<std::string>();
  p.description = optional_field<std::string>(j, "description").value_or("");
  p.category = parse_category(j.at("category").get<std::string>());
  p.image_ref = optional_field<std::string>(j, "image_ref");
  p.label = optional_field<int>(j, "label");
}

void to_json(json& j, const Interaction& i) {
  j = json{{"user_id", i.user_id}, {"product_id", i.product_id}, {"relevance", i.relevance}};
}

void from_json(const json& j, Interaction& i) {
  i.user_id = j.at("user_id").get<std::string>();
  i.product_id = j.at("product_id").get<std::string>();
  i.relevance = j.value("relevance", 1);
}

void to_json(json& j, const ImageIndexEntry& e) {
  j = json{{e.kind == ImageIndexEntry::Kind::user ? "user_id" : "product_id", e.entity_id},
           {"image_ref", e.image_ref}};
}

void from_json(const json& j, ImageIndexEntry& e) {
  if (j.contains("product_id")) {
    e.kind = ImageIndexEntry::Kind::product;
    e.entity_id = j.at("product_id").get<std::string>();
  } else if (j.contains("user_id")) {
    e.kind = ImageIndexEntry::Kind::user;
    e.entity_id = j.at("user_id").get<std::string>();
  } else {
    throw ValidationError("image index entry needs product_id or user_id");
  }
  e.image_ref = j.at("image_ref").get<std::string>();
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const json& row : rows) out << row.dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

template <typename T>
std::vector<T> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    try {
      T record = json::parse(line).get<T>();
      if constexpr (!std::is_same_v<T, ImageIndexEntry>) validate(record);
      out.push_back(std::move(record));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

}  // namespace

std::vector<UserRecord> read_users(const std::filesystem::path& path) { return read_records<UserRecord>(path); }
std::vector<ProductRecord> read_products(const std::filesystem::path& path) {
  return read_records<ProductRecord>(path);
}
std::vector<Interaction> read_interactions(const std::filesystem::path& path) {
  return read_records<Interaction>(path);
}
std::vector<ImageIndexEntry> read_image_index(const std::filesystem::path& path) {
  return read_records<ImageIndexEntry>(path);
}

MergedDataset merge_datasets(std::vector<UserRecord> users, std::vector<ProductRecord> products,
                             std::vector<Interaction> interactions, const std::vector<ImageIndexEntry>& image_index) {
  std::set<std::string> user_ids, product_ids, duplicates;
  for (const auto& u : users) {
    validate(u);
    if (!user_ids.insert(u.user_id).second) duplicates.insert("user " + u.user_id);
  }
  for (const auto& p : products) {
    validate(p);
    if (!product_ids.insert(p.product_id).second) duplicates.insert("product " + p.product_id);
  }
  if (!duplicates.empty())
    throw ValidationError("duplicate ids: " + join({duplicates.begin(), duplicates.end()}));

  std::set<std::string> unknown;
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& i : interactions) {
    validate(i);
    if (!user_ids.count(i.user_id)) unknown.insert("user_id " + i.user_id);
    if (!product_ids.count(i.product_id)) unknown.insert("product_id " + i.product_id);
    if (!pairs.emplace(i.user_id, i.product_id).second)
      duplicates.insert("(" + i.user_id + ", " + i.product_id + ")");
  }
  if (!unknown.empty())
    throw ValidationError("interactions reference unknown ids: " + join({unknown.begin(), unknown.end()}));
  if (!duplicates.empty())
    throw ValidationError("duplicate interactions: " + join({duplicates.begin(), duplicates.end()}));

  std::unordered_map<std::string, std::string> product_images, user_images;
  for (const auto& e : image_index)
    (e.kind == ImageIndexEntry::Kind::product ? product_images : user_images)[e.entity_id] = e.image_ref;

  MergedDataset out;
  std::unordered_set<std::string> kept;
  for (auto& p : products) {
    auto it = product_images.find(p.product_id);
    if (it == product_images.end()) {
      out.report.dropped_products.push_back(p.product_id);
      continue;
    }
    p.image_ref = it->second;
    kept.insert(p.product_id);
    out.products.push_back(std::move(p));
  }
  for (auto& u : users) {
    if (auto it = user_images.find(u.user_id); it != user_images.end()) u.image_ref = it->second;
    out.users.push_back(std::move(u));
  }
  for (auto& i : interactions) {
    if (!kept.count(i.product_id)) {
      ++out.report.dropped_interactions;
      continue;
    }
    out.interactions.push_back(std::move(i));
  }

  std::sort(out.users.begin(), out.users.end(), [](const auto& a, const auto& b) { return a.user_id < b.user_id; });
  std::sort(out.products.begin(), out.products.end(),
            [](const auto& a, const auto& b) { return a.product_id < b.product_id; });
  std::sort(out.interactions.begin(), out.interactions.end(), [](const auto& a, const auto& b) {
    return std::tie(a.user_id, a.product_id) < std::tie(b.user_id, b.product_id);
  });
  std::sort(out.report.dropped_products.begin(), out.report.dropped_products.end());
  return out;
}

namespace {

std::optional<double> median(std::vector<double> values) {
  if (values.empty()) return std::nullopt;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

NumericMedians compute_medians(const std::vector<UserRecord>& users) {
  std::vector<double> ages, weights;
  for (const auto& u : users) {
    if (u.age) ages.push_back(*u.age);
    if (u.weight) weights.push_back(*u.weight);
  }
  return {median(std::move(ages)), median(std::move(weights))};
}

std::vector<ProductRecord> fill_missing(std::vector<ProductRecord> products) {
  for (auto& p : products)
    if (p.description.empty()) p.description = kUnknownProduct;
  return products;
}

std::vector<UserRecord> fill_missing(std::vector<UserRecord> users, const NumericMedians& medians) {
  for (auto& u : users) {
    if (!u.age && medians.age) u.age = static_cast<int>(std::lround(*medians.age));
    if (!u.weight && medians.weight) u.weight = *medians.weight;
  }
  return users;
}

std::vector<ProductRecord> map_labels(std::vector<ProductRecord> products) {
  std::sort(products.begin(), products.end(),
            [](const auto& a, const auto& b) { return a.product_id < b.product_id; });
  for (std::size_t i = 1; i < products.size(); ++i)
    if (products[i].product_id == products[i - 1].product_id)
      throw ValidationError("duplicate product_id " + products[i].product_id);
  for (std::size_t i = 0; i < products.size(); ++i) products[i].label = static_cast<int>(i);
  return products;
}

SplitDataset split(const std::vector<Interaction>& interactions, std::uint64_t seed, double fraction) {
  const std::size_t n = interactions.size();
  if (n < 2) throw ValidationError("split needs at least 2 interactions, got " + std::to_string(n));
  if (!(fraction > 0.0 && fraction < 1.0)) throw ContractError("train fraction must lie in (0, 1)");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  const auto n_train = static_cast<std::size_t>(
      std::clamp<long>(std::lround(fraction * static_cast<double>(n)), 1, static_cast<long>(n) - 1));
  SplitDataset out;
  out.seed = seed;
  out.train_fraction = fraction;
  out.train_indices.assign(order.begin(), order.begin() + static_cast<long>(n_train));
  out.test_indices.assign(order.begin() + static_cast<long>(n_train), order.end());
  std::sort(out.train_indices.begin(), out.train_indices.end());
  std::sort(out.test_indices.begin(), out.test_indices.end());
  for (auto i : out.train_indices) out.train.push_back(interactions[i]);
  for (auto i : out.test_indices) out.test.push_back(interactions[i]);
  return out;
}

NormStats compute_norm_stats(const std::vector<UserRecord>& users) {
  NormStats s;
  bool have_age = false, have_weight = false;
  for (const auto& u : users) {
    if (u.age) {
      const double a = *u.age;
      s.age_min = have_age ? std::min(s.age_min, a) : a;
      s.age_max = have_age ? std::max(s.age_max, a) : a;
      have_age = true;
    }
    if (u.weight) {
      s.weight_min = have_weight ? std::min(s.weight_min, *u.weight) : *u.weight;
      s.weight_max = have_weight ? std::max(s.weight_max, *u.weight) : *u.weight;
      have_weight = true;
    }
  }
  return s;
}

void to_json(json& j, const PipelineManifest& m) {
  json fill{{"description", m.fill_text}};
  put_optional(fill, "age", m.medians.age);
  put_optional(fill, "weight", m.medians.weight);
  j = json{{"fill_defaults", fill},
           {"norm_stats",
            {{"age_min", m.norm_stats.age_min},
             {"age_max", m.norm_stats.age_max},
             {"weight_min", m.norm_stats.weight_min},
             {"weight_max", m.norm_stats.weight_max}}},
           {"label_map", m.label_map},
           {"split", {{"seed", m.split_seed}, {"train_fraction", m.train_fraction}}},
           {"image_root", m.image_root},
           {"merge_report",
            {{"dropped_products", m.dropped_products}, {"dropped_interactions", m.dropped_interactions}}}};
}

void from_json(const json& j, PipelineManifest& m) {
  const json& fill = j.at("fill_defaults");
  m.fill_text = fill.at("description").get<std::string>();
  m.medians.age = optional_field<double>(fill, "age");
  m.medians.weight = optional_field<double>(fill, "weight");
  const json& ns = j.at("norm_stats");
  m.norm_stats = {ns.at("age_min").get<double>(), ns.at("age_max").get<double>(), ns.at("weight_min").get<double>(),
                  ns.at("weight_max").get<double>()};
  m.label_map = j.at("label_map").get<std::vector<std::string>>();
  m.split_seed = j.at("split").at("seed").get<std::uint64_t>();
  m.train_fraction = j.at("split").at("train_fraction").get<double>();
  m.image_root = j.value("image_root", std::string());
  if (j.contains("merge_report")) {
    m.dropped_products = j["merge_report"].value("dropped_products", std::vector<std::string>{});
    m.dropped_interactions = j["merge_report"].value("dropped_interactions", std::size_t{0});
  }
}

const ProductRecord& PreparedDataset::product(const std::string& product_id) const {
  auto it = std::lower_bound(products.begin(), products.end(), product_id,
                             [](const ProductRecord& p, const std::string& id) { return p.product_id < id; });
  if (it == products.end() || it->product_id != product_id) throw ValidationError("unknown product " + product_id);
  return *it;
}

const UserRecord& PreparedDataset::user(const std::string& user_id) const {
  auto it = std::lower_bound(users.begin(), users.end(), user_id,
                             [](const UserRecord& u, const std::string& id) { return u.user_id < id; });
  if (it == users.end() || it->user_id != user_id) throw ValidationError("unknown user " + user_id);
  return *it;
}

PreparedDataset preprocess(std::vector<UserRecord> users, std::vector<ProductRecord> products,
                           std::vector<Interaction> interactions, const std::vector<ImageIndexEntry>& image_index,
                           std::uint64_t split_seed, double train_fraction) {
  MergedDataset merged =
      merge_datasets(std::move(users), std::move(products), std::move(interactions), image_index);

  PreparedDataset out;
  out.products = map_labels(fill_missing(std::move(merged.products)));
  out.interactions = std::move(merged.interactions);
  out.split = split(out.interactions, split_seed, train_fraction);

  std::set<std::string> train_user_ids;
  for (const auto& i : out.split.train) train_user_ids.insert(i.user_id);
  std::vector<UserRecord> train_users;
  for (const auto& u : merged.users)
    if (train_user_ids.count(u.user_id)) train_users.push_back(u);

  out.manifest.medians = compute_medians(train_users);
  out.users = fill_missing(std::move(merged.users), out.manifest.medians);
  out.manifest.norm_stats = compute_norm_stats(fill_missing(std::move(train_users), out.manifest.medians));
  for (const auto& p : out.products) out.manifest.label_map.push_back(p.product_id);
  out.manifest.split_seed = split_seed;
  out.manifest.train_fraction = train_fraction;
  out.manifest.dropped_products = merged.report.dropped_products;
  out.manifest.dropped_interactions = merged.report.dropped_interactions;
  return out;
}

namespace {

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace

void write_prepared(const PreparedDataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_jsonl(dir / "users.jsonl", to_json_rows(data.users));
  write_jsonl(dir / "products.jsonl", to_json_rows(data.products));
  write_jsonl(dir / "interactions.jsonl", to_json_rows(data.interactions));
  write_json(dir / "split.json", json{{"seed", data.split.seed},
                                      {"train_fraction", data.split.train_fraction},
                                      {"train", data.split.train_indices},
                                      {"test", data.split.test_indices}});
  write_json(dir / "manifest.json", json(data.manifest));
}

PreparedDataset read_prepared(const std::filesystem::path& dir) {
  PreparedDataset out;
  out.users = read_users(dir / "users.jsonl");
  out.products = read_products(dir / "products.jsonl");
  out.interactions = read_interactions(dir / "interactions.jsonl");
  try {
    out.manifest = read_json(dir / "manifest.json").get<PipelineManifest>();
    const json s = read_json(dir / "split.json");
    out.split.seed = s.at("seed").get<std::uint64_t>();
    out.split.train_fraction = s.at("train_fraction").get<double>();
    out.split.train_indices = s.at("train").get<std::vector<std::size_t>>();
    out.split.test_indices = s.at("test").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw ValidationError(dir.string() + ": " + e.what());
  }
  for (auto i : out.split.train_indices) {
    if (i >= out.interactions.size()) throw ValidationError("split.json: train index out of range");
    out.split.train.push_back(out.interactions[i]);
  }
  for (auto i : out.split.test_indices) {
    if (i >= out.interactions.size()) throw ValidationError("split.json: test index out of range");
    out.split.test.push_back(out.interactions[i]);
  }
  for (std::size_t i = 0; i < out.products.size(); ++i)
    if (out.products[i].label != static_cast<int>(i))
      throw ValidationError("products.jsonl must list products in label order");
  return out;
}

}  // namespace moerec
