// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "moerec/synth.hpp"

#include "moerec/errors.hpp"
#include "moerec/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace moerec {

using nlohmann::json;

std::string to_string(ModalitySignal s) {
  switch (s) {
    case ModalitySignal::text: return "text";
    case ModalitySignal::image: return "image";
    case ModalitySignal::both: return "both";
  }
  return "both";
}

ModalitySignal parse_modality_signal(const std::string& s) {
  if (s == "text") return ModalitySignal::text;
  if (s == "image") return ModalitySignal::image;
  if (s == "both") return ModalitySignal::both;
  throw ConfigError("modality_signal must be text, image or both, got '" + s + "'");
}

void to_json(json& j, const SynthSpec& s) {
  j = json{{"n_users", s.n_users},
           {"n_products", s.n_products},
           {"modality_signal", to_string(s.modality_signal)},
           {"seed", s.seed}};
}

void from_json(const json& j, SynthSpec& s) {
  s.n_users = j.value("n_users", s.n_users);
  s.n_products = j.value("n_products", s.n_products);
  s.modality_signal = parse_modality_signal(j.value("modality_signal", to_string(s.modality_signal)));
  s.seed = j.value("seed", s.seed);
}

bool SynthDataset::operator==(const SynthDataset& other) const {
  auto same_index = [](const ImageIndexEntry& a, const ImageIndexEntry& b) {
    return a.kind == b.kind && a.entity_id == b.entity_id && a.image_ref == b.image_ref;
  };
  return users == other.users && products == other.products && interactions == other.interactions &&
         images == other.images &&
         std::equal(image_index.begin(), image_index.end(), other.image_index.begin(), other.image_index.end(),
                    same_index);
}

namespace {

constexpr std::array<const char*, 40> kFiller = {
    "patient", "reports", "feeling",  "tired",   "often",   "after",  "meals",   "prefers", "light",    "dinner",
    "walks",   "daily",   "sleeps",   "poorly",  "mild",    "stress", "office",  "work",    "weekend",  "hiking",
    "drinks",  "coffee",  "tea",      "morning", "evening", "snacks", "craving", "sweet",   "salty",    "history",
    "family",  "checkup", "clinic",   "advice",  "gentle",  "diet",   "active",  "lifestyle", "recent", "changes"};

constexpr std::size_t kChunk = 64;
constexpr int kPatternChunks = 3;
constexpr int kNoiseChunks = 10;

std::string random_bytes(Rng& rng, std::size_t n) {
  std::string out(n, '\0');
  for (auto& c : out) c = static_cast<char>(rng.below(256));
  return out;
}

// Deterministic chunks that identify image pattern `pattern`.
std::string pattern_chunk(int pattern, int k) {
  Rng rng(0x5eed0000ULL + static_cast<std::uint64_t>(pattern) * 131 + static_cast<std::uint64_t>(k));
  return random_bytes(rng, kChunk);
}

std::string id(char prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%c%03d", prefix, i);
  return buf;
}

}  // namespace

SynthDataset synth_generate(const SynthSpec& spec) {
  if (spec.n_users < 2) throw ValidationError("synthetic dataset needs n_users >= 2");
  if (spec.n_products < 2) throw ValidationError("synthetic dataset needs n_products >= 2");
  Rng rng(spec.seed);
  const int groups = std::min(4, spec.n_products);
  SynthDataset out;

  for (int p = 0; p < spec.n_products; ++p) {
    ProductRecord rec;
    rec.product_id = id('p', p);
    rec.category = static_cast<Category>((p % groups) % kNumCategories);
    // Every tenth description is left blank to exercise default filling.
    if (p % 10 != 9)
      rec.description = to_string(rec.category) + " item " + kFiller[rng.below(kFiller.size())] + " " +
                        kFiller[rng.below(kFiller.size())];
    const std::string ref = "images/" + rec.product_id + ".bin";
    out.images[ref] = random_bytes(rng, 256);
    out.image_index.push_back({ImageIndexEntry::Kind::product, rec.product_id, ref});
    out.products.push_back(std::move(rec));
  }

  for (int u = 0; u < spec.n_users; ++u) {
    UserRecord rec;
    rec.user_id = id('u', u);
    const int marker = static_cast<int>(rng.below(static_cast<std::uint64_t>(groups)));
    const int pattern = static_cast<int>(rng.below(static_cast<std::uint64_t>(groups)));

    char date[16];
    std::snprintf(date, sizeof date, "2023-%02d-%02d", static_cast<int>(rng.below(12)) + 1,
                  static_cast<int>(rng.below(28)) + 1);
    rec.query_date = date;
    rec.gender = static_cast<Gender>(rng.below(kNumGenders));
    rec.age = 18 + static_cast<int>(rng.below(63));
    rec.education = static_cast<int>(rng.below(kNumEducationLevels));
    if (rng.uniform() >= 0.1) rec.weight = std::round(rng.uniform(45.0, 110.0) * 10.0) / 10.0;

    // Text and image content depend only on the latent factor, so a modality
    // identifies its factor and nothing else about the user.
    Rng text_rng(0x7e570000ULL + static_cast<std::uint64_t>(marker));
    std::vector<std::string> words;
    for (int w = 0; w < 10; ++w) words.emplace_back(kFiller[text_rng.below(kFiller.size())]);
    words.push_back("taste_" + std::to_string(marker));
    words.push_back("taste_" + std::to_string(marker));
    text_rng.shuffle(words);
    for (const auto& w : words) rec.self_description += (rec.self_description.empty() ? "" : " ") + w;

    Rng image_rng(0x1a6e0000ULL + static_cast<std::uint64_t>(pattern));
    std::vector<std::string> chunks;
    for (int k = 0; k < kPatternChunks; ++k) {
      chunks.push_back(pattern_chunk(pattern, k));
      chunks.push_back(pattern_chunk(pattern, k));
    }
    for (int k = 0; k < kNoiseChunks; ++k) chunks.push_back(random_bytes(image_rng, kChunk));
    image_rng.shuffle(chunks);
    std::string bytes;
    for (const auto& c : chunks) bytes += c;
    const std::string ref = "images/" + rec.user_id + ".bin";
    out.images[ref] = std::move(bytes);
    out.image_index.push_back({ImageIndexEntry::Kind::user, rec.user_id, ref});

    int group = 0;
    switch (spec.modality_signal) {
      case ModalitySignal::text: group = marker; break;
      case ModalitySignal::image: group = pattern; break;
      case ModalitySignal::both: group = (marker + pattern) % groups; break;
    }
    std::vector<int> others;
    for (int p = 0; p < spec.n_products; ++p) {
      if (p % groups == group)
        out.interactions.push_back({rec.user_id, id('p', p), 1});
      else
        others.push_back(p);
    }
    if (!others.empty())
      out.interactions.push_back({rec.user_id, id('p', others[rng.below(others.size())]), 0});
    out.users.push_back(std::move(rec));
  }
  return out;
}

void write_synth(const SynthDataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
  write_jsonl(dir / "users.jsonl", to_json_rows(data.users));
  write_jsonl(dir / "products.jsonl", to_json_rows(data.products));
  write_jsonl(dir / "interactions.jsonl", to_json_rows(data.interactions));
  write_jsonl(dir / "image_index.jsonl", to_json_rows(data.image_index));
  for (const auto& [ref, bytes] : data.images) {
    std::ofstream out(dir / ref, std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / ref).string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
}

}  // namespace moerec
