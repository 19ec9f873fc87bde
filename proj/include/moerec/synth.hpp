// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

// Seeded synthetic datasets with a planted, modality-specific relevance signal.
//
// Products fall into G = min(4, n_products) groups by label. Each user carries
// a text marker t and an image pattern i, both drawn from [0, G). A user's
// relevant products are exactly the group
//   text  signal: t
//   image signal: i
//   both  signal: (t + i) mod G
// so that under the "both" signal neither modality alone carries any
// information about relevance. A user's description and image bytes are a
// function of t and i alone; demographics are drawn per user.

#pragma once

#include "moerec/data.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace moerec {

enum class ModalitySignal { text, image, both };

std::string to_string(ModalitySignal s);
ModalitySignal parse_modality_signal(const std::string& s);

struct SynthSpec {
  int n_users = 50;
  int n_products = 20;
  ModalitySignal modality_signal = ModalitySignal::both;
  std::uint64_t seed = 7;
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

struct SynthDataset {
  std::vector<UserRecord> users;
  std::vector<ProductRecord> products;
  std::vector<Interaction> interactions;
  std::vector<ImageIndexEntry> image_index;
  std::map<std::string, std::string> images;  // image_ref -> raw bytes

  bool operator==(const SynthDataset& other) const;
};

SynthDataset synth_generate(const SynthSpec& spec);

/// Writes users/products/interactions/image_index JSONL and the image blobs
/// (at their image_ref paths) under `dir`.
void write_synth(const SynthDataset& data, const std::filesystem::path& dir);

}  // namespace moerec
