// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

// Modality embeddings, structured user features and concatenation fusion.

#pragma once

#include "moerec/data.hpp"
#include "moerec/rng.hpp"
#include "moerec/tensor.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace moerec {

inline constexpr Index kModelDim = 648;
inline constexpr Index kStructuredDim = 16;

enum class Modality { text, image };

std::string to_string(Modality m);
Modality parse_modality(const std::string& s);

struct EmbeddingRecord {
  std::string entity_id;
  Modality modality = Modality::text;
  std::vector<float> values;

  Index dim() const { return static_cast<Index>(values.size()); }
};

/// Token-hashing stand-in for a text encoder: lowercase, split on
/// whitespace, FNV-1a each token into `hash % dim`, count, L2-normalize.
EmbeddingRecord stub_encode_text(std::string_view text, Index dim = kModelDim);

/// Same scheme over successive 64-byte chunks of raw image bytes.
EmbeddingRecord stub_encode_image(std::string_view bytes, Index dim = kModelDim);

// ---- embedding files -----------------------------------------------------

inline constexpr const char* kEmbeddingFormat = "moerec-embeddings";

struct EmbeddingFile {
  Modality modality = Modality::text;
  Index dim = 0;
  std::map<std::string, EmbeddingRecord> records;
  std::size_t duplicates = 0;  // later lines replaced earlier ones
};

/// Reads and validates a JSON Lines embedding file. The first line is the
/// header; duplicate entity ids keep the last record.
EmbeddingFile load_embeddings(const std::filesystem::path& path);

void write_embeddings(const std::filesystem::path& path, Modality modality, Index dim,
                      const std::vector<EmbeddingRecord>& records);

// ---- projection ----------------------------------------------------------

enum class EncoderKind { stub_text, stub_image, file };

/// Learned linear map from an encoder's native dimension to model_dim.
struct Projection {
  Tensor weight;  // source_dim x model_dim
  Tensor bias;    // 1 x model_dim

  static Projection identity(Index dim);
  static Projection random(Index source_dim, Index model_dim, Rng& rng);
  Tensor apply(const Tensor& x) const;
};

struct EncoderSpec {
  EncoderKind kind = EncoderKind::stub_text;
  Index model_dim = kModelDim;
  Index source_dim = kModelDim;
  std::optional<Projection> projection;

  /// Throws ContractError when a file encoder of a different native
  /// dimension has no projection.
  void validate() const;
};

// ---- structured features and fusion --------------------------------------

/// gender one-hot (4) | age | weight | education one-hot (6) | month sin, cos |
/// age-missing, weight-missing flags.
using StructuredFeatures = std::array<double, kStructuredDim>;

StructuredFeatures encode_structured(const UserRecord& user, const NormStats& stats);

struct Segment {
  std::string name;
  Index offset = 0;
  Index dim = 0;
};

struct FusedVector {
  std::vector<double> values;
  std::vector<Segment> layout;

  Index dim() const { return static_cast<Index>(values.size()); }
  /// Width of the modality segments, excluding the structured tail.
  Index modality_dim() const;
  std::vector<double> segment(const std::string& name) const;
};

/// Concatenates modality vectors in [text, image] order, then the structured
/// features. Every modality must already be `model_dim` wide.
FusedVector fuse_concat(const std::vector<EmbeddingRecord>& modalities, const StructuredFeatures& structured,
                        Index model_dim = kModelDim);

}  // namespace moerec
