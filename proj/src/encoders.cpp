// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "moerec/encoders.hpp"

#include "moerec/errors.hpp"
#include "moerec/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>

namespace moerec {

using nlohmann::json;

std::string to_string(Modality m) { return m == Modality::text ? "text" : "image"; }

Modality parse_modality(const std::string& s) {
  if (s == "text") return Modality::text;
  if (s == "image") return Modality::image;
  throw ValidationError("unknown modality '" + s + "'");
}

namespace {

EmbeddingRecord normalized(const std::vector<double>& counts, Modality modality) {
  EmbeddingRecord rec;
  rec.modality = modality;
  double norm = 0.0;
  for (double c : counts) norm += c * c;
  norm = std::sqrt(norm);
  rec.values.resize(counts.size(), 0.0f);
  if (norm > 0.0)
    for (std::size_t i = 0; i < counts.size(); ++i) rec.values[i] = static_cast<float>(counts[i] / norm);
  return rec;
}

}  // namespace

EmbeddingRecord stub_encode_text(std::string_view text, Index dim) {
  if (dim < 1) throw ContractError("encoder dimension must be positive");
  std::vector<double> counts(static_cast<std::size_t>(dim), 0.0);
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    counts[fnv1a64(token) % static_cast<std::uint64_t>(dim)] += 1.0;
    token.clear();
  };
  for (unsigned char c : text) {
    if (std::isspace(c))
      flush();
    else
      token.push_back(static_cast<char>(std::tolower(c)));
  }
  flush();
  return normalized(counts, Modality::text);
}

EmbeddingRecord stub_encode_image(std::string_view bytes, Index dim) {
  if (dim < 1) throw ContractError("encoder dimension must be positive");
  std::vector<double> counts(static_cast<std::size_t>(dim), 0.0);
  for (std::size_t at = 0; at < bytes.size(); at += 64)
    counts[fnv1a64(bytes.substr(at, 64)) % static_cast<std::uint64_t>(dim)] += 1.0;
  return normalized(counts, Modality::image);
}

EmbeddingFile load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  EmbeddingFile out;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  auto fail = [&](const std::string& msg) {
    throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(e.what());
    }
    try {
      if (!have_header) {
        if (j.value("format", std::string()) != kEmbeddingFormat) fail("missing moerec-embeddings header");
        if (j.value("version", 0) != 1) fail("unsupported embedding file version");
        out.modality = parse_modality(j.at("modality").get<std::string>());
        out.dim = j.at("dim").get<Index>();
        if (out.dim < 1) fail("header dim must be positive");
        have_header = true;
        continue;
      }
      EmbeddingRecord rec;
      rec.entity_id = j.at("entity_id").get<std::string>();
      if (rec.entity_id.empty()) fail("empty entity_id");
      rec.modality = out.modality;
      const auto& values = j.at("values");
      if (!values.is_array()) fail("values must be an array");
      if (static_cast<Index>(values.size()) != out.dim)
        fail("record has " + std::to_string(values.size()) + " values, header dim is " + std::to_string(out.dim));
      rec.values.reserve(values.size());
      for (const auto& v : values) {
        const auto f = static_cast<float>(v.get<double>());
        if (!std::isfinite(f)) fail("non-finite value for entity " + rec.entity_id);
        rec.values.push_back(f);
      }
      if (out.records.count(rec.entity_id)) ++out.duplicates;
      out.records[rec.entity_id] = std::move(rec);
    } catch (const json::exception& e) {
      fail(e.what());
    }
  }
  if (!have_header) throw ValidationError(path.string() + ": missing moerec-embeddings header");
  return out;
}

void write_embeddings(const std::filesystem::path& path, Modality modality, Index dim,
                      const std::vector<EmbeddingRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << json{{"format", kEmbeddingFormat}, {"version", 1}, {"modality", to_string(modality)}, {"dim", dim}}.dump()
      << '\n';
  for (const auto& r : records) {
    if (r.dim() != dim) throw ShapeError("embedding for " + r.entity_id + " has dim " + std::to_string(r.dim()));
    out << json{{"entity_id", r.entity_id}, {"values", r.values}}.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Projection Projection::identity(Index dim) {
  return {Tensor::parameter(Mat::Identity(dim, dim)), Tensor::parameter(Mat::Zero(1, dim))};
}

Projection Projection::random(Index source_dim, Index model_dim, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(source_dim));
  Mat w(source_dim, model_dim), b(1, model_dim);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
  for (Index i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-bound, bound);
  return {Tensor::parameter(std::move(w)), Tensor::parameter(std::move(b))};
}

Tensor Projection::apply(const Tensor& x) const { return add_row(matmul(x, weight), bias); }

void EncoderSpec::validate() const {
  if (model_dim < 1 || source_dim < 1) throw ContractError("encoder dimensions must be positive");
  if (kind == EncoderKind::file && source_dim != model_dim && !projection)
    throw ContractError("file encoder with source_dim " + std::to_string(source_dim) + " != model_dim " +
                        std::to_string(model_dim) + " needs a projection");
  if (projection && (projection->weight.rows() != source_dim || projection->weight.cols() != model_dim))
    throw ShapeError("projection " + to_string(projection->weight.shape()) + " does not map " +
                     std::to_string(source_dim) + " -> " + std::to_string(model_dim));
}

StructuredFeatures encode_structured(const UserRecord& user, const NormStats& stats) {
  StructuredFeatures f{};
  f[static_cast<std::size_t>(user.gender)] = 1.0;
  auto scaled = [](double x, double lo, double hi) {
    if (!(hi > lo)) return 0.0;
    return std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
  };
  if (user.age)
    f[4] = scaled(*user.age, stats.age_min, stats.age_max);
  else
    f[14] = 1.0;
  if (user.weight)
    f[5] = scaled(*user.weight, stats.weight_min, stats.weight_max);
  else
    f[15] = 1.0;
  f[6 + static_cast<std::size_t>(std::clamp(user.education, 0, kNumEducationLevels - 1))] = 1.0;
  const double angle = 2.0 * std::numbers::pi * (query_month(user.query_date) - 1) / 12.0;
  f[12] = std::sin(angle);
  f[13] = std::cos(angle);
  return f;
}

Index FusedVector::modality_dim() const {
  Index total = 0;
  for (const auto& s : layout)
    if (s.name != "structured") total += s.dim;
  return total;
}

std::vector<double> FusedVector::segment(const std::string& name) const {
  for (const auto& s : layout)
    if (s.name == name) return {values.begin() + s.offset, values.begin() + s.offset + s.dim};
  throw ContractError("fused vector has no segment '" + name + "'");
}

FusedVector fuse_concat(const std::vector<EmbeddingRecord>& modalities, const StructuredFeatures& structured,
                        Index model_dim) {
  if (modalities.empty() || modalities.size() > 2) throw ShapeError("fusion takes one or two modality vectors");
  if (modalities.size() == 2 &&
      (modalities[0].modality != Modality::text || modalities[1].modality != Modality::image))
    throw ContractError("multimodal fusion order is [text, image]");

  FusedVector out;
  out.values.reserve(static_cast<std::size_t>(model_dim) * modalities.size() + kStructuredDim);
  for (const auto& m : modalities) {
    if (m.dim() != model_dim)
      throw ShapeError(to_string(m.modality) + " segment has dim " + std::to_string(m.dim()) + ", expected " +
                       std::to_string(model_dim) + " (apply a projection first)");
    out.layout.push_back({to_string(m.modality), out.dim(), model_dim});
    out.values.insert(out.values.end(), m.values.begin(), m.values.end());
  }
  out.layout.push_back({"structured", out.dim(), kStructuredDim});
  out.values.insert(out.values.end(), structured.begin(), structured.end());
  return out;
}

}  // namespace moerec
