// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

// Model inputs per user, the multi-task training loop, checkpoints and
// top-K prediction.

#pragma once

#include "moerec/data.hpp"
#include "moerec/encoders.hpp"
#include "moerec/metrics.hpp"
#include "moerec/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace moerec {

/// Row-aligned model inputs for every user of a dataset.
struct FeatureTable {
  std::vector<std::string> user_ids;  // sorted
  std::vector<Modality> modalities;
  std::vector<Mat> embeddings;  // one users x source_dim matrix per modality
  Mat structured;               // users x 16

  Index row(const std::string& user_id) const;
  Index n_users() const { return static_cast<Index>(user_ids.size()); }
  /// Copies the given rows into one tensor per modality plus the structured block.
  std::vector<Tensor> gather(std::span<const Index> rows, Tensor& structured_out) const;
};

/// Builds inputs from loaded embedding files, one per selected modality.
/// Throws ConfigError when a user has no embedding for a selected modality.
FeatureTable build_features(const PreparedDataset& data, const std::vector<Modality>& modalities,
                            const std::map<Modality, EmbeddingFile>& embeddings);

using ImageLoader = std::function<std::optional<std::string>(const std::string& image_ref)>;

/// Stub-encoded user text and image embeddings. Users with no image (or an
/// unreadable one) get the zero vector.
std::map<Modality, EmbeddingFile> stub_user_embeddings(const std::vector<UserRecord>& users, const ImageLoader& load,
                                                       Index dim = kModelDim);

/// Reads `image_root / image_ref` from disk.
ImageLoader file_image_loader(const std::filesystem::path& image_root);

/// One training example per relevant (relevance 1) interaction.
struct Samples {
  std::vector<Index> rows;       // FeatureTable rows
  std::vector<int> labels;       // product labels
  std::vector<int> aux_labels;   // product categories
  std::size_t size() const { return rows.size(); }
};

Samples make_samples(const PreparedDataset& data, const FeatureTable& features,
                     const std::vector<Interaction>& interactions);

/// user_id -> labels of products with relevance 1 among `interactions`.
GroundTruth relevant_items(const PreparedDataset& data, const std::vector<Interaction>& interactions);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int eval_every = 10;
  int phase_a_epochs = 10;  // stacking warmup with zero boosting scores
  int k = 5;

  void validate(const ModelConfig& model) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochLoss {
  int epoch = 0;
  double total = 0.0;
  double recommendation = 0.0;
  double auxiliary = 0.0;
};

struct EvalPoint {
  int epoch = 0;
  MetricReport metrics;
};

struct TrainReport {
  double initial_loss = 0.0;  // full pass over the training samples before any update
  double final_loss = 0.0;    // same, after the last epoch
  std::vector<EpochLoss> epochs;
  std::vector<EvalPoint> evals;
  double wall_seconds = 0.0;
  std::string checkpoint;
};

void to_json(nlohmann::json& j, const TrainReport& r);

struct LossParts {
  double total = 0.0;
  double recommendation = 0.0;
  double auxiliary = 0.0;
};

/// Mean losses over `samples` without recording gradients.
LossParts evaluate_loss(const MoeModel& model, const FeatureTable& features, const Samples& samples,
                        int batch_size = 64);

/// Fits the stacking ensemble on detached NCF outputs of `samples`.
void fit_stacking(MoeModel& model, const FeatureTable& features, const Samples& samples);

struct TrainData {
  const FeatureTable& features;
  const Samples& train;
  const GroundTruth* eval_truth = nullptr;  // evaluated every eval_every epochs when set
};

/// Adam over shuffled mini-batches. Stacking models train with zero boosting
/// scores for phase_a_epochs, then fit the ensemble and continue. Throws
/// NumericError naming the epoch and batch on a non-finite loss.
TrainReport train(MoeModel& model, const TrainData& data, const TrainConfig& config);

/// Best-first product labels for one row of logits: descending score, ties
/// by ascending label, min(k, n) entries.
Ranking rank_top_k(const Mat& logits, Index row, int k);

Rankings predict_topk(const MoeModel& model, const FeatureTable& features, const std::vector<std::string>& user_ids,
                      int k);

// ---- checkpoints -----------------------------------------------------------

/// config.json, params.bin with params.index.json, and boost.json when the
/// model has a fitted ensemble.
void save_checkpoint(const MoeModel& model, const std::filesystem::path& dir);
MoeModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace moerec
