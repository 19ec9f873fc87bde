// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

// The mixture-of-experts recommender: a shared NCF compression layer, a set of
// shape-preserving experts, one gate and one head per task.
//
//   fused -> NCF -> shared (model_dim)
//   shared -> expert_e -> y_e                      for each expert e
//   shared [|| boosting class scores] -> gate_t -> w_t (top-k, renormalized)
//   sum_e w_t[e] * y_e -> head_t -> logits_t       for each task t

#pragma once

#include "moerec/boosting.hpp"
#include "moerec/encoders.hpp"
#include "moerec/rng.hpp"
#include "moerec/tensor.hpp"

#include <json.hpp>

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace moerec {

enum class ExpertKind { transformer, dnn, cnn };
enum class GateKind { stacking, dnn };
enum class Task { recommendation, auxiliary };

std::string to_string(ExpertKind k);
std::string to_string(GateKind k);
ExpertKind parse_expert_kind(const std::string& s);
GateKind parse_gate_kind(const std::string& s);

struct ModelConfig {
  Index model_dim = kModelDim;
  int n_experts = 3;
  ExpertKind expert_kind = ExpertKind::transformer;
  int expert_depth = 3;
  GateKind gate_kind = GateKind::stacking;
  int top_k_experts = 2;
  int n_products = 0;
  int n_categories = kNumCategories;
  double aux_loss_weight = 0.3;
  std::uint64_t seed = 0;

  std::vector<Modality> modalities{Modality::text, Modality::image};
  /// Native embedding width per modality; a width other than model_dim adds
  /// a learned projection in front of fusion.
  std::vector<Index> source_dims;

  Index ncf_hidden = 1024;
  Index gate_hidden = 64;
  Index n_tokens = 8;  // transformer expert views model_dim as n_tokens x (model_dim / n_tokens)
  Index n_heads = 3;
  Index cnn_channels = 8;
  Index cnn_kernel = 5;

  Index input_dim() const { return model_dim * static_cast<Index>(modalities.size()) + kStructuredDim; }
  Index source_dim(std::size_t modality) const;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

using NamedParameters = std::vector<std::pair<std::string, Tensor>>;

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out

  /// uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) for weight and bias.
  static Linear init(Index in, Index out, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(NamedParameters& out, const std::string& prefix) const;
};

/// input_dim -> ncf_hidden -> model_dim with a ReLU in between.
class NcfLayer {
 public:
  NcfLayer(const ModelConfig& config, Rng& rng);
  Tensor forward(const Tensor& fused) const;
  void collect(NamedParameters& out) const;

 private:
  Index input_dim_;
  Index model_dim_;
  Linear hidden_;
  Linear out_;
};

class Expert {
 public:
  virtual ~Expert() = default;
  /// batch x model_dim -> batch x model_dim.
  virtual Tensor forward(const Tensor& x) const = 0;
  virtual void collect(NamedParameters& out, const std::string& prefix) const = 0;
};

std::unique_ptr<Expert> make_expert(const ModelConfig& config, Rng& rng);

class GateNetwork {
 public:
  GateNetwork(const ModelConfig& config, Rng& rng);
  /// Expert weights: softmax over the top_k largest logits, zero elsewhere.
  /// Stacking gates need `boost_scores` (batch x n_products).
  Tensor weights(const Tensor& shared, const Mat* boost_scores) const;
  Tensor logits(const Tensor& shared, const Mat* boost_scores) const;
  void collect(NamedParameters& out, const std::string& prefix) const;

 private:
  bool stacking_;
  Index boost_dim_;
  int top_k_;
  Linear hidden_;
  Linear out_;
};

struct ModelOutput {
  Tensor shared;
  std::vector<Tensor> expert_outputs;
  Tensor rec_weights;
  Tensor aux_weights;
  Tensor rec_logits;  // batch x n_products
  Tensor aux_logits;  // batch x n_categories
};

class MoeModel {
 public:
  explicit MoeModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  /// Applies modality projections (when configured) and concatenates
  /// [modalities..., structured] into the NCF input.
  Tensor fuse(std::span<const Tensor> modalities, const Tensor& structured) const;

  Tensor ncf_forward(const Tensor& fused) const;
  Tensor expert_forward(const Tensor& shared, int expert) const;
  /// Throws ContractError for a stacking gate without boost scores.
  Tensor gate_weights(const Tensor& shared, Task task, const Mat* boost_scores) const;
  static Tensor combine_experts(std::span<const Tensor> expert_outputs, const Tensor& weights);

  /// Full pass. Stacking gates take boosting scores from the fitted ensemble,
  /// or zeros while the stacking warmup flag is set.
  ModelOutput forward(const Tensor& fused) const;

  void set_ensemble(BoostedEnsemble ensemble) { ensemble_ = std::move(ensemble); }
  const std::optional<BoostedEnsemble>& ensemble() const { return ensemble_; }
  void set_stacking_warmup(bool on) { warmup_ = on; }
  bool uses_stacking() const { return config_.gate_kind == GateKind::stacking && config_.n_experts > 1; }

  NamedParameters named_parameters() const;
  std::vector<Tensor> parameters() const;

 private:
  ModelConfig config_;
  std::vector<Projection> projections_;  // empty entries are never used; see has_projection_
  std::vector<bool> has_projection_;
  std::unique_ptr<NcfLayer> ncf_;
  std::vector<std::unique_ptr<Expert>> experts_;
  std::unique_ptr<GateNetwork> rec_gate_;
  std::unique_ptr<GateNetwork> aux_gate_;
  Linear rec_head_;
  Linear aux_head_;
  std::optional<BoostedEnsemble> ensemble_;
  bool warmup_ = false;
};

/// CE(rec) + aux_weight * CE(aux).
Tensor total_loss(const Tensor& rec_logits, const Tensor& aux_logits, std::span<const int> rec_labels,
                  std::span<const int> aux_labels, double aux_weight);

}  // namespace moerec
