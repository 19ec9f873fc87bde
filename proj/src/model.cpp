// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "moerec/model.hpp"

#include "moerec/errors.hpp"

#include <cmath>

namespace moerec {

using nlohmann::json;

std::string to_string(ExpertKind k) {
  switch (k) {
    case ExpertKind::transformer: return "transformer";
    case ExpertKind::dnn: return "dnn";
    case ExpertKind::cnn: return "cnn";
  }
  return "transformer";
}

std::string to_string(GateKind k) { return k == GateKind::stacking ? "stacking" : "dnn"; }

ExpertKind parse_expert_kind(const std::string& s) {
  if (s == "transformer") return ExpertKind::transformer;
  if (s == "dnn") return ExpertKind::dnn;
  if (s == "cnn") return ExpertKind::cnn;
  throw ConfigError("expert_kind must be transformer, dnn or cnn, got '" + s + "'");
}

GateKind parse_gate_kind(const std::string& s) {
  if (s == "stacking") return GateKind::stacking;
  if (s == "dnn") return GateKind::dnn;
  throw ConfigError("gate_kind must be stacking or dnn, got '" + s + "'");
}

Index ModelConfig::source_dim(std::size_t modality) const {
  return modality < source_dims.size() ? source_dims[modality] : model_dim;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (model_dim < 1) fail("model_dim must be positive");
  if (n_experts < 1) fail("n_experts must be >= 1");
  if (top_k_experts < 1 || top_k_experts > n_experts)
    fail("top_k_experts=" + std::to_string(top_k_experts) + " outside [1, " + std::to_string(n_experts) + "]");
  if (expert_depth < 1) fail("expert_depth must be >= 1");
  if (n_products < 1) fail("n_products must be >= 1");
  if (n_categories < 1) fail("n_categories must be >= 1");
  if (!(aux_loss_weight >= 0.0) || !std::isfinite(aux_loss_weight)) fail("aux_loss_weight must be finite and >= 0");
  if (modalities.empty() || modalities.size() > 2) fail("one or two modalities required");
  if (modalities.size() == 2 && (modalities[0] != Modality::text || modalities[1] != Modality::image))
    fail("modality order is [text, image]");
  if (!source_dims.empty() && source_dims.size() != modalities.size()) fail("source_dims must match modalities");
  for (Index d : source_dims)
    if (d < 1) fail("source dims must be positive");
  if (ncf_hidden < 1 || gate_hidden < 1) fail("hidden widths must be positive");
  if (expert_kind == ExpertKind::transformer) {
    if (n_tokens < 1 || model_dim % n_tokens != 0) fail("model_dim must divide into n_tokens");
    if (n_heads < 1 || (model_dim / n_tokens) % n_heads != 0) fail("token width must divide into n_heads");
  }
  if (expert_kind == ExpertKind::cnn && (cnn_channels < 1 || cnn_kernel < 1 || cnn_kernel % 2 == 0))
    fail("cnn needs positive channels and an odd kernel");
}

void to_json(json& j, const ModelConfig& c) {
  std::vector<std::string> modalities;
  for (auto m : c.modalities) modalities.push_back(to_string(m));
  j = json{{"model_dim", c.model_dim},
           {"n_experts", c.n_experts},
           {"expert_kind", to_string(c.expert_kind)},
           {"expert_depth", c.expert_depth},
           {"gate_kind", to_string(c.gate_kind)},
           {"top_k_experts", c.top_k_experts},
           {"n_products", c.n_products},
           {"n_categories", c.n_categories},
           {"aux_loss_weight", c.aux_loss_weight},
           {"seed", c.seed},
           {"modalities", modalities},
           {"source_dims", c.source_dims},
           {"ncf_hidden", c.ncf_hidden},
           {"gate_hidden", c.gate_hidden},
           {"n_tokens", c.n_tokens},
           {"n_heads", c.n_heads},
           {"cnn_channels", c.cnn_channels},
           {"cnn_kernel", c.cnn_kernel}};
}

void from_json(const json& j, ModelConfig& c) {
  try {
    c.model_dim = j.value("model_dim", c.model_dim);
    c.n_experts = j.value("n_experts", c.n_experts);
    if (j.contains("expert_kind")) c.expert_kind = parse_expert_kind(j.at("expert_kind").get<std::string>());
    c.expert_depth = j.value("expert_depth", c.expert_depth);
    if (j.contains("gate_kind")) c.gate_kind = parse_gate_kind(j.at("gate_kind").get<std::string>());
    c.top_k_experts = j.value("top_k_experts", c.top_k_experts);
    c.n_products = j.value("n_products", c.n_products);
    c.n_categories = j.value("n_categories", c.n_categories);
    c.aux_loss_weight = j.value("aux_loss_weight", c.aux_loss_weight);
    c.seed = j.value("seed", c.seed);
    if (j.contains("modalities")) {
      c.modalities.clear();
      for (const auto& m : j.at("modalities")) c.modalities.push_back(parse_modality(m.get<std::string>()));
    }
    c.source_dims = j.value("source_dims", c.source_dims);
    c.ncf_hidden = j.value("ncf_hidden", c.ncf_hidden);
    c.gate_hidden = j.value("gate_hidden", c.gate_hidden);
    c.n_tokens = j.value("n_tokens", c.n_tokens);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.cnn_channels = j.value("cnn_channels", c.cnn_channels);
    c.cnn_kernel = j.value("cnn_kernel", c.cnn_kernel);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
}

namespace {

Mat uniform(Index rows, Index cols, double bound, Rng& rng) {
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

}  // namespace

Linear Linear::init(Index in, Index out, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  Mat w = uniform(in, out, bound, rng);
  Mat b = uniform(1, out, bound, rng);
  return {Tensor::parameter(std::move(w)), Tensor::parameter(std::move(b))};
}

Tensor Linear::operator()(const Tensor& x) const { return add_row(matmul(x, weight), bias); }

void Linear::collect(NamedParameters& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

NcfLayer::NcfLayer(const ModelConfig& config, Rng& rng)
    : input_dim_(config.input_dim()),
      model_dim_(config.model_dim),
      hidden_(Linear::init(input_dim_, config.ncf_hidden, rng)),
      out_(Linear::init(config.ncf_hidden, model_dim_, rng)) {}

Tensor NcfLayer::forward(const Tensor& fused) const {
  if (fused.cols() != input_dim_)
    throw ShapeError("ncf: fused input has dim " + std::to_string(fused.cols()) + ", model expects " +
                     std::to_string(input_dim_));
  return out_(relu(hidden_(fused)));
}

void NcfLayer::collect(NamedParameters& out) const {
  hidden_.collect(out, "ncf.hidden");
  out_.collect(out, "ncf.out");
}

namespace {

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams init(Index d) {
    return {Tensor::parameter(Mat::Ones(1, d)), Tensor::parameter(Mat::Zero(1, d))};
  }
  void collect(NamedParameters& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
  }
};

// Pre-norm encoder layer over (batch*tokens) x width rows.
struct TransformerLayer {
  LayerNormParams norm1, norm2;
  Linear q, k, v, o, ff1, ff2;

  TransformerLayer(Index width, Index ff, Rng& rng)
      : norm1(LayerNormParams::init(width)),
        norm2(LayerNormParams::init(width)),
        q(Linear::init(width, width, rng)),
        k(Linear::init(width, width, rng)),
        v(Linear::init(width, width, rng)),
        o(Linear::init(width, width, rng)),
        ff1(Linear::init(width, ff, rng)),
        ff2(Linear::init(ff, width, rng)) {}

  Tensor forward(const Tensor& x, Index tokens, Index heads) const {
    const Tensor a = layer_norm(x, norm1.gain, norm1.bias);
    const Tensor h = add(x, o(self_attention(q(a), k(a), v(a), tokens, heads)));
    const Tensor b = layer_norm(h, norm2.gain, norm2.bias);
    return add(h, ff2(gelu(ff1(b))));
  }

  void collect(NamedParameters& out, const std::string& prefix) const {
    norm1.collect(out, prefix + ".norm1");
    q.collect(out, prefix + ".attn.q");
    k.collect(out, prefix + ".attn.k");
    v.collect(out, prefix + ".attn.v");
    o.collect(out, prefix + ".attn.o");
    norm2.collect(out, prefix + ".norm2");
    ff1.collect(out, prefix + ".ffn.in");
    ff2.collect(out, prefix + ".ffn.out");
  }
};

class TransformerExpert final : public Expert {
 public:
  TransformerExpert(const ModelConfig& c, Rng& rng) : dim_(c.model_dim), tokens_(c.n_tokens), heads_(c.n_heads) {
    const Index width = dim_ / tokens_;
    for (int l = 0; l < c.expert_depth; ++l) layers_.emplace_back(width, 4 * width, rng);
  }

  Tensor forward(const Tensor& x) const override {
    Tensor h = reshape(x, x.rows() * tokens_, dim_ / tokens_);
    for (const auto& layer : layers_) h = layer.forward(h, tokens_, heads_);
    return reshape(h, x.rows(), dim_);
  }

  void collect(NamedParameters& out, const std::string& prefix) const override {
    for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect(out, prefix + ".layer" + std::to_string(l));
  }

 private:
  Index dim_, tokens_, heads_;
  std::vector<TransformerLayer> layers_;
};

class DnnExpert final : public Expert {
 public:
  DnnExpert(const ModelConfig& c, Rng& rng) {
    for (int l = 0; l < c.expert_depth; ++l) layers_.push_back(Linear::init(c.model_dim, c.model_dim, rng));
  }

  Tensor forward(const Tensor& x) const override {
    Tensor h = x;
    for (const auto& layer : layers_) h = relu(layer(h));
    return h;
  }

  void collect(NamedParameters& out, const std::string& prefix) const override {
    for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect(out, prefix + ".layer" + std::to_string(l));
  }

 private:
  std::vector<Linear> layers_;
};

// 1 -> channels -> 1 same-length convolutions with ReLU, then a dense map.
class CnnExpert final : public Expert {
 public:
  CnnExpert(const ModelConfig& c, Rng& rng) : channels_(c.cnn_channels), kernel_(c.cnn_kernel) {
    const double b1 = std::sqrt(1.0 / static_cast<double>(kernel_));
    const double b2 = std::sqrt(1.0 / static_cast<double>(channels_ * kernel_));
    w1_ = Tensor::parameter(uniform(channels_, kernel_, b1, rng));
    c1_ = Tensor::parameter(uniform(1, channels_, b1, rng));
    w2_ = Tensor::parameter(uniform(1, channels_ * kernel_, b2, rng));
    c2_ = Tensor::parameter(uniform(1, 1, b2, rng));
    dense_ = Linear::init(c.model_dim, c.model_dim, rng);
  }

  Tensor forward(const Tensor& x) const override {
    const Tensor h = relu(conv1d(x, w1_, c1_, 1, kernel_));
    return dense_(relu(conv1d(h, w2_, c2_, channels_, kernel_)));
  }

  void collect(NamedParameters& out, const std::string& prefix) const override {
    out.emplace_back(prefix + ".conv1.weight", w1_);
    out.emplace_back(prefix + ".conv1.bias", c1_);
    out.emplace_back(prefix + ".conv2.weight", w2_);
    out.emplace_back(prefix + ".conv2.bias", c2_);
    dense_.collect(out, prefix + ".dense");
  }

 private:
  Index channels_, kernel_;
  Tensor w1_, c1_, w2_, c2_;
  Linear dense_;
};

}  // namespace

std::unique_ptr<Expert> make_expert(const ModelConfig& config, Rng& rng) {
  switch (config.expert_kind) {
    case ExpertKind::transformer: return std::make_unique<TransformerExpert>(config, rng);
    case ExpertKind::dnn: return std::make_unique<DnnExpert>(config, rng);
    case ExpertKind::cnn: return std::make_unique<CnnExpert>(config, rng);
  }
  throw ConfigError("unknown expert kind");
}

GateNetwork::GateNetwork(const ModelConfig& config, Rng& rng)
    : stacking_(config.gate_kind == GateKind::stacking),
      boost_dim_(stacking_ ? config.n_products : 0),
      top_k_(config.top_k_experts),
      hidden_(Linear::init(config.model_dim + boost_dim_, config.gate_hidden, rng)),
      out_(Linear::init(config.gate_hidden, config.n_experts, rng)) {}

Tensor GateNetwork::logits(const Tensor& shared, const Mat* boost_scores) const {
  Tensor input = shared;
  if (stacking_) {
    if (boost_scores == nullptr) throw ContractError("stacking gate called without boosting scores");
    if (boost_scores->rows() != shared.rows() || boost_scores->cols() != boost_dim_)
      throw ShapeError("stacking gate: boosting scores " + to_string(Shape{boost_scores->rows(), boost_scores->cols()}) +
                       ", expected [" + std::to_string(shared.rows()) + "x" + std::to_string(boost_dim_) + "]");
    const std::array<Tensor, 2> parts{shared, Tensor::constant(*boost_scores)};
    input = concat_cols(parts);
  }
  return out_(relu(hidden_(input)));
}

Tensor GateNetwork::weights(const Tensor& shared, const Mat* boost_scores) const {
  return top_k_softmax(logits(shared, boost_scores), top_k_);
}

void GateNetwork::collect(NamedParameters& out, const std::string& prefix) const {
  hidden_.collect(out, prefix + ".hidden");
  out_.collect(out, prefix + ".out");
}

MoeModel::MoeModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  for (std::size_t m = 0; m < config_.modalities.size(); ++m) {
    const Index src = config_.source_dim(m);
    has_projection_.push_back(src != config_.model_dim);
    projections_.push_back(has_projection_.back() ? Projection::random(src, config_.model_dim, rng) : Projection{});
  }
  ncf_ = std::make_unique<NcfLayer>(config_, rng);
  for (int e = 0; e < config_.n_experts; ++e) experts_.push_back(make_expert(config_, rng));
  // A single expert always receives weight 1; no gate is built.
  if (config_.n_experts > 1) {
    rec_gate_ = std::make_unique<GateNetwork>(config_, rng);
    aux_gate_ = std::make_unique<GateNetwork>(config_, rng);
  }
  rec_head_ = Linear::init(config_.model_dim, config_.n_products, rng);
  aux_head_ = Linear::init(config_.model_dim, config_.n_categories, rng);
}

Tensor MoeModel::fuse(std::span<const Tensor> modalities, const Tensor& structured) const {
  if (modalities.size() != config_.modalities.size())
    throw ShapeError("model expects " + std::to_string(config_.modalities.size()) + " modalities, got " +
                     std::to_string(modalities.size()));
  if (structured.cols() != kStructuredDim)
    throw ShapeError("structured features have dim " + std::to_string(structured.cols()) + ", expected 16");
  std::vector<Tensor> parts;
  for (std::size_t m = 0; m < modalities.size(); ++m) {
    const Tensor& x = modalities[m];
    if (x.cols() != config_.source_dim(m))
      throw ShapeError(to_string(config_.modalities[m]) + " input has dim " + std::to_string(x.cols()) +
                       ", expected " + std::to_string(config_.source_dim(m)));
    parts.push_back(has_projection_[m] ? projections_[m].apply(x) : x);
  }
  parts.push_back(structured);
  return concat_cols(parts);
}

Tensor MoeModel::ncf_forward(const Tensor& fused) const { return ncf_->forward(fused); }

Tensor MoeModel::expert_forward(const Tensor& shared, int expert) const {
  if (expert < 0 || expert >= config_.n_experts)
    throw IndexError("expert index " + std::to_string(expert) + " outside [0, " + std::to_string(config_.n_experts) +
                     ")");
  if (shared.cols() != config_.model_dim)
    throw ShapeError("expert input has dim " + std::to_string(shared.cols()) + ", expected " +
                     std::to_string(config_.model_dim));
  return experts_[static_cast<std::size_t>(expert)]->forward(shared);
}

Tensor MoeModel::gate_weights(const Tensor& shared, Task task, const Mat* boost_scores) const {
  if (config_.n_experts == 1) return Tensor::constant(Mat::Ones(shared.rows(), 1));
  const GateNetwork& gate = task == Task::recommendation ? *rec_gate_ : *aux_gate_;
  return gate.weights(shared, boost_scores);
}

Tensor MoeModel::combine_experts(std::span<const Tensor> expert_outputs, const Tensor& weights) {
  return mix_rows(expert_outputs, weights);
}

ModelOutput MoeModel::forward(const Tensor& fused) const {
  ModelOutput out;
  out.shared = ncf_forward(fused);
  for (int e = 0; e < config_.n_experts; ++e) out.expert_outputs.push_back(expert_forward(out.shared, e));

  Mat boost;
  const Mat* scores = nullptr;
  if (uses_stacking()) {
    if (ensemble_)
      boost = ensemble_->predict_proba(out.shared.value());
    else if (warmup_)
      boost = Mat::Zero(out.shared.rows(), config_.n_products);
    else
      throw ContractError("stacking gate has no fitted boosting ensemble");
    scores = &boost;
  }
  out.rec_weights = gate_weights(out.shared, Task::recommendation, scores);
  out.aux_weights = gate_weights(out.shared, Task::auxiliary, scores);
  out.rec_logits = rec_head_(combine_experts(out.expert_outputs, out.rec_weights));
  out.aux_logits = aux_head_(combine_experts(out.expert_outputs, out.aux_weights));
  return out;
}

NamedParameters MoeModel::named_parameters() const {
  NamedParameters out;
  for (std::size_t m = 0; m < projections_.size(); ++m) {
    if (!has_projection_[m]) continue;
    const std::string prefix = "projection." + to_string(config_.modalities[m]);
    out.emplace_back(prefix + ".weight", projections_[m].weight);
    out.emplace_back(prefix + ".bias", projections_[m].bias);
  }
  ncf_->collect(out);
  for (std::size_t e = 0; e < experts_.size(); ++e) experts_[e]->collect(out, "expert" + std::to_string(e));
  if (rec_gate_) {
    rec_gate_->collect(out, "gate.rec");
    aux_gate_->collect(out, "gate.aux");
  }
  rec_head_.collect(out, "head.rec");
  aux_head_.collect(out, "head.aux");
  return out;
}

std::vector<Tensor> MoeModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

Tensor total_loss(const Tensor& rec_logits, const Tensor& aux_logits, std::span<const int> rec_labels,
                  std::span<const int> aux_labels, double aux_weight) {
  if (rec_logits.rows() != aux_logits.rows())
    throw ShapeError("total_loss: task batches differ: " + to_string(rec_logits.shape()) + " vs " +
                     to_string(aux_logits.shape()));
  return add(cross_entropy(rec_logits, rec_labels), scale(cross_entropy(aux_logits, aux_labels), aux_weight));
}

}  // namespace moerec
