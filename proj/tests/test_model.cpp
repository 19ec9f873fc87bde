// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "moerec/errors.hpp"
#include "moerec/model.hpp"
#include "support/gating_check.hpp"
#include "support/model_check.hpp"

#include <gtest/gtest.h>

namespace moerec {
namespace {

using testing::random_matrix;

ModelConfig config_for(ExpertKind expert, GateKind gate, std::vector<Modality> modalities = {Modality::text,
                                                                                             Modality::image}) {
  ModelConfig c;
  c.n_products = 20;
  c.expert_kind = expert;
  c.gate_kind = gate;
  c.modalities = std::move(modalities);
  c.seed = 5;
  return c;
}

TEST(Config, ValidationAndJson) {
  ModelConfig c = config_for(ExpertKind::cnn, GateKind::dnn);
  EXPECT_NO_THROW(c.validate());
  const nlohmann::json j = c;
  const auto back = j.get<ModelConfig>();
  EXPECT_EQ(nlohmann::json(back), j);

  ModelConfig bad = c;
  bad.top_k_experts = 4;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.n_products = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(parse_expert_kind("rnn"), ConfigError);
}

TEST(Ncf, CompressesToModelDim) {
  for (auto modalities : {std::vector<Modality>{Modality::text, Modality::image}, std::vector<Modality>{Modality::text}}) {
    const MoeModel model(config_for(ExpertKind::dnn, GateKind::dnn, modalities));
    const Index width = model.config().input_dim();
    EXPECT_EQ(width, modalities.size() == 2 ? 1312 : 664);
    EXPECT_EQ(model.ncf_forward(Tensor::constant(Mat::Ones(3, width))).cols(), 648);
  }
  const MoeModel model(config_for(ExpertKind::dnn, GateKind::dnn));
  EXPECT_THROW(model.ncf_forward(Tensor::constant(Mat::Ones(1, 999))), ShapeError);
}

TEST(Experts, PreserveWidthForEveryKind) {
  Rng rng(1);
  const Mat shared = random_matrix(rng, 2, 648);
  for (auto kind : {ExpertKind::transformer, ExpertKind::dnn, ExpertKind::cnn}) {
    const MoeModel model(config_for(kind, GateKind::dnn));
    const Tensor y = model.expert_forward(Tensor::constant(shared), 0);
    EXPECT_EQ(y.rows(), 2);
    EXPECT_EQ(y.cols(), 648);
    EXPECT_TRUE(y.value().allFinite());
    EXPECT_THROW(model.expert_forward(Tensor::constant(shared), 3), IndexError);
  }
}

TEST(Experts, DistinctInitialisation) {
  const MoeModel model(config_for(ExpertKind::transformer, GateKind::dnn));
  Rng rng(2);
  const Tensor shared = Tensor::constant(random_matrix(rng, 1, 648));
  EXPECT_GT((model.expert_forward(shared, 0).value() - model.expert_forward(shared, 1).value()).norm(), 1e-3);
}

TEST(Experts, TransformerOnZeroInputIsFinite) {
  const MoeModel model(config_for(ExpertKind::transformer, GateKind::dnn));
  EXPECT_TRUE(model.expert_forward(Tensor::constant(Mat::Zero(2, 648)), 2).value().allFinite());
}

TEST(Gating, PinnedTopTwo) {
  const Mat w = top_k_softmax(Tensor::constant((Mat(1, 3) << 2, 1, 0).finished()), 2).value();
  EXPECT_NEAR(w(0, 0), 0.7311, 1e-4);
  EXPECT_NEAR(w(0, 1), 0.2689, 1e-4);
  EXPECT_EQ(w(0, 2), 0.0);
}

TEST(Gating, TopKEqualsNIsUniformForEqualLogits) {
  const Mat w = top_k_softmax(Tensor::constant(Mat::Constant(1, 3, 0.4)), 3).value();
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(w(0, i), 1.0 / 3.0, 1e-15);
}

TEST(Gating, Properties) {
  const auto r = testing::check_gating(2000, 17);
  EXPECT_EQ(r.failures, 0) << r.first_failure;
}

TEST(Gating, ModelGateWeightsRespectTopK) {
  ModelConfig c = config_for(ExpertKind::dnn, GateKind::dnn);
  c.top_k_experts = 1;
  const MoeModel model(c);
  Rng rng(3);
  const Tensor shared = Tensor::constant(random_matrix(rng, 5, 648));
  const Mat w = model.gate_weights(shared, Task::recommendation, nullptr).value();
  for (Index b = 0; b < 5; ++b) {
    EXPECT_EQ(w.row(b).maxCoeff(), 1.0);
    EXPECT_EQ(w.row(b).sum(), 1.0);
  }
}

TEST(Gating, StackingNeedsBoostScores) {
  const MoeModel model(config_for(ExpertKind::dnn, GateKind::stacking));
  const Tensor shared = Tensor::constant(Mat::Ones(1, 648));
  EXPECT_THROW(model.gate_weights(shared, Task::auxiliary, nullptr), ContractError);
  EXPECT_THROW(model.forward(Tensor::constant(Mat::Ones(1, 1312))), ContractError);
  const Mat boost = Mat::Constant(1, 20, 0.05);
  EXPECT_EQ(model.gate_weights(shared, Task::auxiliary, &boost).cols(), 3);
}

TEST(Combine, OneHotSelectsExpert) {
  Rng rng(4);
  std::vector<Tensor> experts;
  for (int e = 0; e < 3; ++e) experts.push_back(Tensor::constant(random_matrix(rng, 2, 648)));
  const Mat w = (Mat(2, 3) << 0, 1, 0, 0, 0, 1).finished();
  const Mat y = MoeModel::combine_experts(experts, Tensor::constant(w)).value();
  EXPECT_EQ(y.row(0), experts[1].value().row(0));
  EXPECT_EQ(y.row(1), experts[2].value().row(1));
}

TEST(Combine, DotProductOracle) {
  Rng rng(5);
  std::vector<Tensor> experts;
  for (int e = 0; e < 3; ++e) experts.push_back(Tensor::constant(random_matrix(rng, 1, 648)));
  const Mat w = (Mat(1, 3) << 0.7311, 0.2689, 0.0).finished();
  const Mat y = MoeModel::combine_experts(experts, Tensor::constant(w)).value();
  for (Index i = 0; i < 648; ++i) {
    double expected = 0.0;
    for (int e = 0; e < 3; ++e) expected += w(0, e) * experts[static_cast<std::size_t>(e)].value()(0, i);
    EXPECT_NEAR(y(0, i), expected, 1e-15);
  }
}

TEST(Combine, EqualWeightsOverIdenticalOutputs) {
  Rng rng(6);
  const Tensor y = Tensor::constant(random_matrix(rng, 2, 648));
  const std::vector<Tensor> experts{y, y, y};
  const Mat mixed = MoeModel::combine_experts(experts, Tensor::constant(Mat::Constant(2, 3, 1.0 / 3.0))).value();
  EXPECT_TRUE(mixed.isApprox(y.value(), 1e-14));
}

TEST(Forward, BatchShapes) {
  MoeModel model(config_for(ExpertKind::transformer, GateKind::stacking));
  model.set_stacking_warmup(true);
  const ModelOutput out = model.forward(Tensor::constant(Mat::Ones(4, 1312)));
  EXPECT_EQ(out.rec_logits.rows(), 4);
  EXPECT_EQ(out.rec_logits.cols(), 20);
  EXPECT_EQ(out.aux_logits.cols(), 3);
  EXPECT_EQ(out.expert_outputs.size(), 3u);
  EXPECT_EQ(out.rec_weights.cols(), 3);
}

TEST(Forward, SingleExpertIsPlainComposition) {
  ModelConfig c = config_for(ExpertKind::dnn, GateKind::dnn, {Modality::image});
  c.n_experts = 1;
  c.top_k_experts = 1;
  const MoeModel model(c);
  Rng rng(7);
  const Tensor fused = Tensor::constant(random_matrix(rng, 3, 664));
  const ModelOutput out = model.forward(fused);
  EXPECT_EQ(out.rec_weights.value(), Mat::Ones(3, 1));
  EXPECT_EQ(out.expert_outputs[0].value(), model.expert_forward(model.ncf_forward(fused), 0).value());
  for (const auto& [name, p] : model.named_parameters()) EXPECT_EQ(name.rfind("gate.", 0), std::string::npos) << name;
}

TEST(Gradients, FiniteEverywhere) {
  MoeModel model(config_for(ExpertKind::cnn, GateKind::dnn));
  const auto f = testing::model_fixture(model.config(), 3, 8);
  Tape tape;
  const ModelOutput out = model.forward(Tensor::constant(f.fused).on(tape));
  backward(total_loss(out.rec_logits, out.aux_logits, f.labels, f.aux_labels, 0.3));
  for (const auto& [name, p] : model.named_parameters()) EXPECT_TRUE(p.grad().allFinite()) << name;
}

TEST(Gradients, UnselectedExpertGetsNone) {
  ModelConfig c = config_for(ExpertKind::dnn, GateKind::dnn);
  c.top_k_experts = 1;
  MoeModel model(c);
  const auto f = testing::model_fixture(c, 1, 9);
  Tape tape;
  const ModelOutput out = model.forward(Tensor::constant(f.fused).on(tape));
  backward(total_loss(out.rec_logits, out.aux_logits, f.labels, f.aux_labels, 0.3));
  int idle = 0;
  for (int e = 0; e < 3; ++e) {
    if (out.rec_weights.value()(0, e) != 0.0 || out.aux_weights.value()(0, e) != 0.0) continue;
    ++idle;
    const std::string prefix = "expert" + std::to_string(e) + ".";
    for (const auto& [name, p] : model.named_parameters())
      if (name.rfind(prefix, 0) == 0) EXPECT_EQ(p.grad().cwiseAbs().maxCoeff(), 0.0) << name;
  }
  EXPECT_GE(idle, 1);
}

TEST(Gradients, EndToEndFiniteDifferences) {
  for (auto kind : {ExpertKind::transformer, ExpertKind::cnn}) {
    MoeModel model(config_for(kind, GateKind::stacking));
    const auto f = testing::model_fixture(model.config(), 4, 10);
    testing::attach_ensemble(model, f);
    for (const auto& c : testing::end_to_end_check(model, f, 10, 11))
      EXPECT_LT(c.error, 1e-3) << c.name << "[" << c.entry << "] analytic " << c.analytic << " numeric " << c.numeric;
  }
}

TEST(Loss, AuxWeightScalesSecondTerm) {
  const Tensor rec = Tensor::constant(Mat::Zero(2, 4)), aux = Tensor::constant(Mat::Zero(2, 3));
  const std::vector<int> labels{0, 3}, aux_labels{1, 2};
  EXPECT_NEAR(total_loss(rec, aux, labels, aux_labels, 0.0).item(), std::log(4.0), 1e-12);
  EXPECT_NEAR(total_loss(rec, aux, labels, aux_labels, 0.5).item(), std::log(4.0) + 0.5 * std::log(3.0), 1e-12);
}

TEST(Parameters, NamesAreUniqueAndDeterministic) {
  const MoeModel a(config_for(ExpertKind::transformer, GateKind::stacking));
  const MoeModel b(config_for(ExpertKind::transformer, GateKind::stacking));
  std::set<std::string> names;
  const auto pa = a.named_parameters(), pb = b.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(names.insert(pa[i].first).second) << pa[i].first;
    EXPECT_EQ(pa[i].second.value(), pb[i].second.value());
  }
}

}  // namespace
}  // namespace moerec
