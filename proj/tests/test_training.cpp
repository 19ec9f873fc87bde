// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "moerec/adam.hpp"
#include "moerec/errors.hpp"
#include "moerec/experiment.hpp"
#include "moerec/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>

namespace moerec {
namespace {

struct Small {
  ExperimentData data;
  FeatureTable features;
  Samples samples;
};

const Small& small() {
  static const Small s = [] {
    Small out;
    SynthSpec spec;
    spec.n_users = 12;
    spec.n_products = 8;
    out.data = synth_experiment_data(spec, 0);
    out.features = build_features(out.data.dataset, {Modality::text, Modality::image}, out.data.embeddings);
    out.samples = make_samples(out.data.dataset, out.features, out.data.dataset.split.train);
    return out;
  }();
  return s;
}

ModelConfig small_config(GateKind gate = GateKind::dnn, int n_experts = 2) {
  ModelConfig c;
  c.n_products = 8;
  c.n_experts = n_experts;
  c.top_k_experts = std::min(2, n_experts);
  c.expert_kind = ExpertKind::dnn;
  c.expert_depth = 1;
  c.gate_kind = gate;
  c.ncf_hidden = 32;
  c.seed = 3;
  return c;
}

TrainConfig short_run(int epochs = 3) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 4;
  t.lr = 1e-2;
  t.seed = 9;
  t.phase_a_epochs = 1;
  return t;
}

TEST(TotalLoss, UniformLogits) {
  const Tensor rec = Tensor::constant(Mat::Zero(3, 20)), aux = Tensor::constant(Mat::Zero(3, 3));
  const std::vector<int> labels{0, 7, 19}, aux_labels{0, 1, 2};
  const double loss = total_loss(rec, aux, labels, aux_labels, 0.3).item();
  EXPECT_NEAR(loss, std::log(20.0) + 0.3 * std::log(3.0), 1e-12);
  EXPECT_NEAR(loss, 3.3255, 5e-4);
  EXPECT_EQ(total_loss(rec, aux, labels, aux_labels, 0.0).item(), cross_entropy(rec, labels).item());
}

TEST(TotalLoss, ConfidentLogitsNearZero) {
  Mat rec = Mat::Constant(2, 4, -40.0), aux = Mat::Constant(2, 3, -40.0);
  rec(0, 1) = rec(1, 3) = 40.0;
  aux(0, 0) = aux(1, 2) = 40.0;
  const std::vector<int> labels{1, 3}, aux_labels{0, 2};
  EXPECT_LT(total_loss(Tensor::constant(rec), Tensor::constant(aux), labels, aux_labels, 0.3).item(), 1e-6);
}

TEST(Features, RowsAndGather) {
  const auto& s = small();
  EXPECT_EQ(s.features.n_users(), 12);
  EXPECT_EQ(s.features.row("u003"), 3);
  EXPECT_THROW(s.features.row("nobody"), IndexError);
  const std::vector<Index> rows{2, 0};
  Tensor structured;
  const auto parts = s.features.gather(rows, structured);
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[0].value().row(1), s.features.embeddings[0].row(0));
  EXPECT_EQ(structured.value().row(0), s.features.structured.row(2));
}

TEST(Features, MissingModalityIsConfigError) {
  const auto& s = small();
  std::map<Modality, EmbeddingFile> only_text{{Modality::text, s.data.embeddings.at(Modality::text)}};
  EXPECT_THROW(build_features(s.data.dataset, {Modality::text, Modality::image}, only_text), ConfigError);
}

TEST(Samples, RelevantOnly) {
  const auto& s = small();
  std::size_t relevant = 0;
  for (const auto& i : s.data.dataset.split.train) relevant += i.relevance == 1;
  EXPECT_EQ(s.samples.size(), relevant);
  for (std::size_t i = 0; i < s.samples.size(); ++i)
    EXPECT_EQ(s.samples.aux_labels[i], static_cast<int>(s.data.dataset.products[std::size_t(s.samples.labels[i])].category));
}

TEST(Train, DeterministicAcrossRuns) {
  const auto& s = small();
  MoeModel a(small_config(GateKind::stacking)), b(small_config(GateKind::stacking));
  const auto ra = train(a, {s.features, s.samples}, short_run());
  const auto rb = train(b, {s.features, s.samples}, short_run());
  ASSERT_EQ(ra.epochs.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(ra.epochs[e].total, rb.epochs[e].total);
  EXPECT_EQ(ra.final_loss, rb.final_loss);
  EXPECT_TRUE(a.ensemble().has_value());
}

TEST(Train, ZeroEpochsLeavesModelUntouched) {
  const auto& s = small();
  MoeModel model(small_config());
  const Mat before = model.named_parameters()[0].second.value();
  const auto r = train(model, {s.features, s.samples}, short_run(0));
  EXPECT_TRUE(r.epochs.empty());
  EXPECT_EQ(r.initial_loss, r.final_loss);
  EXPECT_EQ(model.named_parameters()[0].second.value(), before);
}

TEST(Train, LossDecreases) {
  const auto& s = small();
  MoeModel model(small_config());
  const auto r = train(model, {s.features, s.samples}, short_run(15));
  EXPECT_LT(r.final_loss, r.initial_loss);
}

TEST(Train, NonFiniteLossNamesEpochAndBatch) {
  const auto& s = small();
  MoeModel model(small_config());
  model.named_parameters().back().second.mutable_value()(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    train(model, {s.features, s.samples}, short_run());
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1, batch 1"), std::string::npos) << e.what();
  }
}

TEST(Train, StackingNeedsWarmupEpochs) {
  TrainConfig t = short_run(3);
  t.phase_a_epochs = 5;
  EXPECT_THROW(t.validate(small_config(GateKind::stacking)), ConfigError);
  EXPECT_NO_THROW(t.validate(small_config(GateKind::dnn)));
}

TEST(Train, EvaluatesOnSchedule) {
  const auto& s = small();
  const GroundTruth truth = relevant_items(s.data.dataset, s.data.dataset.split.test);
  MoeModel model(small_config());
  TrainConfig t = short_run(4);
  t.eval_every = 2;
  const auto r = train(model, {s.features, s.samples, &truth}, t);
  ASSERT_EQ(r.evals.size(), 2u);
  EXPECT_EQ(r.evals[1].epoch, 4);
}

// With no auxiliary weight and a single expert the model is a plain
// NCF -> expert -> head network; an independent loop over the same batches
// with only the recommendation loss must reproduce the loss sequence.
TEST(Train, AuxFreeSingleExpertMatchesReference) {
  const auto& s = small();
  ModelConfig c = small_config(GateKind::dnn, 1);
  c.aux_loss_weight = 0.0;
  MoeModel trained(c), reference(c);
  const TrainConfig t = short_run(3);
  const auto report = train(trained, {s.features, s.samples}, t);

  Adam adam(reference.parameters(), {.lr = t.lr});
  Rng rng(t.seed);
  std::vector<std::size_t> order(s.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < t.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += std::size_t(t.batch_size)) {
      const std::size_t hi = std::min(order.size(), lo + std::size_t(t.batch_size));
      std::vector<Index> rows;
      std::vector<int> labels;
      for (std::size_t i = lo; i < hi; ++i) {
        rows.push_back(s.samples.rows[order[i]]);
        labels.push_back(s.samples.labels[order[i]]);
      }
      Tape tape;
      Tensor structured;
      std::vector<Tensor> parts = s.features.gather(rows, structured);
      for (auto& p : parts) p = p.on(tape);
      const Tensor fused = reference.fuse(parts, structured.on(tape));
      const Tensor loss = cross_entropy(reference.forward(fused).rec_logits, labels);
      tape.backward(loss);
      adam.step();
      adam.zero_grad();
      total += static_cast<double>(hi - lo) * loss.item();
    }
    EXPECT_NEAR(total / static_cast<double>(order.size()), report.epochs[std::size_t(epoch)].total, 1e-10);
  }
}

TEST(Predict, RankTopK) {
  const Mat logits = (Mat(1, 3) << 0.1, 0.9, 0.5).finished();
  EXPECT_EQ(rank_top_k(logits, 0, 3), (Ranking{1, 2, 0}));
  EXPECT_EQ(rank_top_k(logits, 0, 2), (Ranking{1, 2}));
  EXPECT_EQ(rank_top_k(logits, 0, 10).size(), 3u);
  const Mat ties = (Mat(1, 4) << 0.5, 0.7, 0.5, 0.7).finished();
  EXPECT_EQ(rank_top_k(ties, 0, 4), (Ranking{1, 3, 0, 2}));
}

TEST(Predict, PermutationPrefix) {
  const auto& s = small();
  MoeModel model(small_config());
  const auto rankings = predict_topk(model, s.features, s.features.user_ids, 5);
  EXPECT_EQ(rankings.size(), 12u);
  for (const auto& [user, ranking] : rankings) {
    EXPECT_EQ(ranking.size(), 5u);
    EXPECT_EQ(std::set<int>(ranking.begin(), ranking.end()).size(), 5u);
    for (int label : ranking) EXPECT_TRUE(label >= 0 && label < 8);
  }
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  const auto& s = small();
  MoeModel model(small_config(GateKind::stacking));
  train(model, {s.features, s.samples}, short_run(2));
  const auto dir = std::filesystem::temp_directory_path() / "moerec_test_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(model, dir);
  const MoeModel loaded = load_checkpoint(dir);
  EXPECT_EQ(nlohmann::json(loaded.config()), nlohmann::json(model.config()));
  EXPECT_EQ(predict_topk(loaded, s.features, s.features.user_ids, 5),
            predict_topk(model, s.features, s.features.user_ids, 5));
  const auto a = model.named_parameters(), b = loaded.named_parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].second.value(), b[i].second.value()) << a[i].first;

  std::filesystem::resize_file(dir / "params.bin", 16);
  EXPECT_THROW(load_checkpoint(dir), ValidationError);
  std::filesystem::remove_all(dir);
}

TEST(Config, TrainJsonRoundTrip) {
  const TrainConfig t = short_run(7);
  const nlohmann::json j = t;
  EXPECT_EQ(nlohmann::json(j.get<TrainConfig>()), j);
  EXPECT_THROW(nlohmann::json({{"epochs", "many"}}).get<TrainConfig>(), ConfigError);
}

}  // namespace
}  // namespace moerec
