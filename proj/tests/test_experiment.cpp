// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "moerec/errors.hpp"
#include "moerec/experiment.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace moerec {
namespace {

MetricReport report(double p, double r, double n, double m) { return {p, r, n, m, 5, 10}; }

ReportTable two_rows() {
  ReportTable t;
  TableRow a;
  a.cell = "text_only";
  a.mean = report(0.7251, 0.5, 0.61, 0.4);
  a.stddev = report(0.01, 0.02, 0.03, 0.04);
  a.runs.resize(2);
  TableRow b;
  b.cell = "moe_multimodal";
  b.mean = report(0.126, 1.0, 0.0, 0.333);
  b.runs.resize(1);
  t.rows = {a, b};
  return t;
}

TEST(Grids, CellNames) {
  std::vector<std::string> names;
  for (const auto& c : modality_cells()) names.push_back(c.name);
  EXPECT_EQ(names, (std::vector<std::string>{"text_only", "image_only", "multimodal", "moe_multimodal"}));
  EXPECT_EQ(modality_cells()[1].modalities, std::vector<Modality>{Modality::image});
  const auto moe = moe_cells();
  ASSERT_EQ(moe.size(), 6u);
  EXPECT_EQ(moe.front().name, "moe_transformer_stacking");
  EXPECT_EQ(moe.back().name, "moe_cnn_dnn");
}

TEST(Format, CsvHeaderAndFullPrecision) {
  const std::string csv = format_csv(two_rows());
  std::istringstream in(csv);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header,
            "Model,Precision@K,Precision@K std,Recall@K,Recall@K std,NDCG,NDCG std,MAP@5,MAP@5 std,seeds\r");
  EXPECT_EQ(first.rfind("text_only,0.72509999999999997,0.01,", 0), 0u) << first;
  EXPECT_EQ(first.substr(first.size() - 3), ",2\r");
}

TEST(Format, MarkdownRounding) {
  const std::string md = format_markdown(two_rows());
  EXPECT_NE(md.find("| Model "), std::string::npos);
  EXPECT_NE(md.find("0.73 ± 0.01"), std::string::npos) << md;
  EXPECT_NE(md.find("| 0.13 "), std::string::npos) << md;
  std::istringstream in(md);
  std::string line;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    std::size_t cps = 0;
    for (unsigned char c : line) cps += (c & 0xC0) != 0x80;
    if (width == 0) width = cps;
    EXPECT_EQ(cps, width) << line;
  }
}

TEST(Format, EmptyTableRejected) {
  EXPECT_THROW(emit_report(ReportTable{}, std::filesystem::temp_directory_path() / "moerec_empty"), ValidationError);
}

TEST(Format, EmitWritesBothFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "moerec_emit";
  std::filesystem::remove_all(dir);
  emit_report(two_rows(), dir, "t1");
  std::ifstream csv(dir / "t1.csv", std::ios::binary);
  std::stringstream buf;
  buf << csv.rdbuf();
  EXPECT_EQ(buf.str(), format_csv(two_rows()));
  EXPECT_TRUE(std::filesystem::exists(dir / "t1.md"));
  std::filesystem::remove_all(dir);
}

TEST(Spec, ParsesAndResolvesPaths) {
  const auto j = nlohmann::json::parse(R"({
    "grid": "moe", "seeds": [1, 2], "data": "prepared", "embeddings": "/abs/emb",
    "train": {"epochs": 5, "phase_a_epochs": 2},
    "cells": [{"name": "moe_dnn_dnn", "model": {"expert_kind": "dnn", "gate_kind": "dnn"}}]
  })");
  const AblationSpec s = ablation_spec_from_json(j, "/base");
  EXPECT_EQ(s.grid, Grid::moe);
  EXPECT_EQ(s.seeds, (std::vector<std::uint64_t>{1, 2}));
  EXPECT_EQ(s.data_dir, std::filesystem::path("/base/prepared"));
  EXPECT_EQ(s.embeddings_dir, std::filesystem::path("/abs/emb"));
  EXPECT_EQ(s.train.epochs, 5);
  ASSERT_EQ(s.resolved_cells().size(), 1u);
  EXPECT_EQ(s.resolved_cells()[0].model.at("expert_kind"), "dnn");
  const AblationSpec again = ablation_spec_from_json(nlohmann::json(s));
  EXPECT_EQ(nlohmann::json(again), nlohmann::json(s));
}

TEST(Spec, Errors) {
  EXPECT_THROW(ablation_spec_from_json(nlohmann::json::parse(R"({"seeds": []})")), ConfigError);
  EXPECT_THROW(ablation_spec_from_json(nlohmann::json::parse(R"({"seeds": [0]})")), ConfigError);
  EXPECT_THROW(ablation_spec_from_json(nlohmann::json::parse(R"({"grid": "table3", "synth": {}})")), ConfigError);
  EXPECT_THROW(ablation_spec_from_json(nlohmann::json::parse(R"({"synth": {}, "cells": [{"name": "audio_only"}]})")),
               ConfigError);
}

AblationSpec tiny_spec() {
  AblationSpec spec;
  spec.synth = SynthSpec{};
  spec.synth->n_users = 12;
  spec.synth->n_products = 8;
  spec.seeds = {0, 1};
  spec.train.epochs = 2;
  spec.train.phase_a_epochs = 1;
  spec.train.batch_size = 8;
  spec.model.ncf_hidden = 16;
  spec.model.expert_depth = 1;
  AblationCell cell{"multimodal", {Modality::text, Modality::image},
                    {{"n_experts", 1}, {"top_k_experts", 1}, {"expert_kind", "dnn"}, {"gate_kind", "dnn"}}};
  AblationCell moe{"moe_multimodal", {Modality::text, Modality::image}, {{"expert_kind", "dnn"}}};
  spec.cells = {cell, moe};
  return spec;
}

TEST(Ablation, ThreadCountDoesNotChangeResults) {
  const AblationSpec spec = tiny_spec();
  const ExperimentData data = load_experiment_data(spec);
  const auto serial = run_ablation(data, spec, {}, 1);
  const auto parallel = run_ablation(data, spec, {}, 3);
  EXPECT_EQ(format_csv(serial), format_csv(parallel));
  ASSERT_EQ(serial.rows.size(), 2u);
  EXPECT_EQ(serial.rows[1].runs[1].seed, 1u);
}

TEST(Ablation, WritesRunFilesAndManifest) {
  const AblationSpec spec = tiny_spec();
  const auto dir = std::filesystem::temp_directory_path() / "moerec_ablate";
  std::filesystem::remove_all(dir);
  run_ablation(load_experiment_data(spec), spec, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "runs" / "moe_multimodal" / "seed-1" / "metrics.json"));
  std::ifstream in(dir / "manifest.json");
  const auto manifest = nlohmann::json::parse(in);
  EXPECT_EQ(manifest.at("runs").size(), 4u);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace moerec
