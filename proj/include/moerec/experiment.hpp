// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

// Ablation grids: one trained model per (cell, seed), evaluated on the test
// split and reduced to a mean / stddev table.

#pragma once

#include "moerec/synth.hpp"
#include "moerec/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace moerec {

enum class Grid { modality, moe };

std::string to_string(Grid g);
Grid parse_grid(const std::string& s);

struct AblationCell {
  std::string name;
  std::vector<Modality> modalities{Modality::text, Modality::image};
  nlohmann::json model = nlohmann::json::object();  // ModelConfig overrides
};

/// text_only, image_only, multimodal (single DNN expert, no gate) and
/// moe_multimodal (default mixture).
std::vector<AblationCell> modality_cells();
/// {transformer, dnn, cnn} x {stacking, dnn}, multimodal.
std::vector<AblationCell> moe_cells();

struct AblationSpec {
  Grid grid = Grid::modality;
  std::vector<AblationCell> cells;  // grid defaults when empty
  std::vector<std::uint64_t> seeds{0};
  std::optional<SynthSpec> synth;
  std::filesystem::path data_dir;        // prepared dataset, when not synthetic
  std::filesystem::path embeddings_dir;  // text.jsonl / image.jsonl; stub-encoded when empty
  std::uint64_t split_seed = 0;
  TrainConfig train;
  ModelConfig model;  // base settings shared by every cell

  const std::vector<AblationCell>& resolved_cells() const;
};

void to_json(nlohmann::json& j, const AblationSpec& s);
/// Relative paths are resolved against `base`.
AblationSpec ablation_spec_from_json(const nlohmann::json& j, const std::filesystem::path& base = {});

/// A prepared dataset with its stub or file embeddings.
struct ExperimentData {
  PreparedDataset dataset;
  std::map<Modality, EmbeddingFile> embeddings;
};

ExperimentData synth_experiment_data(const SynthSpec& spec, std::uint64_t split_seed);
ExperimentData load_experiment_data(const AblationSpec& spec);

struct CellRun {
  std::uint64_t seed = 0;
  MetricReport metrics;
  TrainReport report;
};

struct TableRow {
  std::string cell;
  MetricReport mean;
  MetricReport stddev;  // sample standard deviation; zero for one seed
  std::vector<CellRun> runs;
};

struct ReportTable {
  int k = 5;
  std::vector<TableRow> rows;
};

/// Trains and evaluates one cell for one seed. Model and data-order seeds are
/// both `seed`.
CellRun run_cell(const ExperimentData& data, const AblationSpec& spec, const AblationCell& cell, std::uint64_t seed);

/// Runs every cell for every seed on up to `jobs` threads. Results do not
/// depend on `jobs`. With a nonempty `out_dir`, writes each run's
/// metrics.json and report.json plus a manifest linking them.
ReportTable run_ablation(const ExperimentData& data, const AblationSpec& spec,
                         const std::filesystem::path& out_dir = {}, int jobs = 1);

ReportTable run_modality_ablation(const ExperimentData& data, AblationSpec spec,
                                  const std::filesystem::path& out_dir = {}, int jobs = 1);
ReportTable run_moe_ablation(const ExperimentData& data, AblationSpec spec, const std::filesystem::path& out_dir = {},
                             int jobs = 1);

std::string format_csv(const ReportTable& table);
std::string format_markdown(const ReportTable& table);

/// Writes <stem>.csv and <stem>.md into `dir`. Throws ValidationError for an
/// empty table and IoError when the files cannot be written.
void emit_report(const ReportTable& table, const std::filesystem::path& dir, const std::string& stem = "table");

}  // namespace moerec
