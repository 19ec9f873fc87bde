// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

// moerec: preprocessing, stub encoding, training, evaluation and ablations.

#include "moerec/errors.hpp"
#include "moerec/experiment.hpp"
#include "moerec/synth.hpp"
#include "moerec/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace moerec;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out || !(out << j.dump(2) << '\n')) throw IoError("cannot write " + path.string());
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::optional<std::uint64_t> seed_override() {
  const char* v = std::getenv("MOEREC_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  char* end = nullptr;
  const unsigned long long seed = std::strtoull(v, &end, 10);
  if (*end != '\0' || *v == '-')
    throw ConfigError(std::string("MOEREC_SEED must be a non-negative integer, got '") + v + "'");
  return seed;
}

/// text.jsonl and image.jsonl from `dir` when given, stub-encoded user
/// content otherwise.
std::map<Modality, EmbeddingFile> user_embeddings(const PreparedDataset& data, const fs::path& data_dir,
                                                  const fs::path& dir) {
  if (dir.empty()) return stub_user_embeddings(data.users, file_image_loader(data_dir / data.manifest.image_root));
  std::map<Modality, EmbeddingFile> out;
  for (const char* name : {"text.jsonl", "image.jsonl"}) {
    if (!fs::exists(dir / name)) continue;
    EmbeddingFile file = load_embeddings(dir / name);
    out[file.modality] = std::move(file);
  }
  return out;
}

int cmd_prep(const fs::path& users, const fs::path& products, const fs::path& interactions, const fs::path& images,
             const fs::path& out, std::uint64_t split_seed, double fraction) {
  if (const auto s = seed_override()) split_seed = *s;
  PreparedDataset data = preprocess(read_users(users), read_products(products), read_interactions(interactions),
                                    read_image_index(images), split_seed, fraction);
  data.manifest.image_root = fs::absolute(images).parent_path().string();
  write_prepared(data, out);
  std::cout << "prepared " << data.users.size() << " users, " << data.products.size() << " products, "
            << data.split.train.size() << "/" << data.split.test.size() << " train/test interactions";
  if (!data.manifest.dropped_products.empty())
    std::cout << "; dropped " << data.manifest.dropped_products.size() << " products without images";
  std::cout << '\n';
  return 0;
}

int cmd_synth(const fs::path& spec_path, const fs::path& out) {
  SynthSpec spec;
  try {
    spec = read_json_file(spec_path).get<SynthSpec>();
  } catch (const json::exception& e) {
    throw ConfigError(spec_path.string() + ": " + e.what());
  }
  if (const auto s = seed_override()) spec.seed = *s;
  make_dirs(out);
  write_synth(synth_generate(spec), out);
  std::cout << "wrote " << spec.n_users << " users, " << spec.n_products << " products to " << out.string() << '\n';
  return 0;
}

int cmd_embed_stub(const fs::path& in, const fs::path& out, Index dim) {
  const PreparedDataset data = read_prepared(in);
  const auto files = stub_user_embeddings(data.users, file_image_loader(in / data.manifest.image_root), dim);
  make_dirs(out);
  for (const auto& [modality, file] : files) {
    std::vector<EmbeddingRecord> records;
    for (const auto& [id, rec] : file.records) records.push_back(rec);
    write_embeddings(out / (to_string(modality) + ".jsonl"), modality, file.dim, records);
  }
  std::cout << "encoded " << data.users.size() << " users into " << out.string() << '\n';
  return 0;
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

RunConfig read_run_config(const fs::path& path) {
  const json j = read_json_file(path);
  RunConfig c;
  try {
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return c;
}

int cmd_train(const fs::path& config_path, const fs::path& data_dir, const fs::path& out, const fs::path& emb_dir) {
  RunConfig rc = read_run_config(config_path);
  if (const auto s = seed_override()) rc.model.seed = rc.train.seed = *s;
  const PreparedDataset data = read_prepared(data_dir);
  rc.model.n_products = static_cast<int>(data.products.size());
  rc.model.validate();
  rc.train.validate(rc.model);

  const FeatureTable features = build_features(data, rc.model.modalities, user_embeddings(data, data_dir, emb_dir));
  rc.model.source_dims.clear();
  for (const Mat& e : features.embeddings) rc.model.source_dims.push_back(e.cols());
  const Samples samples = make_samples(data, features, data.split.train);
  const GroundTruth truth = relevant_items(data, data.split.test);

  MoeModel model(rc.model);
  TrainReport report = train(model, {features, samples, &truth}, rc.train);
  make_dirs(out);
  save_checkpoint(model, out / "checkpoint");
  report.checkpoint = (out / "checkpoint").string();

  std::vector<std::string> users;
  for (const auto& [user, relevant] : truth) users.push_back(user);
  const MetricReport metrics = evaluate(truth, predict_topk(model, features, users, rc.train.k), rc.train.k);
  write_json_file(out / "report.json", report);
  write_json_file(out / "metrics.json", metrics);
  std::cout << "loss " << report.initial_loss << " -> " << report.final_loss << "; test " << json(metrics).dump()
            << '\n';
  return 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, int k, const fs::path& emb_dir,
             const fs::path& rankings_out) {
  const MoeModel model = load_checkpoint(checkpoint);
  const PreparedDataset data = read_prepared(data_dir);
  if (static_cast<int>(data.products.size()) != model.config().n_products)
    throw ValidationError("checkpoint scores " + std::to_string(model.config().n_products) + " products, dataset has " +
                          std::to_string(data.products.size()));
  const FeatureTable features =
      build_features(data, model.config().modalities, user_embeddings(data, data_dir, emb_dir));
  const GroundTruth truth = relevant_items(data, data.split.test);
  std::vector<std::string> users;
  for (const auto& [user, relevant] : truth) users.push_back(user);
  const Rankings rankings = predict_topk(model, features, users, k);
  if (!rankings_out.empty()) write_rankings(rankings_out, rankings);
  std::cout << json(evaluate(truth, rankings, k)).dump(2) << '\n';
  return 0;
}

int cmd_ablate(const std::string& grid, const fs::path& spec_path, const fs::path& out, int jobs) {
  AblationSpec spec = ablation_spec_from_json(read_json_file(spec_path), spec_path.parent_path());
  if (!grid.empty()) spec.grid = parse_grid(grid);
  if (const auto s = seed_override()) spec.seeds = {*s};
  if (spec.grid == Grid::modality)
    for (const auto& cell : spec.cells)
      if (cell.name != "text_only" && cell.name != "image_only" && cell.name != "multimodal" &&
          cell.name != "moe_multimodal")
        throw ConfigError("modality grid has no cell named '" + cell.name + "'");
  const ExperimentData data = load_experiment_data(spec);
  // Surface missing embeddings before any training starts.
  for (const auto& cell : spec.resolved_cells()) build_features(data.dataset, cell.modalities, data.embeddings);

  const ReportTable table = run_ablation(data, spec, out, jobs);
  emit_report(table, out, "table");
  std::cout << format_markdown(table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal mixture-of-experts recommender"};
  app.require_subcommand(1);

  fs::path users, products, interactions, images, out, spec, in, config, data, checkpoint, embeddings, rankings;
  std::uint64_t split_seed = 0;
  double fraction = 0.8;
  Index dim = kModelDim;
  int k = 5;
  std::string grid;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  auto* prep = app.add_subcommand("prep", "Merge, fill, label and split raw JSON Lines inputs");
  prep->add_option("--users", users, "users.jsonl")->required();
  prep->add_option("--products", products, "products.jsonl")->required();
  prep->add_option("--interactions", interactions, "interactions.jsonl")->required();
  prep->add_option("--images", images, "image index JSON Lines; refs resolve against its directory")->required();
  prep->add_option("--out", out, "output directory")->required();
  prep->add_option("--split-seed", split_seed, "train/test split seed");
  prep->add_option("--train-fraction", fraction, "fraction of interactions used for training");

  auto* synth = app.add_subcommand("synth", "Write a seeded synthetic dataset");
  synth->add_option("--spec", spec, "synthetic dataset spec (JSON)")->required();
  synth->add_option("--out", out, "output directory")->required();

  auto* embed = app.add_subcommand("embed-stub", "Stub-encode user text and images of a prepared dataset");
  embed->add_option("--in", in, "prepared dataset directory")->required();
  embed->add_option("--out", out, "output directory")->required();
  embed->add_option("--dim", dim, "embedding width");

  auto* train_cmd = app.add_subcommand("train", "Train one model and save a checkpoint");
  train_cmd->add_option("--config", config, "run config (JSON with model and train sections)")->required();
  train_cmd->add_option("--data", data, "prepared dataset directory")->required();
  train_cmd->add_option("--out", out, "output directory")->required();
  train_cmd->add_option("--embeddings", embeddings, "directory with text.jsonl / image.jsonl");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval->add_option("--data", data, "prepared dataset directory")->required();
  eval->add_option("--k", k, "cutoff K")->check(CLI::PositiveNumber);
  eval->add_option("--embeddings", embeddings, "directory with text.jsonl / image.jsonl");
  eval->add_option("--rankings", rankings, "write the top-K rankings here");

  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid and write table.csv / table.md");
  ablate->add_option("--grid", grid, "modality or moe; overrides the spec")->check(CLI::IsMember({"modality", "moe"}));
  ablate->add_option("--spec", spec, "ablation spec (JSON)")->required();
  ablate->add_option("--out", out, "output directory")->required();
  ablate->add_option("--jobs", jobs, "parallel runs")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*prep) return cmd_prep(users, products, interactions, images, out, split_seed, fraction);
    if (*synth) return cmd_synth(spec, out);
    if (*embed) return cmd_embed_stub(in, out, dim);
    if (*train_cmd) return cmd_train(config, data, out, embeddings);
    if (*eval) return cmd_eval(checkpoint, data, k, embeddings, rankings);
    if (*ablate) return cmd_ablate(grid, spec, out, jobs);
  } catch (const IoError& e) {
    std::cerr << "moerec: " << e.what() << '\n';
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "moerec: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "moerec: " << e.what() << '\n';
    return 2;
  } catch (const std::logic_error& e) {
    std::cerr << "moerec: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "moerec: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
