// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "moerec/experiment.hpp"

#include "moerec/errors.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

namespace moerec {

using nlohmann::json;

std::string to_string(Grid g) { return g == Grid::modality ? "modality" : "moe"; }

Grid parse_grid(const std::string& s) {
  if (s == "modality") return Grid::modality;
  if (s == "moe" || s == "moe_structure") return Grid::moe;
  throw ConfigError("grid must be modality or moe, got '" + s + "'");
}

std::vector<AblationCell> modality_cells() {
  const json single = {{"n_experts", 1}, {"top_k_experts", 1}, {"expert_kind", "dnn"}, {"gate_kind", "dnn"}};
  return {{"text_only", {Modality::text}, single},
          {"image_only", {Modality::image}, single},
          {"multimodal", {Modality::text, Modality::image}, single},
          {"moe_multimodal", {Modality::text, Modality::image}, json::object()}};
}

std::vector<AblationCell> moe_cells() {
  std::vector<AblationCell> cells;
  for (auto expert : {ExpertKind::transformer, ExpertKind::dnn, ExpertKind::cnn})
    for (auto gate : {GateKind::stacking, GateKind::dnn})
      cells.push_back({"moe_" + to_string(expert) + "_" + to_string(gate),
                       {Modality::text, Modality::image},
                       {{"expert_kind", to_string(expert)}, {"gate_kind", to_string(gate)}}});
  return cells;
}

const std::vector<AblationCell>& AblationSpec::resolved_cells() const {
  static const std::vector<AblationCell> modality = modality_cells();
  static const std::vector<AblationCell> moe = moe_cells();
  if (!cells.empty()) return cells;
  return grid == Grid::modality ? modality : moe;
}

void to_json(json& j, const AblationSpec& s) {
  json cells = json::array();
  for (const auto& c : s.cells) {
    std::vector<std::string> mods;
    for (auto m : c.modalities) mods.push_back(to_string(m));
    cells.push_back({{"name", c.name}, {"modalities", mods}, {"model", c.model}});
  }
  j = json{{"grid", to_string(s.grid)}, {"seeds", s.seeds},  {"split_seed", s.split_seed},
           {"train", s.train},          {"model", s.model},  {"cells", cells}};
  if (s.synth) j["synth"] = *s.synth;
  if (!s.data_dir.empty()) j["data"] = s.data_dir.string();
  if (!s.embeddings_dir.empty()) j["embeddings"] = s.embeddings_dir.string();
}

AblationSpec ablation_spec_from_json(const json& j, const std::filesystem::path& base) {
  AblationSpec s;
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
  };
  try {
    if (j.contains("grid")) s.grid = parse_grid(j.at("grid").get<std::string>());
    if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    s.split_seed = j.value("split_seed", s.split_seed);
    if (j.contains("train")) s.train = j.at("train").get<TrainConfig>();
    if (j.contains("model")) s.model = j.at("model").get<ModelConfig>();
    if (j.contains("synth")) s.synth = j.at("synth").get<SynthSpec>();
    if (j.contains("data")) s.data_dir = resolve(j.at("data").get<std::string>());
    if (j.contains("embeddings")) s.embeddings_dir = resolve(j.at("embeddings").get<std::string>());
    for (const auto& c : j.value("cells", json::array())) {
      AblationCell cell;
      cell.name = c.at("name").get<std::string>();
      if (c.contains("modalities")) {
        cell.modalities.clear();
        for (const auto& m : c.at("modalities")) cell.modalities.push_back(parse_modality(m.get<std::string>()));
      }
      cell.model = c.value("model", json::object());
      s.cells.push_back(std::move(cell));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("ablation spec: ") + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("ablation spec: ") + e.what());
  }
  if (s.seeds.empty()) throw ConfigError("ablation spec: seeds must not be empty");
  if (!s.synth && s.data_dir.empty()) throw ConfigError("ablation spec: needs either synth or data");
  if (s.grid == Grid::modality)
    for (const auto& c : s.cells)
      if (c.name != "text_only" && c.name != "image_only" && c.name != "multimodal" && c.name != "moe_multimodal")
        throw ConfigError("modality grid has no cell named '" + c.name + "'");
  return s;
}

ExperimentData synth_experiment_data(const SynthSpec& spec, std::uint64_t split_seed) {
  const SynthDataset synth = synth_generate(spec);
  ExperimentData out;
  out.dataset = preprocess(synth.users, synth.products, synth.interactions, synth.image_index, split_seed);
  out.embeddings = stub_user_embeddings(out.dataset.users, [&](const std::string& ref) -> std::optional<std::string> {
    const auto it = synth.images.find(ref);
    if (it == synth.images.end()) return std::nullopt;
    return it->second;
  });
  return out;
}

ExperimentData load_experiment_data(const AblationSpec& spec) {
  if (spec.synth) return synth_experiment_data(*spec.synth, spec.split_seed);
  ExperimentData out;
  out.dataset = read_prepared(spec.data_dir);
  if (spec.embeddings_dir.empty()) {
    const std::filesystem::path root = spec.data_dir / out.dataset.manifest.image_root;
    out.embeddings = stub_user_embeddings(out.dataset.users, file_image_loader(root));
  } else {
    for (const char* name : {"text.jsonl", "image.jsonl"}) {
      const auto path = spec.embeddings_dir / name;
      if (!std::filesystem::exists(path)) continue;
      EmbeddingFile file = load_embeddings(path);
      out.embeddings[file.modality] = std::move(file);
    }
  }
  return out;
}

namespace {

ModelConfig cell_config(const ExperimentData& data, const AblationSpec& spec, const AblationCell& cell,
                        std::uint64_t seed) {
  json j = spec.model;
  j.merge_patch(cell.model);
  ModelConfig config = j.get<ModelConfig>();
  config.modalities = cell.modalities;
  config.source_dims.clear();
  for (Modality m : cell.modalities) {
    const auto it = data.embeddings.find(m);
    if (it == data.embeddings.end())
      throw ConfigError("cell " + cell.name + " selects " + to_string(m) + " but no embeddings are available");
    config.source_dims.push_back(it->second.dim);
  }
  config.n_products = static_cast<int>(data.dataset.products.size());
  config.seed = seed;
  config.validate();
  return config;
}

MetricReport mean_of(const std::vector<CellRun>& runs) {
  MetricReport m;
  for (const auto& r : runs) {
    m.precision_at_k += r.metrics.precision_at_k;
    m.recall_at_k += r.metrics.recall_at_k;
    m.ndcg_at_k += r.metrics.ndcg_at_k;
    m.map_at_k += r.metrics.map_at_k;
  }
  const auto n = static_cast<double>(runs.size());
  m.precision_at_k /= n;
  m.recall_at_k /= n;
  m.ndcg_at_k /= n;
  m.map_at_k /= n;
  m.k = runs.front().metrics.k;
  m.n_users_evaluated = runs.front().metrics.n_users_evaluated;
  return m;
}

MetricReport stddev_of(const std::vector<CellRun>& runs, const MetricReport& mean) {
  MetricReport s;
  s.k = mean.k;
  s.n_users_evaluated = mean.n_users_evaluated;
  if (runs.size() < 2) return s;
  for (const auto& r : runs) {
    s.precision_at_k += std::pow(r.metrics.precision_at_k - mean.precision_at_k, 2);
    s.recall_at_k += std::pow(r.metrics.recall_at_k - mean.recall_at_k, 2);
    s.ndcg_at_k += std::pow(r.metrics.ndcg_at_k - mean.ndcg_at_k, 2);
    s.map_at_k += std::pow(r.metrics.map_at_k - mean.map_at_k, 2);
  }
  const auto d = static_cast<double>(runs.size() - 1);
  s.precision_at_k = std::sqrt(s.precision_at_k / d);
  s.recall_at_k = std::sqrt(s.recall_at_k / d);
  s.ndcg_at_k = std::sqrt(s.ndcg_at_k / d);
  s.map_at_k = std::sqrt(s.map_at_k / d);
  return s;
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out || !(out << j.dump(2) << '\n')) throw IoError("cannot write " + path.string());
}

}  // namespace

CellRun run_cell(const ExperimentData& data, const AblationSpec& spec, const AblationCell& cell, std::uint64_t seed) {
  MoeModel model(cell_config(data, spec, cell, seed));
  const FeatureTable features = build_features(data.dataset, cell.modalities, data.embeddings);
  const Samples samples = make_samples(data.dataset, features, data.dataset.split.train);
  const GroundTruth truth = relevant_items(data.dataset, data.dataset.split.test);

  TrainConfig tc = spec.train;
  tc.seed = seed;
  CellRun run;
  run.seed = seed;
  run.report = train(model, {features, samples, nullptr}, tc);
  std::vector<std::string> users;
  for (const auto& [user, relevant] : truth) users.push_back(user);
  run.metrics = evaluate(truth, predict_topk(model, features, users, tc.k), tc.k);
  return run;
}

ReportTable run_ablation(const ExperimentData& data, const AblationSpec& spec, const std::filesystem::path& out_dir,
                         int jobs) {
  const auto& cells = spec.resolved_cells();
  const std::size_t n_seeds = spec.seeds.size();
  std::vector<CellRun> runs(cells.size() * n_seeds);

  // Runs are independent; workers claim them in order and results land in
  // fixed slots, so the table does not depend on scheduling.
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(runs.size());
  auto work = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      try {
        runs[i] = run_cell(data, spec, cells[i / n_seeds], spec.seeds[i % n_seeds]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::clamp<long>(jobs, 1, static_cast<long>(runs.size())));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  ReportTable table;
  table.k = spec.train.k;
  json manifest = {{"spec", spec}, {"runs", json::array()}};
  for (std::size_t c = 0; c < cells.size(); ++c) {
    TableRow row;
    row.cell = cells[c].name;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      row.runs.push_back(std::move(runs[c * n_seeds + s]));
      if (out_dir.empty()) continue;
      const auto rel = std::filesystem::path("runs") / row.cell / ("seed-" + std::to_string(spec.seeds[s]));
      std::error_code ec;
      std::filesystem::create_directories(out_dir / rel, ec);
      if (ec) throw IoError("cannot create " + (out_dir / rel).string() + ": " + ec.message());
      write_json(out_dir / rel / "metrics.json", row.runs.back().metrics);
      write_json(out_dir / rel / "report.json", row.runs.back().report);
      manifest["runs"].push_back(
          {{"cell", row.cell}, {"seed", spec.seeds[s]}, {"metrics", (rel / "metrics.json").generic_string()}});
    }
    row.mean = mean_of(row.runs);
    row.stddev = stddev_of(row.runs, row.mean);
    table.rows.push_back(std::move(row));
  }
  if (!out_dir.empty()) write_json(out_dir / "manifest.json", manifest);
  return table;
}

ReportTable run_modality_ablation(const ExperimentData& data, AblationSpec spec, const std::filesystem::path& out_dir,
                                  int jobs) {
  spec.grid = Grid::modality;
  return run_ablation(data, spec, out_dir, jobs);
}

ReportTable run_moe_ablation(const ExperimentData& data, AblationSpec spec, const std::filesystem::path& out_dir,
                             int jobs) {
  spec.grid = Grid::moe;
  return run_ablation(data, spec, out_dir, jobs);
}

namespace {

std::string fixed(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::array<double, 4> values(const MetricReport& m) {
  return {m.precision_at_k, m.recall_at_k, m.ndcg_at_k, m.map_at_k};
}

constexpr std::array<const char*, 4> kColumns = {"Precision@K", "Recall@K", "NDCG", "MAP@5"};

}  // namespace

std::string format_csv(const ReportTable& table) {
  std::ostringstream out;
  out << "Model";
  for (const char* c : kColumns) out << ',' << c << ',' << c << " std";
  out << ",seeds\r\n";
  for (const auto& row : table.rows) {
    out << csv_field(row.cell);
    const auto mean = values(row.mean), sd = values(row.stddev);
    for (std::size_t i = 0; i < mean.size(); ++i) out << ',' << fixed("%.17g", mean[i]) << ',' << fixed("%.17g", sd[i]);
    out << ',' << row.runs.size() << "\r\n";
  }
  return out.str();
}

std::string format_markdown(const ReportTable& table) {
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"Model"});
  for (const char* c : kColumns) cells.back().push_back(c);
  for (const auto& row : table.rows) {
    std::vector<std::string> line{row.cell};
    const auto mean = values(row.mean), sd = values(row.stddev);
    for (std::size_t i = 0; i < mean.size(); ++i)
      line.push_back(row.runs.size() > 1 ? fixed("%.2f", mean[i]) + " ± " + fixed("%.2f", sd[i])
                                         : fixed("%.2f", mean[i]));
    cells.push_back(std::move(line));
  }
  // widths in code points
  auto width = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) n += (c & 0xC0) != 0x80;
    return n;
  };
  std::vector<std::size_t> widths(cells.front().size(), 3);
  for (const auto& line : cells)
    for (std::size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], width(line[i]));

  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& line) {
    out << '|';
    for (std::size_t i = 0; i < line.size(); ++i) out << ' ' << line[i] << std::string(widths[i] - width(line[i]), ' ') << " |";
    out << '\n';
  };
  emit(cells.front());
  out << '|';
  for (std::size_t w : widths) out << ' ' << std::string(w, '-') << " |";
  out << '\n';
  for (std::size_t r = 1; r < cells.size(); ++r) emit(cells[r]);
  return out.str();
}

void emit_report(const ReportTable& table, const std::filesystem::path& dir, const std::string& stem) {
  if (table.rows.empty()) throw ValidationError("report table is empty");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& [ext, text] : {std::pair{".csv", format_csv(table)}, std::pair{".md", format_markdown(table)}}) {
    const auto path = dir / (stem + ext);
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text)) throw IoError("cannot write " + path.string());
  }
}

}  // namespace moerec
