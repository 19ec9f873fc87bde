// SPDX-FileCopyrightText: © 2026 moerec contributors
//
// SPDX-License-Identifier: Apache-2.0

#include "moerec/training.hpp"

#include "moerec/adam.hpp"
#include "moerec/errors.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstring>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

namespace moerec {

using nlohmann::json;

Index FeatureTable::row(const std::string& user_id) const {
  const auto it = std::lower_bound(user_ids.begin(), user_ids.end(), user_id);
  if (it == user_ids.end() || *it != user_id) throw IndexError("no features for user " + user_id);
  return static_cast<Index>(it - user_ids.begin());
}

std::vector<Tensor> FeatureTable::gather(std::span<const Index> rows, Tensor& structured_out) const {
  auto pick = [&](const Mat& source) {
    Mat out(static_cast<Index>(rows.size()), source.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = source.row(rows[i]);
    return out;
  };
  std::vector<Tensor> out;
  for (const Mat& m : embeddings) out.push_back(Tensor::constant(pick(m)));
  structured_out = Tensor::constant(pick(structured));
  return out;
}

FeatureTable build_features(const PreparedDataset& data, const std::vector<Modality>& modalities,
                            const std::map<Modality, EmbeddingFile>& embeddings) {
  FeatureTable table;
  table.modalities = modalities;
  for (const auto& u : data.users) table.user_ids.push_back(u.user_id);
  std::sort(table.user_ids.begin(), table.user_ids.end());
  const auto n = table.n_users();

  for (Modality m : modalities) {
    const auto file = embeddings.find(m);
    if (file == embeddings.end()) throw ConfigError("no " + to_string(m) + " embeddings supplied");
    Mat block(n, file->second.dim);
    for (Index r = 0; r < n; ++r) {
      const auto& id = table.user_ids[static_cast<std::size_t>(r)];
      const auto rec = file->second.records.find(id);
      if (rec == file->second.records.end()) throw ConfigError("no " + to_string(m) + " embedding for user " + id);
      for (Index c = 0; c < block.cols(); ++c) block(r, c) = rec->second.values[static_cast<std::size_t>(c)];
    }
    table.embeddings.push_back(std::move(block));
  }

  table.structured.resize(n, kStructuredDim);
  for (Index r = 0; r < n; ++r) {
    const auto f = encode_structured(data.user(table.user_ids[static_cast<std::size_t>(r)]), data.manifest.norm_stats);
    for (Index c = 0; c < kStructuredDim; ++c) table.structured(r, c) = f[static_cast<std::size_t>(c)];
  }
  return table;
}

std::map<Modality, EmbeddingFile> stub_user_embeddings(const std::vector<UserRecord>& users, const ImageLoader& load,
                                                       Index dim) {
  std::map<Modality, EmbeddingFile> out;
  out[Modality::text] = {Modality::text, dim, {}, 0};
  out[Modality::image] = {Modality::image, dim, {}, 0};
  for (const auto& u : users) {
    EmbeddingRecord text = stub_encode_text(u.self_description, dim);
    text.entity_id = u.user_id;
    out[Modality::text].records[u.user_id] = std::move(text);

    std::optional<std::string> bytes;
    if (u.image_ref) bytes = load(*u.image_ref);
    EmbeddingRecord image = stub_encode_image(bytes ? *bytes : std::string(), dim);
    image.entity_id = u.user_id;
    out[Modality::image].records[u.user_id] = std::move(image);
  }
  return out;
}

ImageLoader file_image_loader(const std::filesystem::path& image_root) {
  return [image_root](const std::string& ref) -> std::optional<std::string> {
    std::ifstream in(image_root / ref, std::ios::binary);
    if (!in) return std::nullopt;
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
}

Samples make_samples(const PreparedDataset& data, const FeatureTable& features,
                     const std::vector<Interaction>& interactions) {
  Samples s;
  for (const auto& i : interactions) {
    if (i.relevance != 1) continue;
    const ProductRecord& p = data.product(i.product_id);
    if (!p.label) throw ContractError("product " + p.product_id + " has no label");
    s.rows.push_back(features.row(i.user_id));
    s.labels.push_back(*p.label);
    s.aux_labels.push_back(static_cast<int>(p.category));
  }
  return s;
}

GroundTruth relevant_items(const PreparedDataset& data, const std::vector<Interaction>& interactions) {
  GroundTruth truth;
  for (const auto& i : interactions)
    if (i.relevance == 1) truth[i.user_id].insert(*data.product(i.product_id).label);
  return truth;
}

void TrainConfig::validate(const ModelConfig& model) const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (phase_a_epochs < 0) throw ConfigError("phase_a_epochs must be >= 0");
  if (model.gate_kind == GateKind::stacking && model.n_experts > 1 && epochs > 0 && epochs < phase_a_epochs)
    throw ConfigError("stacking needs epochs >= phase_a_epochs (" + std::to_string(phase_a_epochs) + ")");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},         {"batch_size", c.batch_size},         {"lr", c.lr}, {"seed", c.seed},
           {"eval_every", c.eval_every}, {"phase_a_epochs", c.phase_a_epochs}, {"k", c.k}};
}

void from_json(const json& j, TrainConfig& c) {
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.phase_a_epochs = j.value("phase_a_epochs", c.phase_a_epochs);
    c.k = j.value("k", c.k);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

void to_json(json& j, const TrainReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs)
    epochs.push_back(
        {{"epoch", e.epoch}, {"total", e.total}, {"recommendation", e.recommendation}, {"auxiliary", e.auxiliary}});
  json evals = json::array();
  for (const auto& e : r.evals) evals.push_back({{"epoch", e.epoch}, {"metrics", e.metrics}});
  j = json{{"initial_loss", r.initial_loss}, {"final_loss", r.final_loss}, {"epochs", epochs},
           {"evals", evals},                 {"wall_seconds", r.wall_seconds}, {"checkpoint", r.checkpoint}};
}

namespace {

Tensor fused_batch(const MoeModel& model, const FeatureTable& features, std::span<const Index> rows, Tape* tape) {
  Tensor structured;
  std::vector<Tensor> modalities = features.gather(rows, structured);
  if (tape) {
    for (auto& m : modalities) m = m.on(*tape);
    structured = structured.on(*tape);
  }
  return model.fuse(modalities, structured);
}

// Subnormal arithmetic is orders of magnitude slower on x86; flush it while
// training and restore the caller's mode afterwards.
class FlushSubnormals {
 public:
#if defined(__SSE__)
  FlushSubnormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~FlushSubnormals() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

template <typename Fn>
void for_each_batch(std::size_t n, int batch_size, Fn fn) {
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size))
    fn(start, std::min(n, start + static_cast<std::size_t>(batch_size)));
}

}  // namespace

LossParts evaluate_loss(const MoeModel& model, const FeatureTable& features, const Samples& samples, int batch_size) {
  LossParts parts;
  if (samples.size() == 0) return parts;
  for_each_batch(samples.size(), batch_size, [&](std::size_t lo, std::size_t hi) {
    const std::span<const Index> rows(samples.rows.data() + lo, hi - lo);
    const std::span<const int> labels(samples.labels.data() + lo, hi - lo);
    const std::span<const int> aux(samples.aux_labels.data() + lo, hi - lo);
    const ModelOutput out = model.forward(fused_batch(model, features, rows, nullptr));
    const auto w = static_cast<double>(hi - lo);
    parts.recommendation += w * cross_entropy(out.rec_logits, labels).item();
    parts.auxiliary += w * cross_entropy(out.aux_logits, aux).item();
  });
  const auto n = static_cast<double>(samples.size());
  parts.recommendation /= n;
  parts.auxiliary /= n;
  parts.total = parts.recommendation + model.config().aux_loss_weight * parts.auxiliary;
  return parts;
}

void fit_stacking(MoeModel& model, const FeatureTable& features, const Samples& samples) {
  Mat shared(static_cast<Index>(samples.size()), model.config().model_dim);
  for_each_batch(samples.size(), 64, [&](std::size_t lo, std::size_t hi) {
    const std::span<const Index> rows(samples.rows.data() + lo, hi - lo);
    shared.middleRows(static_cast<Index>(lo), static_cast<Index>(hi - lo)) =
        model.ncf_forward(fused_batch(model, features, rows, nullptr)).value();
  });
  BoostingParams params;
  params.seed = model.config().seed;
  model.set_ensemble(boosted_fit(shared, samples.labels, model.config().n_products, params));
  model.set_stacking_warmup(false);
}

TrainReport train(MoeModel& model, const TrainData& data, const TrainConfig& config) {
  config.validate(model.config());
  const FlushSubnormals flush;
  const auto started = std::chrono::steady_clock::now();
  const Samples& samples = data.train;
  if (samples.size() == 0) throw ValidationError("no relevant training interactions");

  TrainReport report;
  const bool stacking = model.uses_stacking();
  if (stacking && !model.ensemble()) model.set_stacking_warmup(true);
  report.initial_loss = evaluate_loss(model, data.features, samples).total;

  AdamHyperparams hp;
  hp.lr = config.lr;
  Adam adam(model.parameters(), hp);
  Rng rng(config.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const double lambda = model.config().aux_loss_weight;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (stacking && !model.ensemble() && epoch >= config.phase_a_epochs) fit_stacking(model, data.features, samples);
    rng.shuffle(order);
    EpochLoss loss{epoch + 1, 0.0, 0.0, 0.0};
    int batch = 0;
    for_each_batch(order.size(), config.batch_size, [&](std::size_t lo, std::size_t hi) {
      std::vector<Index> rows;
      std::vector<int> labels, aux;
      for (std::size_t i = lo; i < hi; ++i) {
        rows.push_back(samples.rows[order[i]]);
        labels.push_back(samples.labels[order[i]]);
        aux.push_back(samples.aux_labels[order[i]]);
      }
      Tape tape;
      const ModelOutput out = model.forward(fused_batch(model, data.features, rows, &tape));
      const Tensor rec = cross_entropy(out.rec_logits, labels);
      const Tensor aux_loss = cross_entropy(out.aux_logits, aux);
      const Tensor total = add(rec, scale(aux_loss, lambda));
      ++batch;
      if (!std::isfinite(total.item()))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batch));
      tape.backward(total);
      adam.step();
      adam.zero_grad();
      const auto w = static_cast<double>(hi - lo);
      loss.total += w * total.item();
      loss.recommendation += w * rec.item();
      loss.auxiliary += w * aux_loss.item();
    });
    const auto n = static_cast<double>(samples.size());
    loss.total /= n;
    loss.recommendation /= n;
    loss.auxiliary /= n;
    report.epochs.push_back(loss);

    if (data.eval_truth && config.eval_every > 0 && (epoch + 1) % config.eval_every == 0) {
      std::vector<std::string> users;
      for (const auto& [user, relevant] : *data.eval_truth) users.push_back(user);
      report.evals.push_back(
          {epoch + 1, evaluate(*data.eval_truth, predict_topk(model, data.features, users, config.k), config.k)});
    }
  }
  if (stacking && !model.ensemble()) fit_stacking(model, data.features, samples);
  report.final_loss = evaluate_loss(model, data.features, samples).total;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

Ranking rank_top_k(const Mat& logits, Index row, int k) {
  std::vector<int> labels(static_cast<std::size_t>(logits.cols()));
  std::iota(labels.begin(), labels.end(), 0);
  const auto n = std::min(labels.size(), static_cast<std::size_t>(std::max(k, 0)));
  std::partial_sort(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n), labels.end(), [&](int a, int b) {
    const double la = logits(row, a), lb = logits(row, b);
    return la > lb || (la == lb && a < b);
  });
  labels.resize(n);
  return labels;
}

Rankings predict_topk(const MoeModel& model, const FeatureTable& features, const std::vector<std::string>& user_ids,
                      int k) {
  Rankings out;
  for_each_batch(user_ids.size(), 64, [&](std::size_t lo, std::size_t hi) {
    std::vector<Index> rows;
    for (std::size_t i = lo; i < hi; ++i) rows.push_back(features.row(user_ids[i]));
    const Mat logits = model.forward(fused_batch(model, features, rows, nullptr)).rec_logits.value();
    for (std::size_t i = lo; i < hi; ++i) out[user_ids[i]] = rank_top_k(logits, static_cast<Index>(i - lo), k);
  });
  return out;
}

static_assert(std::endian::native == std::endian::little, "params.bin is written in host byte order");

void save_checkpoint(const MoeModel& model, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  auto write_text = [&](const std::string& name, const json& j) {
    std::ofstream out(dir / name);
    if (!out || !(out << j.dump(2) << '\n')) throw IoError("cannot write " + (dir / name).string());
  };
  write_text("config.json", model.config());

  std::ofstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw IoError("cannot write " + (dir / "params.bin").string());
  json index = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : model.named_parameters()) {
    index.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"offset", offset}});
    const auto bytes = static_cast<std::size_t>(t.size()) * sizeof(double);
    bin.write(reinterpret_cast<const char*>(t.value().data()), static_cast<std::streamsize>(bytes));
    offset += bytes;
  }
  if (!bin) throw IoError("write failed for " + (dir / "params.bin").string());
  write_text("params.index.json", index);

  if (model.ensemble())
    write_text("boost.json", *model.ensemble());
  else
    std::filesystem::remove(dir / "boost.json", ec);
}

MoeModel load_checkpoint(const std::filesystem::path& dir) {
  auto read_text = [&](const std::string& name) {
    std::ifstream in(dir / name);
    if (!in) throw IoError("cannot open " + (dir / name).string());
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw ValidationError((dir / name).string() + ": " + e.what());
    }
  };
  MoeModel model(read_text("config.json").get<ModelConfig>());

  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw IoError("cannot open " + (dir / "params.bin").string());
  const std::string blob(std::istreambuf_iterator<char>(bin), {});
  std::map<std::string, Tensor> params;
  for (auto& [name, t] : model.named_parameters()) params[name] = t;

  const json index = read_text("params.index.json");
  if (index.size() != params.size())
    throw ValidationError("checkpoint has " + std::to_string(index.size()) + " tensors, model has " +
                          std::to_string(params.size()));
  for (const auto& entry : index) {
    const auto name = entry.at("name").get<std::string>();
    const auto it = params.find(name);
    if (it == params.end()) throw ValidationError("checkpoint tensor " + name + " is not a model parameter");
    Tensor t = it->second;
    const auto shape = entry.at("shape").get<std::vector<Index>>();
    if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols())
      throw ValidationError("checkpoint tensor " + name + " has the wrong shape");
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto bytes = static_cast<std::size_t>(t.size()) * sizeof(double);
    if (offset + bytes > blob.size()) throw ValidationError("params.bin is truncated at " + name);
    std::memcpy(t.mutable_value().data(), blob.data() + offset, bytes);
  }

  if (std::filesystem::exists(dir / "boost.json")) model.set_ensemble(read_text("boost.json").get<BoostedEnsemble>());
  return model;
}

}  // namespace moerec
