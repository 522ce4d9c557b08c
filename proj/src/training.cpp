#include "c2f/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "c2f/error.hpp"

namespace c2f {

using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[8] = {'C', '2', 'F', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint64_t kCheckpointVersion = 1;

json recall_json(const std::map<std::size_t, double>& recall) {
  json j = json::object();
  for (const auto& [k, v] : recall) j["R@" + std::to_string(k)] = v;
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------

Session::Session(const TrainConfig& config, Vocabulary vocab, std::size_t num_classes)
    : config_(config),
      vocab_(std::move(vocab)),
      num_classes_(num_classes),
      optimizer_(config.adam_beta1, config.adam_beta2, config.adam_epsilon) {
  config_.validate();
  if (num_classes_ < 2) throw DataError("training needs at least two identities");
  Rng rng(config_.seed);
  model_ = std::make_unique<CoarseToFineModel>(config_.model_config(vocab_.size()), store_, rng);
  classifiers_ = std::make_unique<ClassifierBank>(store_, config_.feature_dim, num_classes_,
                                                  config_.model_config(vocab_.size()).coarse_tokens,
                                                  config_.model_config(vocab_.size()).fine_parts,
                                                  config_.single_shared_classifier, rng, config_.init_stddev);
  store_.set_group_trainable("backbone_text", !config_.freeze_text_backbone);
}

std::unique_ptr<Session> Session::create(const TrainConfig& config, Vocabulary vocab, std::size_t num_classes) {
  return std::unique_ptr<Session>(new Session(config, std::move(vocab), num_classes));
}

void Session::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    binio::write_u64(out, kCheckpointVersion);
    binio::write_string(out, config_.to_text());
    binio::write_u64(out, config_.fingerprint());
    binio::write_u64(out, num_classes_);
    binio::write_u64(out, vocab_.size());
    for (const auto& w : vocab_.words()) binio::write_string(out, w);
    binio::write_u64(out, epoch);
    binio::write_u64(out, step);
    store_.save(out);
    optimizer_.save(out);
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::unique_ptr<Session> Session::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + sizeof magic, kCheckpointMagic))
    throw DataError(path.string() + " is not a checkpoint");
  if (binio::read_u64(in) != kCheckpointVersion) throw DataError("unsupported checkpoint version");
  TrainConfig cfg;
  apply_config_text(cfg, binio::read_string(in), path.string());
  if (binio::read_u64(in) != cfg.fingerprint()) throw DataError("checkpoint config fingerprint mismatch");
  const auto classes = binio::read_u64(in);
  const auto vocab_size = binio::read_u64(in);
  std::vector<std::string> words(vocab_size);
  for (auto& w : words) w = binio::read_string(in);
  auto session = create(cfg, Vocabulary(words), classes);
  if (session->vocab().size() != vocab_size) throw DataError("checkpoint vocabulary is malformed");
  session->epoch = binio::read_u64(in);
  session->step = binio::read_u64(in);
  session->store_.load(in);
  session->optimizer_.load(in);
  return session;
}

std::vector<std::vector<double>> Session::snapshot() const {
  std::vector<std::vector<double>> out;
  for (const auto& e : store_.entries()) {
    const auto v = e.tensor.values();
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

void Session::restore(const std::vector<std::vector<double>>& values) {
  const auto& entries = store_.entries();
  if (values.size() != entries.size()) throw ShapeError("snapshot does not match the parameter store");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ag::Tensor tensor = entries[i].tensor;
    auto dst = tensor.mutable_values();
    if (dst.size() != values[i].size()) throw ShapeError("snapshot entry size mismatch: " + entries[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

Vocabulary training_vocabulary(const Dataset& dataset) {
  std::vector<std::string> captions;
  for (auto i : dataset.indices(Split::Train)) captions.push_back(dataset.records()[i].caption);
  return Vocabulary::from_texts(captions);
}

// ---------------------------------------------------------------------------

std::string StepRecord::to_json() const {
  json j = {{"step", step},          {"epoch", epoch},      {"lr", learning_rate},
            {"total", total},        {"id_image", id_image}, {"id_text", id_text},
            {"ranking", ranking},    {"fine_ranking", fine_ranking},
            {"fine_commonality", fine_commonality}};
  return j.dump();
}

std::string EpochRecord::to_json() const {
  json j = {{"epoch", epoch},     {"lr", learning_rate},  {"steps", steps},
            {"total", total},     {"id_image", id_image}, {"id_text", id_text},
            {"ranking", ranking}, {"fine_ranking", fine_ranking}, {"seconds", seconds}};
  if (!val_recall.empty()) j["val"] = recall_json(val_recall);
  return j.dump();
}

std::string EvalReport::to_json() const {
  json j = {{"split", split_name(split)}, {"queries", queries}, {"gallery", gallery}, {"recall", recall_json(recall)}};
  for (const auto& [name, r] : by_granularity) j["by_granularity"][name] = recall_json(r);
  return j.dump();
}

std::vector<std::vector<std::size_t>> training_batches(const TrainConfig& config, const Dataset& dataset,
                                                       std::size_t epoch) {
  BatchSpec spec;
  spec.samples_per_identity = config.samples_per_identity;
  spec.identities_per_batch = config.batch_size / config.samples_per_identity;
  spec.seed = config.seed;
  return BatchSampler(dataset, dataset.indices(Split::Train), spec).epoch(epoch);
}

StepRecord train_step(Session& session, const Dataset& dataset, const std::vector<std::size_t>& batch,
                      double learning_rate, Rng* augment) {
  const auto& cfg = session.config();
  const auto& model = session.model();
  BatchEmbeddings embeddings;
  std::bernoulli_distribution flip(0.5);
  for (auto idx : batch) {
    const auto& record = dataset.records().at(idx);
    const Image& original = dataset.image(record);
    if (augment && cfg.horizontal_flip && flip(*augment)) {
      embeddings.image.push_back(model.forward_image(original.flipped_horizontally()).embeddings);
    } else {
      embeddings.image.push_back(model.forward_image(original).embeddings);
    }
    embeddings.text.push_back(model.forward_text(session.encode(record.caption)).embeddings);
    embeddings.labels.push_back(record.label);
  }
  LossBreakdown loss = total_loss(embeddings, session.classifiers(), cfg.loss_config());

  StepRecord rec;
  rec.step = session.step;
  rec.learning_rate = learning_rate;
  rec.total = loss.total.item();
  rec.id_image = loss.id_image;
  rec.id_text = loss.id_text;
  rec.ranking = loss.ranking;
  rec.fine_ranking = loss.fine_ranking;
  rec.fine_commonality = loss.mean_fine_commonality();
  for (const auto& [name, value] : {std::pair<const char*, double>{"id_image", rec.id_image},
                                    {"id_text", rec.id_text},
                                    {"ranking", rec.ranking},
                                    {"fine_ranking", rec.fine_ranking},
                                    {"total", rec.total}})
    if (!std::isfinite(value))
      throw NumericError(fmt::format("loss diverged at step {}: term '{}' = {}", session.step, name, value));

  session.store().zero_grad();
  loss.total.backward();
  session.optimizer().step(session.store(), learning_rate, cfg.group_lr_scales());
  ++session.step;
  return rec;
}

TrainResult train(Session& session, const Dataset& dataset, const TrainOptions& options) {
  const auto& cfg = session.config();
  if (dataset.indices(Split::Train).empty()) throw DataError("dataset has no training records");
  const bool validate = !dataset.indices(options.validation_split).empty() && cfg.eval_every > 0;

  std::ofstream step_log, epoch_log;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    step_log.open(*options.out_dir / "steps.jsonl", std::ios::app);
    epoch_log.open(*options.out_dir / "epochs.jsonl", std::ios::app);
    std::ofstream(*options.out_dir / "config.txt") << cfg.to_text();
  }

  TrainResult result;
  std::uint64_t hash = 1469598103934665603ULL;
  std::optional<std::vector<std::vector<double>>> best;
  bool stop = false;

  for (std::size_t epoch = session.epoch; epoch < cfg.epochs && !stop; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    EpochRecord er;
    er.epoch = epoch;
    er.learning_rate = cfg.learning_rate_at(epoch);
    const auto batches = training_batches(cfg, dataset, epoch);
    hash = (hash ^ batch_sequence_hash(batches)) * 1099511628211ULL;
    Rng augment(cfg.seed * 0x9e3779b97f4a7c15ULL + epoch);
    for (const auto& batch : batches) {
      if (cfg.max_steps > 0 && session.step >= cfg.max_steps) {
        stop = true;
        break;
      }
      StepRecord rec = train_step(session, dataset, batch, er.learning_rate, &augment);
      rec.epoch = epoch;
      er.steps += 1;
      er.total += rec.total;
      er.id_image += rec.id_image;
      er.id_text += rec.id_text;
      er.ranking += rec.ranking;
      er.fine_ranking += rec.fine_ranking;
      if (step_log.is_open()) step_log << rec.to_json() << '\n' << std::flush;
      if (options.on_step) options.on_step(rec);
      result.steps.push_back(std::move(rec));
    }
    if (er.steps > 0) {
      const double n = static_cast<double>(er.steps);
      er.total /= n;
      er.id_image /= n;
      er.id_text /= n;
      er.ranking /= n;
      er.fine_ranking /= n;
    }
    session.epoch = epoch + 1;
    const bool last = session.epoch == cfg.epochs || stop;
    if (validate && ((epoch + 1) % cfg.eval_every == 0 || last)) {
      er.val_recall = evaluate(session, dataset, options.validation_split).recall;
      const double r1 = er.val_recall.begin()->second;
      if (r1 > result.best_val_r1) {
        result.best_val_r1 = r1;
        result.best_epoch = epoch;
        best = session.snapshot();
        if (options.out_dir) session.save(*options.out_dir / "best.ckpt");
      }
    }
    er.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (epoch_log.is_open()) epoch_log << er.to_json() << '\n' << std::flush;
    if (options.on_epoch) options.on_epoch(er);
    result.history.push_back(er);
    if (options.out_dir) session.save(*options.out_dir / "last.ckpt");
  }
  result.data_hash = hash;
  if (options.restore_best && best) session.restore(*best);
  return result;
}

// ---------------------------------------------------------------------------

GalleryIndex build_gallery(const Session& session, const Dataset& dataset, Split split) {
  std::vector<EmbeddingRecord> records;
  std::set<std::string> seen;
  for (auto i : dataset.indices(split)) {
    const auto& r = dataset.records()[i];
    if (!seen.insert(r.image_path).second) continue;
    records.push_back({r.image_path, r.label, session.embed_image(dataset.image(r))});
  }
  return GalleryIndex(std::move(records));
}

std::vector<LabeledQuery> build_queries(const Session& session, const Dataset& dataset, Split split) {
  std::vector<LabeledQuery> out;
  for (auto i : dataset.indices(split)) {
    const auto& r = dataset.records()[i];
    out.push_back({fmt::format("{}#{}", r.image_path, i), r.label, session.embed_text(r.caption)});
  }
  return out;
}

EvalReport evaluate(const Session& session, const Dataset& dataset, Split split, bool breakdown,
                    const std::vector<std::size_t>& ks) {
  EvalReport report;
  report.split = split;
  const GalleryIndex gallery = build_gallery(session, dataset, split);
  const auto queries = build_queries(session, dataset, split);
  report.gallery = gallery.size();
  report.queries = queries.size();
  const ScoreConfig score = session.config().score_config();
  report.recall = recall_at_k(queries, gallery, ks, score);
  if (breakdown) {
    report.by_granularity["global"] = recall_at_k(queries, gallery, ks, ScoreConfig::global_only());
    if (score.coarse) report.by_granularity["coarse"] = recall_at_k(queries, gallery, ks, ScoreConfig::coarse_only());
    if (score.fine) report.by_granularity["fine"] = recall_at_k(queries, gallery, ks, ScoreConfig::fine_only());
  }
  return report;
}

std::vector<double> fine_commonality(const Session& session, const EmbeddingSet& set) {
  const auto& bank = session.classifiers();
  std::vector<double> out;
  for (std::size_t j = 0; j < set.fine_count; ++j) {
    const auto& w = bank.fine(j).weight;
    const auto wv = w.values();
    const std::size_t d = w.rows(), c = w.cols();
    const auto e = set.fine_row(j);
    std::vector<double> logits(c, 0.0);
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t m = 0; m < c; ++m) logits[m] += e[k] * wv[k * c + m];
    const double top = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (auto& l : logits) z += (l = std::exp(l - top));
    for (auto& l : logits) l /= z;
    out.push_back(commonality(logits));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<AblationVariant> default_ablation_grid() {
  return {
      {"Baseline", {{"use_coarse", "false"}, {"use_fine", "false"}, {"use_cmr", "false"}, {"cmr_on_coarse", "false"}}},
      {"+Coarse", {{"use_coarse", "true"}, {"use_fine", "false"}, {"use_cmr", "false"}, {"cmr_on_coarse", "false"}}},
      {"+Fine", {{"use_coarse", "true"}, {"use_fine", "true"}, {"use_cmr", "false"}, {"cmr_on_coarse", "false"}}},
      {"+CMR", {{"use_coarse", "true"}, {"use_fine", "true"}, {"use_cmr", "true"}, {"cmr_on_coarse", "false"}}},
      {"CMR coarse+fine",
       {{"use_coarse", "true"}, {"use_fine", "true"}, {"use_cmr", "true"}, {"cmr_on_coarse", "true"}}},
      {"Separate decoders",
       {{"use_coarse", "true"},
        {"use_fine", "true"},
        {"use_cmr", "true"},
        {"cmr_on_coarse", "false"},
        {"separate_decoders", "true"}}},
  };
}

std::vector<AblationVariant> load_ablation_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open ablation grid " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw ConfigError(path.string() + ": expected a list of variants");
  std::vector<AblationVariant> grid;
  for (const auto& entry : doc) {
    AblationVariant v;
    v.name = entry.at("name").get<std::string>();
    if (entry.contains("overrides"))
      for (const auto& [key, value] : entry["overrides"].items())
        v.overrides.emplace_back(key, value.is_string() ? value.get<std::string>() : value.dump());
    grid.push_back(std::move(v));
  }
  return grid;
}

AblationResult run_ablation(const TrainConfig& base, const Dataset& dataset,
                            const std::vector<AblationVariant>& grid, const AblationOptions& options) {
  if (grid.empty()) throw ConfigError("ablation grid is empty");
  AblationResult result;
  const Vocabulary vocab = training_vocabulary(dataset);
  std::vector<RecallRow> table_rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& variant = grid[i];
    TrainConfig cfg = base;
    for (const auto& [key, value] : variant.overrides) set_config_value(cfg, key, value);
    cfg.name = variant.name;
    cfg.validate();

    const auto started = std::chrono::steady_clock::now();
    auto session = Session::create(cfg, vocab, dataset.num_classes());
    TrainOptions topt;
    if (options.out_dir) topt.out_dir = *options.out_dir / fmt::format("row{}", i);
    const TrainResult trained = train(*session, dataset, topt);

    AblationRow row;
    row.variant = variant;
    row.config = cfg;
    row.report = evaluate(*session, dataset, options.split);
    row.data_hash = trained.data_hash;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (!result.rows.empty() && row.data_hash != result.rows.front().data_hash) result.identical_data_order = false;
    table_rows.push_back({variant.name, row.report.recall, {{"train_s", row.seconds}}});
    if (options.on_row) options.on_row(row);
    if (options.on_trained) options.on_trained(row, *session);
    result.rows.push_back(std::move(row));
  }
  result.table = format_recall_table(table_rows);
  if (options.out_dir) {
    std::ofstream(*options.out_dir / "ablation.txt") << result.table;
    std::ofstream(*options.out_dir / "ablation.jsonl") << recall_rows_jsonl(table_rows);
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace {

// Head-averaged (queries, columns) weights restricted to the first `columns` keys.
std::vector<double> head_mean(const CrossAttentionRecord& record, std::size_t columns) {
  const std::size_t q = record.queries(), seq = record.sequence_length();
  std::vector<double> out(q * columns, 0.0);
  for (const auto& w : record.weights) {
    const auto v = w.values();
    for (std::size_t i = 0; i < q; ++i)
      for (std::size_t k = 0; k < columns; ++k) out[i * columns + k] += v[i * seq + k];
  }
  for (auto& x : out) x /= static_cast<double>(record.heads());
  return out;
}

}  // namespace

AttentionMaps attention_maps(const Session& session, const Image& image, const std::string& caption) {
  ag::NoGradGuard no_grad;
  const auto& model = session.model();
  const auto& cfg = session.config();
  AttentionMaps maps;
  maps.grid_height = cfg.grid_height;
  maps.grid_width = cfg.grid_width;

  const auto img = model.forward_image(image);
  const auto fg = img.foreground.values();
  maps.image_foreground.assign(fg.begin(), fg.end());
  maps.image_coarse = head_mean(img.coarse_record, img.coarse_record.sequence_length());

  auto words = Vocabulary::tokenize(caption);
  if (words.size() > cfg.max_words) words.resize(cfg.max_words);
  const auto txt = model.forward_text(session.encode(caption));
  const std::size_t count = std::min(words.size(), txt.tokens.word_count());
  words.resize(count);
  maps.words = words;
  maps.text_coarse = head_mean(txt.coarse_record, count);
  maps.text_fine = head_mean(txt.fine_record, count);
  return maps;
}

std::vector<std::filesystem::path> export_attention(const AttentionMaps& maps, const Image& image,
                                                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto npy = [&](const std::string& name, const std::vector<double>& v, std::vector<std::size_t> shape) {
    const auto p = dir / name;
    write_npy(p, v, shape);
    written.push_back(p);
  };
  auto ppm = [&](const std::string& name, const Image& img) {
    const auto p = dir / name;
    write_ppm(p, img);
    written.push_back(p);
  };
  const std::size_t h = maps.grid_height, w = maps.grid_width, r = h * w;
  const std::size_t n = maps.words.size();
  const std::size_t coarse = r ? maps.image_coarse.size() / r : 0;

  ppm("image.ppm", image);
  npy("image_foreground.npy", maps.image_foreground, {h, w});
  ppm("image_foreground.ppm", render_heatmap(maps.image_foreground, h, w, 8));
  ppm("image_foreground_overlay.ppm", overlay_heatmap(image, maps.image_foreground, h, w, 0.5));
  npy("image_coarse.npy", maps.image_coarse, {coarse, h, w});
  for (std::size_t i = 0; i < coarse; ++i) {
    std::span<const double> field(maps.image_coarse.data() + i * r, r);
    ppm(fmt::format("image_coarse_{}.ppm", i), overlay_heatmap(image, field, h, w, 0.5));
  }
  if (n > 0) {
    const std::size_t fine = maps.text_fine.size() / n;
    npy("text_coarse.npy", maps.text_coarse, {coarse, n});
    npy("text_fine.npy", maps.text_fine, {fine, n});
    ppm("text_coarse.ppm", render_heatmap(maps.text_coarse, coarse, n, 12));
    ppm("text_fine.ppm", render_heatmap(maps.text_fine, fine, n, 12));
  }
  const auto words_path = dir / "words.txt";
  std::ofstream out(words_path);
  for (std::size_t i = 0; i < n; ++i) out << i << '\t' << maps.words[i] << '\n';
  written.push_back(words_path);
  return written;
}

}  // namespace c2f
