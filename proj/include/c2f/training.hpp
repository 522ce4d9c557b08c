#pragma once

// Training loop, evaluation, checkpoints, the ablation runner and attention
// export.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "c2f/config.hpp"
#include "c2f/data.hpp"
#include "c2f/embedding.hpp"
#include "c2f/objectives.hpp"
#include "c2f/parameters.hpp"
#include "c2f/retrieval.hpp"

namespace c2f {

// Everything a checkpoint holds: config, vocabulary, parameters (backbones,
// encoders, decoder, tokens, position tables, classifiers), optimizer state
// and progress counters.
class Session {
 public:
  static std::unique_ptr<Session> create(const TrainConfig& config, Vocabulary vocab, std::size_t num_classes);
  static std::unique_ptr<Session> load(const std::filesystem::path& path);

  // Binary layout: "C2FCKPT\0", u64 version, config text, u64 fingerprint,
  // u64 classes, u64 vocab size + words, u64 epoch, u64 step, parameters, Adam.
  void save(const std::filesystem::path& path) const;

  const TrainConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  std::size_t num_classes() const { return num_classes_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const CoarseToFineModel& model() const { return *model_; }
  const ClassifierBank& classifiers() const { return *classifiers_; }
  Adam& optimizer() { return optimizer_; }

  std::size_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;

  std::vector<std::int64_t> encode(const std::string& caption) const { return vocab_.encode(caption); }
  EmbeddingSet embed_image(const Image& image) const { return model_->embed_image(image); }
  EmbeddingSet embed_text(const std::string& caption) const { return model_->embed_text(encode(caption)); }

  // Snapshot / restore of every parameter value.
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  Session(const TrainConfig& config, Vocabulary vocab, std::size_t num_classes);

  TrainConfig config_;
  Vocabulary vocab_;
  std::size_t num_classes_;
  ParameterStore store_;
  std::unique_ptr<CoarseToFineModel> model_;
  std::unique_ptr<ClassifierBank> classifiers_;
  Adam optimizer_;
};

// Vocabulary over the training-split captions.
Vocabulary training_vocabulary(const Dataset& dataset);

struct StepRecord {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double total = 0.0;
  double id_image = 0.0;
  double id_text = 0.0;
  double ranking = 0.0;
  double fine_ranking = 0.0;
  std::vector<double> fine_commonality;  // mean per fine slot, both modalities

  std::string to_json() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  std::size_t steps = 0;
  double total = 0.0;  // means over the epoch's steps
  double id_image = 0.0;
  double id_text = 0.0;
  double ranking = 0.0;
  double fine_ranking = 0.0;
  std::map<std::size_t, double> val_recall;  // empty when not evaluated
  double seconds = 0.0;

  std::string to_json() const;
};

struct TrainOptions {
  // When set: steps.jsonl, epochs.jsonl, best.ckpt and last.ckpt go here.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
  Split validation_split = Split::Val;
  // Reload the best-validation parameters at the end.
  bool restore_best = true;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::vector<StepRecord> steps;
  std::size_t best_epoch = 0;
  double best_val_r1 = -1.0;
  std::uint64_t data_hash = 0;  // digest of every epoch's batch order
};

// Runs the remaining epochs of `session.config()` on the training split.
// Throws NumericError naming the loss term if the loss stops being finite.
TrainResult train(Session& session, const Dataset& dataset, const TrainOptions& options = {});

// Batch order the training loop will use for `epoch`.
std::vector<std::vector<std::size_t>> training_batches(const TrainConfig& config, const Dataset& dataset,
                                                       std::size_t epoch);

// One optimization step on the given records; returns the loss breakdown.
StepRecord train_step(Session& session, const Dataset& dataset, const std::vector<std::size_t>& batch,
                      double learning_rate, Rng* augment = nullptr);

struct EvalReport {
  Split split = Split::Test;
  std::size_t queries = 0;
  std::size_t gallery = 0;
  std::map<std::size_t, double> recall;
  // "global" / "coarse" / "fine" single-granularity scores, when requested.
  std::map<std::string, std::map<std::size_t, double>> by_granularity;

  std::string to_json() const;
};

// Gallery of every distinct image in the split; ids are image paths.
GalleryIndex build_gallery(const Session& session, const Dataset& dataset, Split split);
std::vector<LabeledQuery> build_queries(const Session& session, const Dataset& dataset, Split split);

EvalReport evaluate(const Session& session, const Dataset& dataset, Split split, bool breakdown = false,
                    const std::vector<std::size_t>& ks = {1, 5, 10});

// Commonality of each fine slot for one image / caption, from the trained
// slot classifiers.
std::vector<double> fine_commonality(const Session& session, const EmbeddingSet& set);

struct AblationVariant {
  std::string name;
  std::vector<std::pair<std::string, std::string>> overrides;  // config key, value
};

// Baseline, +Coarse, +Fine, +CMR, CMR on coarse and fine, separate decoders.
std::vector<AblationVariant> default_ablation_grid();
// JSON: [{"name": "...", "overrides": {"key": value, ...}}, ...]
std::vector<AblationVariant> load_ablation_grid(const std::filesystem::path& path);

struct AblationRow {
  AblationVariant variant;
  TrainConfig config;
  EvalReport report;
  std::uint64_t data_hash = 0;
  double seconds = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  bool identical_data_order = true;
  std::string table;
};

struct AblationOptions {
  Split split = Split::Test;
  std::optional<std::filesystem::path> out_dir;  // per-row subdirectories
  std::function<void(const AblationRow&)> on_row;
  // Called with each trained model before it is discarded.
  std::function<void(const AblationRow&, const Session&)> on_trained;
};

AblationResult run_ablation(const TrainConfig& base, const Dataset& dataset,
                            const std::vector<AblationVariant>& grid, const AblationOptions& options = {});

struct AttentionMaps {
  std::size_t grid_height = 0, grid_width = 0;
  std::vector<double> image_foreground;  // A_avg, (h * w)
  std::vector<double> image_coarse;      // per coarse token, head-averaged, (D, r)
  std::vector<std::string> words;        // caption tokens after truncation
  std::vector<double> text_coarse;       // (D, words)
  std::vector<double> text_fine;         // (P, words)
};

AttentionMaps attention_maps(const Session& session, const Image& image, const std::string& caption);
// Writes .npy arrays and .ppm heatmaps; returns the written paths.
std::vector<std::filesystem::path> export_attention(const AttentionMaps& maps, const Image& image,
                                                    const std::filesystem::path& dir);

}  // namespace c2f
