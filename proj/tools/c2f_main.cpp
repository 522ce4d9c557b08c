// Command-line entry point: data generation, training, evaluation, retrieval,
// ablations and attention export.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "c2f/config.hpp"
#include "c2f/data.hpp"
#include "c2f/error.hpp"
#include "c2f/retrieval.hpp"
#include "c2f/training.hpp"

namespace fs = std::filesystem;
using namespace c2f;

namespace {

fs::path annotation_file(const fs::path& data) {
  return fs::is_directory(data) ? data / "annotations.json" : data;
}

Dataset open_dataset(const fs::path& data, bool skip_missing, bool per_split_ids) {
  LoadOptions opts;
  opts.missing_images = skip_missing ? MissingImagePolicy::Skip : MissingImagePolicy::Error;
  opts.identities = per_split_ids ? IdentityPolicy::PerSplit : IdentityPolicy::Global;
  Dataset ds = load_annotations(annotation_file(data), opts);
  if (ds.skipped() > 0) fmt::print(stderr, "skipped {} records with missing images\n", ds.skipped());
  return ds;
}

struct ConfigArgs {
  std::string preset = "desk";
  std::string config_file;
  std::vector<std::string> sets;

  void add(CLI::App* app) {
    app->add_option("--preset", preset, "Named preset")->check(CLI::IsMember(preset_names()));
    app->add_option("--config", config_file, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "Override a config key (key=value), repeatable");
  }

  TrainConfig build() const {
    TrainConfig cfg = make_preset(preset);
    if (!config_file.empty()) apply_config_file(cfg, config_file);
    for (const auto& key : apply_env_overrides(cfg)) fmt::print(stderr, "environment override: {}\n", key);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + kv);
      set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
  }
};

void print_report(const EvalReport& r) {
  std::vector<RecallRow> rows{{"all", r.recall, {}}};
  for (const auto& [name, recall] : r.by_granularity) rows.push_back({name, recall, {}});
  fmt::print("split={} queries={} gallery={}\n{}", split_name(r.split), r.queries, r.gallery,
             format_recall_table(rows));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coarse-to-fine cross-modal person retrieval"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Render a synthetic person dataset");
  fs::path gen_out;
  std::string gen_spec;
  std::optional<std::size_t> gen_ids, gen_images, gen_captions;
  std::optional<double> gen_sharing;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--spec", gen_spec, "JSON synthetic spec")->check(CLI::ExistingFile);
  gen->add_option("--identities", gen_ids, "Number of identities");
  gen->add_option("--images", gen_images, "Images per identity");
  gen->add_option("--captions", gen_captions, "Captions per image");
  gen->add_option("--sharing", gen_sharing, "Part-sharing rate for every part")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--seed", gen_seed, "Generator seed");

  // train
  auto* trn = app.add_subcommand("train", "Train a model");
  ConfigArgs train_cfg;
  fs::path train_data, train_out = "runs/train";
  std::string resume;
  bool train_skip = false;
  train_cfg.add(trn);
  trn->add_option("--data", train_data, "Dataset directory or annotations.json")->required();
  trn->add_option("--out", train_out, "Run directory");
  trn->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  trn->add_flag("--skip-missing", train_skip, "Skip records whose image is missing");

  // eval
  auto* ev = app.add_subcommand("eval", "Recall@K on a split");
  fs::path eval_ckpt, eval_data;
  std::string eval_split = "test";
  bool eval_breakdown = false, eval_json = false;
  ev->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data, "Dataset directory or annotations.json")->required();
  ev->add_option("--split", eval_split)->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_flag("--breakdown", eval_breakdown, "Also score each granularity alone");
  ev->add_flag("--json", eval_json, "Print a JSON report");

  // index
  auto* idx = app.add_subcommand("index", "Embed the images of a split into a gallery file");
  fs::path idx_ckpt, idx_data, idx_out;
  std::string idx_split = "test";
  idx->add_option("--checkpoint", idx_ckpt)->required()->check(CLI::ExistingFile);
  idx->add_option("--data", idx_data)->required();
  idx->add_option("--split", idx_split)->check(CLI::IsMember({"train", "val", "test"}));
  idx->add_option("--out", idx_out, "Embedding file")->required();

  // retrieve
  auto* ret = app.add_subcommand("retrieve", "Rank gallery images for a text query");
  fs::path ret_ckpt, ret_gallery;
  std::string ret_query, ret_split = "test";
  std::size_t ret_k = 10;
  bool ret_breakdown = false;
  ret->add_option("--checkpoint", ret_ckpt)->required()->check(CLI::ExistingFile);
  ret->add_option("--query", ret_query, "Caption text")->required();
  ret->add_option("--gallery", ret_gallery, "Embedding file, dataset directory or annotations.json")->required();
  ret->add_option("--split", ret_split, "Split used when --gallery is a dataset");
  ret->add_option("--top-k", ret_k);
  ret->add_flag("--breakdown", ret_breakdown, "Show per-granularity similarities");

  // ablate
  auto* abl = app.add_subcommand("ablate", "Train and evaluate every row of an ablation grid");
  ConfigArgs abl_cfg;
  fs::path abl_data, abl_out = "runs/ablation";
  std::string abl_grid = "default", abl_split = "test";
  abl_cfg.add(abl);
  abl->add_option("--data", abl_data)->required();
  abl->add_option("--grid", abl_grid, "JSON grid file or 'default'");
  abl->add_option("--out", abl_out);
  abl->add_option("--split", abl_split)->check(CLI::IsMember({"train", "val", "test"}));

  // plot-attn
  auto* plt = app.add_subcommand("plot-attn", "Export attention heatmaps for one sample");
  fs::path plt_ckpt, plt_data, plt_out = "attention";
  std::size_t plt_sample = 0;
  std::string plt_split = "test", plt_caption;
  plt->add_option("--checkpoint", plt_ckpt)->required()->check(CLI::ExistingFile);
  plt->add_option("--data", plt_data)->required();
  plt->add_option("--sample", plt_sample, "Record index within the split");
  plt->add_option("--split", plt_split)->check(CLI::IsMember({"train", "val", "test"}));
  plt->add_option("--caption", plt_caption, "Use this caption instead of the record's");
  plt->add_option("--out", plt_out);

  // config
  auto* show = app.add_subcommand("config", "Print the resolved configuration");
  ConfigArgs show_cfg;
  show_cfg.add(show);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      SyntheticSpec spec = gen_spec.empty() ? SyntheticSpec{} : read_synthetic_spec(gen_spec);
      if (gen_ids) spec.num_identities = *gen_ids;
      if (gen_images) spec.images_per_identity = *gen_images;
      if (gen_captions) spec.captions_per_image = *gen_captions;
      if (gen_sharing) spec.set_sharing(*gen_sharing);
      if (gen_seed) spec.seed = *gen_seed;
      const auto manifest = generate_synthetic(spec, gen_out);
      fmt::print("wrote {} identities x {} images to {}\n", manifest.identities.size(), spec.images_per_identity,
                 gen_out.string());
    } else if (*trn) {
      const Dataset ds = open_dataset(train_data, train_skip, false);
      std::unique_ptr<Session> session;
      if (!resume.empty()) {
        session = Session::load(resume);
      } else {
        session = Session::create(train_cfg.build(), training_vocabulary(ds), ds.num_classes());
      }
      fmt::print("training '{}' ({} records, {} identities, {} parameters)\n", session->config().name,
                 ds.records().size(), ds.num_classes(), session->store().scalar_count());
      TrainOptions opts;
      opts.out_dir = train_out;
      opts.on_epoch = [](const EpochRecord& e) {
        std::string val;
        if (!e.val_recall.empty()) val = fmt::format(" val R@1={:.2f}", 100.0 * e.val_recall.begin()->second);
        fmt::print("epoch {:3d} lr={:.1e} loss={:.4f} id_v={:.3f} id_t={:.3f} rank={:.3f} fine={:.3f}{} ({:.1f}s)\n",
                   e.epoch, e.learning_rate, e.total, e.id_image, e.id_text, e.ranking, e.fine_ranking, val,
                   e.seconds);
        std::fflush(stdout);
      };
      const TrainResult result = train(*session, ds, opts);
      session->save(train_out / "final.ckpt");
      if (result.best_val_r1 >= 0.0)
        fmt::print("best val R@1 {:.2f} at epoch {}\n", 100.0 * result.best_val_r1, result.best_epoch);
      fmt::print("checkpoints in {}\n", train_out.string());
    } else if (*ev) {
      const auto session = Session::load(eval_ckpt);
      const Dataset ds = open_dataset(eval_data, false, false);
      const auto report = evaluate(*session, ds, parse_split(eval_split), eval_breakdown);
      if (eval_json) fmt::print("{}\n", report.to_json());
      else print_report(report);
    } else if (*idx) {
      const auto session = Session::load(idx_ckpt);
      const Dataset ds = open_dataset(idx_data, false, false);
      const auto gallery = build_gallery(*session, ds, parse_split(idx_split));
      gallery.save(idx_out);
      fmt::print("wrote {} gallery embeddings to {}\n", gallery.size(), idx_out.string());
    } else if (*ret) {
      const auto session = Session::load(ret_ckpt);
      GalleryIndex gallery;
      if (fs::is_directory(ret_gallery) || ret_gallery.extension() == ".json") {
        const Dataset ds = open_dataset(ret_gallery, false, false);
        gallery = build_gallery(*session, ds, parse_split(ret_split));
      } else {
        gallery = GalleryIndex::load(ret_gallery);
      }
      const auto query = session->embed_text(ret_query);
      const auto result = rank_gallery(query, gallery, ret_k, session->config().score_config(), ret_breakdown);
      for (std::size_t r = 0; r < result.ranked.size(); ++r) {
        const auto& rec = gallery.records()[result.ranked[r]];
        fmt::print("{:3d}  {:.4f}  id={:<5d} {}", r + 1, result.scores[r], rec.label, rec.id);
        if (ret_breakdown) {
          const auto& b = result.breakdown[r];
          fmt::print("  global={:.3f} coarse=[{:.3f}] fine=[{:.3f}]", b.global, fmt::join(b.coarse, " "),
                     fmt::join(b.fine, " "));
        }
        fmt::print("\n");
      }
    } else if (*abl) {
      const Dataset ds = open_dataset(abl_data, false, false);
      const auto grid = abl_grid == "default" ? default_ablation_grid() : load_ablation_grid(abl_grid);
      AblationOptions opts;
      opts.split = parse_split(abl_split);
      opts.out_dir = abl_out;
      opts.on_row = [](const AblationRow& row) {
        fmt::print("{}: R@1={:.2f} ({:.0f}s)\n", row.variant.name, 100.0 * row.report.recall.at(1), row.seconds);
        std::fflush(stdout);
      };
      const auto result = run_ablation(abl_cfg.build(), ds, grid, opts);
      fmt::print("\n{}", result.table);
      fmt::print("data order identical across rows: {}\n", result.identical_data_order ? "yes" : "no");
    } else if (*plt) {
      const auto session = Session::load(plt_ckpt);
      const Dataset ds = open_dataset(plt_data, false, false);
      const auto indices = ds.indices(parse_split(plt_split));
      if (plt_sample >= indices.size())
        throw DataError(fmt::format("--sample {} out of range: split has {} records", plt_sample, indices.size()));
      const auto& rec = ds.records()[indices[plt_sample]];
      const std::string caption = plt_caption.empty() ? rec.caption : plt_caption;
      const Image& image = ds.image(rec);
      const auto maps = attention_maps(*session, image, caption);
      const auto written = export_attention(maps, image, plt_out);
      fmt::print("caption: {}\n", caption);
      for (const auto& p : written) fmt::print("wrote {}\n", p.string());
    } else if (*show) {
      fmt::print("{}", show_cfg.build().to_text());
    }
  } catch (const c2f::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
