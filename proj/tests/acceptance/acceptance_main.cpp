// Acceptance suite: prints one PASS/FAIL line per criterion.
//
//   c2f_acceptance            run every criterion
//   c2f_acceptance NAME...    run the named criteria
//   c2f_acceptance --list     list criterion names

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "c2f/attention.hpp"
#include "c2f/config.hpp"
#include "c2f/data.hpp"
#include "c2f/embedding.hpp"
#include "c2f/objectives.hpp"
#include "c2f/retrieval.hpp"
#include "c2f/training.hpp"
#include "gradcheck.hpp"
#include "oracle.hpp"

using namespace c2f;
using ag::Tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double limit_seconds;
  std::function<Outcome()> run;
};

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("c2f_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ag::Mask random_mask(std::size_t n, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(0.6);
  ag::Mask m(n);
  for (auto& x : m) x = keep(rng) ? 1 : 0;
  m[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1;
  return m;
}

std::vector<std::int64_t> random_labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::int64_t> pick(0, static_cast<std::int64_t>(classes) - 1);
  std::vector<std::int64_t> labels(n);
  do {
    for (auto& l : labels) l = pick(rng);
  } while (std::all_of(labels.begin(), labels.end(), [&](auto l) { return l == labels[0]; }));
  return labels;
}

// ---------------------------------------------------------------------------

Outcome equation_oracles() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> seq_len(1, 7), queries(1, 5), band(1, 3), count(1, 4);
  const std::size_t dims[] = {4, 8, 12}, head_counts[] = {1, 2, 4};
  double worst = 0.0;
  std::map<std::string, std::size_t> instances;
  ParameterStore store;

  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t d = dims[trial % 3], n = head_counts[(trial / 3) % 3];
    Rng prng(static_cast<std::uint64_t>(trial));
    const auto params = AttentionParameters::create(store, fmt::format("p{}", trial), "head", d, n, prng, 0.5);
    const auto h = oracle::heads_of(params);

    const std::size_t s = seq_len(rng);
    const auto x = oracle::random_mat(s, d, rng);
    const auto mask = random_mask(s, rng);
    worst = std::max(worst, oracle::max_abs_diff(oracle::from_tensor(mhsa(oracle::to_tensor(x), mask, params)),
                                                 oracle::self_attention(x, mask, h)));
    ++instances["mhsa"];

    const auto tokens = oracle::random_mat(queries(rng), d, rng);
    const auto record = decode(oracle::to_tensor(tokens), oracle::to_tensor(x), mask, params);
    std::vector<oracle::Mat> weights;
    worst = std::max(worst, oracle::max_abs_diff(oracle::from_tensor(record.output),
                                                 oracle::attention(tokens, x, mask, h, &weights)));
    for (std::size_t i = 0; i < weights.size(); ++i)
      worst = std::max(worst, oracle::max_abs_diff(oracle::from_tensor(record.weights[i]), weights[i]));
    ++instances["decode"];

    const auto attended = foreground_attend(oracle::to_tensor(x), record);
    worst = std::max(worst, oracle::max_abs_diff(oracle::from_tensor(attended),
                                                 oracle::foreground(x, oracle::average_weights(weights))));
    ++instances["foreground_attend"];

    const std::size_t parts = count(rng), rows = parts * band(rng);
    const auto grid = oracle::random_mat(rows, d, rng);
    worst = std::max(worst, oracle::max_abs_diff(oracle::from_tensor(fine_embed_image(oracle::to_tensor(grid), parts)),
                                                 oracle::band_max(grid, parts)));
    ++instances["fine_split"];

    const std::size_t big_d = count(rng), p = count(rng);
    const auto v = oracle::random_set(Modality::Image, d, big_d, p, rng);
    const auto t = oracle::random_set(Modality::Text, d, big_d, p, rng);
    worst = std::max(worst, std::fabs(pair_similarity(v, t).total - oracle::pair_similarity(v, t)));
    ++instances["pair_similarity"];
  }
  std::size_t fewest = SIZE_MAX;
  for (const auto& [_, c] : instances) fewest = std::min(fewest, c);
  return {fewest >= 100 && worst < 1e-8,
          fmt::format("{} instances per equation, max |diff| {:.2e}", fewest, worst)};
}

Outcome commonality_exactness() {
  double uniform_err = 0.0, onehot_err = 0.0, lo = 1.0, hi = 0.0;
  for (std::size_t c = 2; c <= 64; ++c) {
    uniform_err = std::max(uniform_err, std::fabs(commonality(std::vector<double>(c, 1.0 / static_cast<double>(c))) - 1.0));
    for (std::size_t k = 0; k < c; k += 7) {
      std::vector<double> p(c, 0.0);
      p[k] = 1.0;
      onehot_err = std::max(onehot_err, std::fabs(commonality(p)));
    }
  }
  std::mt19937_64 rng(202);
  std::exponential_distribution<double> expo(1.0);
  std::uniform_int_distribution<std::size_t> size(2, 40);
  std::bernoulli_distribution sparse(0.2);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> p(size(rng));
    double z = 0.0;
    for (auto& x : p) z += x = sparse(rng) ? 0.0 : expo(rng);
    if (z == 0.0) {
      p[0] = 1.0;
      z = 1.0;
    }
    for (auto& x : p) x /= z;
    const double c = commonality(p);
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  return {uniform_err <= 1e-9 && onehot_err <= 1e-9 && lo >= 0.0 && hi <= 1.0,
          fmt::format("uniform err {:.1e}, one-hot err {:.1e}, 1000 simplex points in [{:.4f}, {:.4f}]", uniform_err,
                      onehot_err, lo, hi)};
}

Outcome cmr_reduction() {
  std::mt19937_64 rng(303);
  const std::size_t n = 8, p = 4, d = 6;
  std::size_t mismatches = 0, compared = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto labels = random_labels(n, 5, rng);
    const std::vector<double> zero(n, 0.0);
    BatchEmbeddings batch;
    batch.labels = labels;
    for (std::size_t k = 0; k < n; ++k) {
      for (auto* side : {&batch.image, &batch.text}) {
        EmbeddingTensors s;
        s.global = oracle::random_tensor({1, d}, rng, 1.0, false);
        s.fine = oracle::random_tensor({p, d}, rng, 1.0, false);
        side->push_back(s);
      }
    }
    for (std::size_t j = 0; j < p; ++j) {
      const Tensor fv = stack_slot(batch.image, 1 + j), ft = stack_slot(batch.text, 1 + j);
      const double a = cmr_loss(fv, ft, labels, 0.2, zero, zero).item();
      const double b = ranking_loss(fv, ft, labels, 0.2).item();
      mismatches += std::memcmp(&a, &b, sizeof a) != 0;
      ++compared;
    }
    // Same reduction through the full objective with commonality forced to 0.
    ParameterStore store;
    Rng prng(static_cast<std::uint64_t>(trial));
    ClassifierBank bank(store, d, 5, 0, p, false, prng, 0.5);
    LossConfig with_cmr, without_cmr;
    with_cmr.use_coarse = without_cmr.use_coarse = false;
    without_cmr.use_cmr = false;
    CommonalityOverride zeros;
    zeros.fine_image = zeros.fine_text = std::vector<std::vector<double>>(p, zero);
    const double a = total_loss(batch, bank, with_cmr, &zeros).fine_ranking;
    const double b = total_loss(batch, bank, without_cmr).fine_ranking;
    mismatches += std::memcmp(&a, &b, sizeof a) != 0;
    ++compared;
  }
  return {mismatches == 0, fmt::format("{} comparisons over 100 batches (N=8, P=4), {} bitwise mismatches", compared,
                                       mismatches)};
}

Outcome hardest_negative_equivalence() {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<std::size_t> size(2, 16);
  std::uniform_int_distribution<int> coarse_level(0, 4);
  std::normal_distribution<double> normal;
  std::size_t anchors = 0, mismatches = 0, ties = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = size(rng);
    const auto labels = random_labels(n, std::max<std::size_t>(2, n / 2), rng);
    const bool quantized = trial % 2 == 0;  // coarse values force ties
    for (std::size_t k = 0; k < n; ++k) {
      std::vector<double> sims(n);
      for (auto& s : sims) s = quantized ? 0.25 * coarse_level(rng) : normal(rng);
      const std::size_t expected = oracle::hardest_scan(k, sims, labels);
      const std::size_t got = hardest_negative(k, sims, labels);
      std::size_t top = 0;
      for (std::size_t j = 0; j < n; ++j)
        if (labels[j] != labels[k] && sims[j] == sims[expected]) ++top;
      ties += top > 1;
      mismatches += got != expected;
      ++anchors;
    }
  }
  return {mismatches == 0,
          fmt::format("{} anchors over 100 batches (N<=16, {} with tied maxima), {} mismatches", anchors, ties, mismatches)};
}

Outcome gradient_checks() {
  std::mt19937_64 rng(505);
  const std::size_t n = 4, d = 6, big_d = 4, p = 4, classes = 5;
  double worst = 0.0;
  std::size_t checked = 0;
  for (int variant = 0; variant < 2; ++variant) {
    BatchEmbeddings batch;
    batch.labels = {0, 1, 2, 0};
    std::vector<Tensor> leaves;
    for (std::size_t k = 0; k < n; ++k)
      for (auto* side : {&batch.image, &batch.text}) {
        EmbeddingTensors s;
        s.global = oracle::random_tensor({1, d}, rng);
        s.coarse = oracle::random_tensor({big_d, d}, rng);
        s.fine = oracle::random_tensor({p, d}, rng);
        leaves.insert(leaves.end(), {s.global, s.coarse, s.fine});
        side->push_back(s);
      }
    ParameterStore store;
    Rng prng(static_cast<std::uint64_t>(variant + 1));
    ClassifierBank bank(store, d, classes, big_d, p, false, prng, 0.7);
    for (const auto& e : store.entries()) leaves.push_back(e.tensor);

    LossConfig cfg;
    cfg.cmr_on_coarse = variant == 1;
    const auto live = total_loss(batch, bank, cfg);
    CommonalityOverride frozen{live.fine_commonality_image, live.fine_commonality_text, live.coarse_commonality_image,
                               live.coarse_commonality_text};
    const auto r = oracle::check_gradients([&] { return total_loss(batch, bank, cfg).total; },
                                           [&] { return total_loss(batch, bank, cfg, &frozen).total; }, leaves);
    worst = std::max(worst, r.max_relative);
    checked += r.checked;
  }
  return {worst < 1e-4, fmt::format("{} partials over 9-slot sets (CMR on fine; on coarse+fine), max rel err {:.2e}",
                                    checked, worst)};
}

ModelConfig toy_model(bool separate) {
  ModelConfig cfg;
  cfg.backbone.feature_dim = 16;
  cfg.backbone.max_words = 10;
  cfg.backbone.vocab_size = 12;
  cfg.heads = 4;
  cfg.separate_decoders = separate;
  return cfg;
}

Outcome shared_decoder_symmetry() {
  std::mt19937_64 rng(606);
  std::size_t identical = 0, trials = 0, separated_differ = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto memory = oracle::to_tensor(oracle::random_mat(7, 16, rng));
    const auto mask = random_mask(7, rng);
    for (bool separate : {false, true}) {
      ParameterStore store;
      Rng prng(static_cast<std::uint64_t>(trial));
      CoarseToFineModel model(toy_model(separate), store, prng);
      const auto a = coarse_embed(memory, mask, model.shared_tokens(Modality::Image), model.decoder(Modality::Image));
      const auto b = coarse_embed(memory, mask, model.shared_tokens(Modality::Text), model.decoder(Modality::Text));
      bool same = std::memcmp(a.coarse.values().data(), b.coarse.values().data(), a.coarse.size() * sizeof(double)) == 0;
      for (std::size_t h = 0; h < a.record.heads(); ++h)
        same = same && std::memcmp(a.record.weights[h].values().data(), b.record.weights[h].values().data(),
                                   a.record.weights[h].size() * sizeof(double)) == 0;
      if (separate) separated_differ += !same;
      else {
        identical += same;
        ++trials;
      }
    }
  }
  return {identical == trials && separated_differ == trials,
          fmt::format("shared: {}/{} byte-identical; separate_decoders: {}/{} differ", identical, trials,
                      separated_differ, trials)};
}

Outcome attention_normalization() {
  std::mt19937_64 rng(707);
  double worst_sum = 0.0;
  std::size_t rows = 0, masked_nonzero = 0;
  auto inspect = [&](const Tensor& w, const ag::Mask& mask) {
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < w.cols(); ++c) {
        s += w.at(r, c);
        if (!mask.empty() && !mask[c] && w.at(r, c) != 0.0) ++masked_nonzero;
      }
      worst_sum = std::max(worst_sum, std::fabs(s - 1.0));
      ++rows;
    }
  };
  ParameterStore store;
  for (int trial = 0; trial < 200; ++trial) {
    Rng prng(static_cast<std::uint64_t>(trial));
    const auto params = AttentionParameters::create(store, fmt::format("a{}", trial), "head", 8, 2, prng, 1.5);
    const std::size_t s = 1 + trial % 12;
    const auto x = oracle::to_tensor(oracle::random_mat(s, 8, rng, 2.0));
    const auto mask = random_mask(s, rng);
    std::vector<Tensor> weights;
    mhsa(x, mask, params, &weights);
    for (const auto& w : weights) inspect(w, mask);
    const auto record = decode(oracle::to_tensor(oracle::random_mat(3, 8, rng)), x, mask, params);
    for (const auto& w : record.weights) inspect(w, mask);
  }
  // Text path of a full model, masks from caption length.
  ParameterStore mstore;
  Rng mrng(9);
  CoarseToFineModel model(toy_model(false), mstore, mrng);
  std::uniform_int_distribution<std::int64_t> word(2, 11);
  for (std::size_t len = 1; len <= 10; ++len) {
    std::vector<std::int64_t> ids(len);
    for (auto& id : ids) id = word(rng);
    const auto fwd = model.forward_text(ids);
    for (const auto* rec : {&fwd.coarse_record, &fwd.fine_record})
      for (const auto& w : rec->weights) inspect(w, fwd.tokens.mask);
  }
  return {worst_sum <= 1e-6 && masked_nonzero == 0,
          fmt::format("{} softmax rows, max |sum-1| {:.1e}, {} masked keys with nonzero weight", rows, worst_sum,
                      masked_nonzero)};
}

Outcome end_to_end_overfit() {
  const auto dir = scratch("overfit");
  SyntheticSpec spec;
  spec.num_identities = 32;
  spec.images_per_identity = 4;
  spec.captions_per_image = 5;
  spec.seed = 7;
  generate_synthetic(spec, dir);
  const auto ds = load_annotations(dir / "annotations.json");
  const TrainConfig cfg = make_preset("desk");
  auto session = Session::create(cfg, training_vocabulary(ds), ds.num_classes());
  train(*session, ds);
  const auto train_r1 = evaluate(*session, ds, Split::Train).recall.at(1);
  const auto test_r1 = evaluate(*session, ds, Split::Test).recall.at(1);
  fs::remove_all(dir);
  return {train_r1 >= 0.95 && test_r1 >= 0.80,
          fmt::format("32 identities x 4 images, desk preset (d={}, n={}, D={}, P={}, alpha={}): train R@1 {:.3f}, "
                      "test R@1 {:.3f}",
                      cfg.feature_dim, cfg.heads, cfg.coarse_tokens, cfg.fine_parts, cfg.margin, train_r1, test_r1)};
}

Outcome cmr_directional() {
  const auto dir = scratch("directional");
  SyntheticSpec spec;
  spec.num_identities = 64;
  spec.images_per_identity = 4;
  spec.captions_per_image = 5;
  spec.set_sharing(0.5);
  spec.seed = 11;
  generate_synthetic(spec, dir);
  const auto manifest = read_manifest(dir / "manifest.json");
  const auto ds = load_annotations(dir / "annotations.json");

  auto grid = default_ablation_grid();
  grid.resize(4);  // Baseline, +Coarse, +Fine, +CMR
  double sums[2][2] = {{0, 0}, {0, 0}};  // [shared][modality]
  std::size_t counts[2][2] = {{0, 0}, {0, 0}};
  AblationOptions options;
  options.split = Split::Test;
  options.on_trained = [&](const AblationRow& row, const Session& session) {
    if (row.variant.name != "+CMR") return;
    std::set<std::string> seen;
    for (const auto& r : ds.records()) {
      std::vector<std::pair<int, std::vector<double>>> sets;
      if (seen.insert(r.image_path).second) sets.emplace_back(0, fine_commonality(session, session.embed_image(ds.image(r))));
      sets.emplace_back(1, fine_commonality(session, session.embed_text(r.caption)));
      for (const auto& [modality, values] : sets)
        for (std::size_t j = 0; j < values.size(); ++j) {
          const int shared = manifest.part_is_shared(j, r.source_id) ? 1 : 0;
          sums[shared][modality] += values[j];
          ++counts[shared][modality];
        }
    }
  };
  const auto result = run_ablation(make_preset("desk"), ds, grid, options);
  fs::remove_all(dir);

  auto mean = [&](int shared, int m) { return counts[shared][m] ? sums[shared][m] / static_cast<double>(counts[shared][m]) : 0.0; };
  const double shared_all = (sums[1][0] + sums[1][1]) / static_cast<double>(counts[1][0] + counts[1][1]);
  const double unique_all = (sums[0][0] + sums[0][1]) / static_cast<double>(counts[0][0] + counts[0][1]);
  std::map<std::string, double> r1;
  for (const auto& row : result.rows) r1[row.variant.name] = row.report.recall.at(1);
  const bool table_ok = result.rows.size() == 4 && !result.table.empty() && result.identical_data_order;
  const bool order_ok = counts[0][0] + counts[1][0] > 0 && counts[1][0] > 0 && counts[0][0] > 0;
  const bool pass = table_ok && order_ok && shared_all > unique_all && r1["+CMR"] >= r1["+Fine"] - 0.02;
  fmt::print("{}", result.table);
  return {pass, fmt::format("fine commonality shared {:.5f} > unique {:.5f} (image {:.5f}/{:.5f}, text {:.5f}/{:.5f}); "
                            "R@1 Baseline {:.4f}, +Coarse {:.4f}, +Fine {:.4f}, +CMR {:.4f}; identical data order {}",
                            shared_all, unique_all, mean(1, 0), mean(0, 0), mean(1, 1), mean(0, 1), r1["Baseline"],
                            r1["+Coarse"], r1["+Fine"], r1["+CMR"], result.identical_data_order)};
}

Outcome ranking_properties() {
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> factor(0.05, 20.0);
  std::size_t monotone_fail = 0, rescale_fail = 0, oracle_fail = 0, queries_checked = 0;
  for (int g = 0; g < 50; ++g) {
    std::vector<EmbeddingRecord> gallery;
    for (std::size_t i = 0; i < 100; ++i) {
      EmbeddingRecord r{fmt::format("g{:03d}_{:03d}", g, 99 - i), static_cast<std::int64_t>(i % 25),
                        oracle::random_set(Modality::Image, 8, 2, 2, rng)};
      if (i % 20 == 19) r.set = gallery[i - 1].set;  // exact duplicates exercise the tie rule
      gallery.push_back(r);
    }
    std::vector<LabeledQuery> queries;
    for (int q = 0; q < 10; ++q)
      queries.push_back({fmt::format("q{}", q), static_cast<std::int64_t>(q % 25), oracle::random_set(Modality::Text, 8, 2, 2, rng)});
    const GalleryIndex index(gallery);

    std::vector<std::size_t> ks(100);
    for (std::size_t k = 0; k < 100; ++k) ks[k] = k + 1;
    const auto recall = recall_at_k(queries, index, ks);
    double previous = 0.0;
    for (const auto& [k, v] : recall) {
      if (v < previous || v < 0.0 || v > 1.0) ++monotone_fail;
      previous = v;
    }
    for (std::size_t k : {1, 5, 10}) oracle_fail += recall.at(k) != oracle::brute_recall(queries, gallery, k);

    auto rescaled = gallery;
    for (auto& r : rescaled)
      for (auto* part : {&r.set.global, &r.set.coarse, &r.set.fine}) {
        const std::size_t rows = part->size() / 8;
        for (std::size_t row = 0; row < rows; ++row) {
          const double f = factor(rng);
          for (std::size_t c = 0; c < 8; ++c) (*part)[row * 8 + c] *= f;
        }
      }
    const GalleryIndex rescaled_index(rescaled);
    for (const auto& q : queries) {
      const auto ranked = rank_gallery(q.set, index).ranked;
      oracle_fail += ranked != oracle::sort_ranking(q.set, gallery);
      // Duplicates stay tied only if scaled identically, so compare against the rescaled oracle.
      rescale_fail += rank_gallery(q.set, rescaled_index).ranked != oracle::sort_ranking(q.set, rescaled);
      auto rescaled_query = q.set;
      for (auto& x : rescaled_query.global) x *= 3.5;
      rescale_fail += rank_gallery(rescaled_query, index).ranked != ranked;
      ++queries_checked;
    }
  }
  return {monotone_fail == 0 && rescale_fail == 0 && oracle_fail == 0,
          fmt::format("50 galleries x 100 images, {} queries: monotonicity failures {}, rescaling failures {}, "
                      "oracle mismatches {}",
                      queries_checked, monotone_fail, rescale_fail, oracle_fail)};
}

Outcome lr_schedule() {
  const auto cfg = make_preset("paper");
  const double bands[] = {5e-4, 5e-5, 5e-6, 5e-7, 5e-8};
  std::size_t bad = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const std::size_t b = e < 20 ? 0 : e < 40 ? 1 : e < 50 ? 2 : e < 55 ? 3 : 4;
    if (std::fabs(cfg.learning_rate_at(e) - bands[b]) > bands[b] * 1e-12) ++bad;
  }

  // The training loop applies the same value at every step.
  const auto dir = scratch("schedule");
  SyntheticSpec spec;
  spec.num_identities = 2;
  spec.images_per_identity = 1;
  spec.captions_per_image = 2;
  generate_synthetic(spec, dir);
  const auto ds = load_annotations(dir / "annotations.json");
  auto run_cfg = cfg;
  run_cfg.batch_size = 2;
  run_cfg.feature_dim = 16;
  run_cfg.eval_every = 0;
  auto session = Session::create(run_cfg, training_vocabulary(ds), ds.num_classes());
  const auto result = train(*session, ds);
  std::size_t step_bad = 0;
  for (const auto& s : result.steps) {
    const std::size_t b = s.epoch < 20 ? 0 : s.epoch < 40 ? 1 : s.epoch < 50 ? 2 : s.epoch < 55 ? 3 : 4;
    if (std::fabs(s.learning_rate - bands[b]) > bands[b] * 1e-12) ++step_bad;
  }
  fs::remove_all(dir);
  return {bad == 0 && step_bad == 0 && result.steps.size() == 60,
          fmt::format("paper preset: 60 epochs, {} schedule mismatches; {} training steps, {} step mismatches", bad,
                      result.steps.size(), step_bad)};
}

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {"equation_oracles", 30, equation_oracles},
      {"commonality_exactness", 5, commonality_exactness},
      {"cmr_reduction", 10, cmr_reduction},
      {"hardest_negative", 10, hardest_negative_equivalence},
      {"gradient_checks", 60, gradient_checks},
      {"shared_decoder_symmetry", 5, shared_decoder_symmetry},
      {"attention_normalization", 10, attention_normalization},
      {"end_to_end_overfit", 15 * 60, end_to_end_overfit},
      {"cmr_directional", 60 * 60, cmr_directional},
      {"ranking_properties", 30, ranking_properties},
      {"lr_schedule", 5, lr_schedule},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> wanted(argv + 1, argv + argc);
  if (wanted.size() == 1 && wanted[0] == "--list") {
    for (const auto& c : criteria()) fmt::print("{}\n", c.name);
    return 0;
  }
  for (const auto& w : wanted)
    if (std::none_of(criteria().begin(), criteria().end(), [&](const Criterion& c) { return c.name == w; })) {
      fmt::print(stderr, "unknown criterion: {}\n", w);
      return 2;
    }

  int failures = 0;
  for (const auto& c : criteria()) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.name) == wanted.end()) continue;
    const auto started = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (seconds > c.limit_seconds) {
      out.pass = false;
      out.detail += fmt::format("; exceeded the {:.0f} s limit", c.limit_seconds);
    }
    fmt::print("{} {}: {} ({:.1f} s)\n", out.pass ? "PASS" : "FAIL", c.name, out.detail, seconds);
    std::fflush(stdout);
    failures += out.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
