#include <gtest/gtest.h>

#include <cmath>

#include "c2f/error.hpp"
#include "c2f/objectives.hpp"
#include "gradcheck.hpp"
#include "oracle.hpp"

using namespace c2f;
using ag::Tensor;

namespace {

IdentityClassifier classifier_from(const oracle::Mat& w) { return {"slot", oracle::to_tensor(w)}; }

EmbeddingTensors random_set(Modality m, std::size_t d, std::size_t coarse, std::size_t fine, std::mt19937_64& rng) {
  EmbeddingTensors s;
  s.modality = m;
  s.global = oracle::random_tensor({1, d}, rng);
  if (coarse) s.coarse = oracle::random_tensor({coarse, d}, rng);
  if (fine) s.fine = oracle::random_tensor({fine, d}, rng);
  return s;
}

BatchEmbeddings random_batch(std::size_t n, std::size_t d, std::size_t coarse, std::size_t fine,
                             std::vector<std::int64_t> labels, std::mt19937_64& rng) {
  BatchEmbeddings b;
  for (std::size_t k = 0; k < n; ++k) {
    b.image.push_back(random_set(Modality::Image, d, coarse, fine, rng));
    b.text.push_back(random_set(Modality::Text, d, coarse, fine, rng));
  }
  b.labels = std::move(labels);
  return b;
}

std::vector<EmbeddingSet> values_of(const std::vector<EmbeddingTensors>& sets) {
  std::vector<EmbeddingSet> out;
  for (const auto& s : sets) out.push_back(s.values());
  return out;
}

}  // namespace

TEST(Objectives, IdLossExamples) {
  const auto w = classifier_from({{std::log(3.0), 0.0}});
  const auto r = id_loss(Tensor::constant({1, 1}, {1.0}), 0, w);
  EXPECT_NEAR(r.loss.item(), -std::log(0.75), 1e-12);
  EXPECT_NEAR(r.loss.item(), 0.28768, 1e-5);
  EXPECT_NEAR(r.probabilities[0], 0.75, 1e-12);

  const auto uniform = classifier_from({{0.0, 0.0, 0.0, 0.0, 0.0}});
  EXPECT_NEAR(id_loss(Tensor::constant({1, 1}, {2.0}), 3, uniform).loss.item(), std::log(5.0), 1e-12);

  const auto sharp = classifier_from({{1000.0, 0.0, -5.0}});
  EXPECT_LT(id_loss(Tensor::constant({1, 1}, {1.0}), 0, sharp).loss.item(), 1e-3);
  EXPECT_THROW(id_loss(Tensor::constant({1, 1}, {1.0}), 3, sharp), DataError);
}

TEST(Objectives, IdLossSetAggregation) {
  std::mt19937_64 rng(1);
  const oracle::Mat zeros(3, oracle::Vec(4, 0.0));
  ClassifierBank uniform(classifier_from(zeros), {classifier_from(zeros), classifier_from(zeros)},
                         {classifier_from(zeros), classifier_from(zeros)});
  const auto set = random_set(Modality::Image, 3, 2, 2, rng);
  EXPECT_NEAR(id_loss_set(set, 1, uniform).item(), 3.0 * std::log(4.0), 1e-12);

  auto degenerate = set;
  degenerate.coarse = Tensor();
  degenerate.fine = Tensor();
  EXPECT_EQ(id_loss_set(degenerate, 1, uniform).item(), id_loss(set.global, 1, uniform.global()).loss.item());

  std::vector<IdentityClassifier> c, f;
  oracle::Mat wg = oracle::random_mat(3, 4, rng);
  std::vector<oracle::Mat> wc, wf;
  for (int i = 0; i < 2; ++i) {
    wc.push_back(oracle::random_mat(3, 4, rng));
    wf.push_back(oracle::random_mat(3, 4, rng));
    c.push_back(classifier_from(wc.back()));
    f.push_back(classifier_from(wf.back()));
  }
  ClassifierBank bank(classifier_from(wg), c, f);
  const auto v = set.values();
  auto row = [](std::span<const double> s) { return oracle::Vec(s.begin(), s.end()); };
  double expected = oracle::cross_entropy(v.global, wg, 2);
  expected += 0.5 * (oracle::cross_entropy(row(v.coarse_row(0)), wc[0], 2) + oracle::cross_entropy(row(v.coarse_row(1)), wc[1], 2));
  expected += 0.5 * (oracle::cross_entropy(row(v.fine_row(0)), wf[0], 2) + oracle::cross_entropy(row(v.fine_row(1)), wf[1], 2));
  EXPECT_NEAR(id_loss_set(set, 2, bank).item(), expected, 1e-12);
}

TEST(Objectives, HardestNegativeExamples) {
  const std::vector<std::int64_t> two = {0, 1};
  EXPECT_EQ(hardest_negative(0, std::vector<double>{0.9, 0.1}, two), 1u);
  const std::vector<std::int64_t> labels = {5, 6, 7, 5};
  EXPECT_EQ(hardest_negative(0, std::vector<double>{0.1, 0.9, 0.5, 0.95}, labels), 1u);
  const std::vector<std::int64_t> distinct = {0, 1, 2, 3};
  EXPECT_EQ(hardest_negative(0, std::vector<double>{0.2, 0.7, 0.1, 0.7}, distinct), 1u);
  const std::vector<std::int64_t> same = {4, 4, 4};
  EXPECT_THROW(hardest_negative(0, std::vector<double>{0.1, 0.2, 0.3}, same), DataError);
}

TEST(Objectives, RankingLossExamples) {
  // Identical positives, orthogonal negatives.
  const Tensor v = Tensor::constant({2, 2}, {1, 0, 0, 1});
  const std::vector<std::int64_t> labels = {0, 1};
  EXPECT_EQ(ranking_loss(v, v, labels, 0.2).item(), 0.0);

  // One anchor with s(pos) = 0.5 and s(neg) = 0.6 in the image->text direction.
  const double pos = 0.5, neg = 0.6;
  const Tensor image = Tensor::constant({2, 2}, {1, 0, 0, 1});
  const Tensor text = Tensor::constant({2, 2}, {pos, std::sqrt(1 - pos * pos), neg, std::sqrt(1 - neg * neg)});
  const auto expected = oracle::ranking(oracle::from_tensor(image), oracle::from_tensor(text), labels, {0.2, 0.2}, {0.2, 0.2});
  EXPECT_NEAR(ranking_loss(image, text, labels, 0.2).item(), expected, 1e-12);
  const double one_direction = std::max(0.0, 0.2 - pos + neg);
  EXPECT_NEAR(one_direction, 0.3, 1e-12);
  EXPECT_NEAR(0.2 - oracle::cosine(image.values().subspan(0, 2), text.values().subspan(0, 2)) +
                  oracle::cosine(image.values().subspan(0, 2), text.values().subspan(2, 2)),
              0.3, 1e-12);

  // alpha = 0 with positives strictly closer.
  const Tensor close = Tensor::constant({2, 2}, {1, 0.1, 0.1, 1});
  EXPECT_EQ(ranking_loss(v, close, labels, 0.0).item(), 0.0);

  EXPECT_THROW(ranking_loss(Tensor::constant({2, 2}, {0, 0, 1, 1}), v, labels, 0.2), NumericError);
}

TEST(Objectives, RankingMatchesOracleAndIsScaleInvariant) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto v = oracle::random_mat(6, 5, rng), t = oracle::random_mat(6, 5, rng);
    const std::vector<std::int64_t> labels = {0, 1, 0, 2, 3, 2};
    const oracle::Vec m(6, 0.2);
    const double got = ranking_loss(oracle::to_tensor(v), oracle::to_tensor(t), labels, 0.2).item();
    EXPECT_NEAR(got, oracle::ranking(v, t, labels, m, m), 1e-12);
    EXPECT_GE(got, 0.0);
    auto scaled = v;
    for (std::size_t i = 0; i < scaled.size(); ++i)
      for (auto& x : scaled[i]) x *= 0.5 + static_cast<double>(i);
    EXPECT_NEAR(ranking_loss(oracle::to_tensor(scaled), oracle::to_tensor(t), labels, 0.2).item(), got, 1e-12);
  }
  const oracle::Vec a = {0.3, -1.2, 2.0}, b = {1.0, 0.5, -0.7};
  const oracle::Vec a2 = {0.6, -2.4, 4.0};
  EXPECT_NEAR(cosine_similarity(a, b), cosine_similarity(a2, b), 1e-12);
}

TEST(Objectives, RankingLossSetsDecomposes) {
  std::mt19937_64 rng(3);
  auto batch = random_batch(5, 4, 3, 2, {0, 1, 2, 3, 4}, rng);
  double expected = ranking_loss(stack_slot(batch.image, 0), stack_slot(batch.text, 0), batch.labels, 0.2).item();
  double coarse = 0.0;
  for (std::size_t i = 1; i <= 3; ++i)
    coarse += ranking_loss(stack_slot(batch.image, i), stack_slot(batch.text, i), batch.labels, 0.2).item();
  expected += coarse / 3.0;
  EXPECT_NEAR(ranking_loss_sets(batch, 0.2).item(), expected, 1e-12);

  for (auto& s : batch.image) s.coarse = Tensor();
  for (auto& s : batch.text) s.coarse = Tensor();
  EXPECT_EQ(ranking_loss_sets(batch, 0.2).item(),
            ranking_loss(stack_slot(batch.image, 0), stack_slot(batch.text, 0), batch.labels, 0.2).item());
}

TEST(Objectives, CommonalityExamples) {
  EXPECT_NEAR(commonality(std::vector<double>(10, 0.1)), 1.0, 1e-12);
  EXPECT_EQ(commonality(std::vector<double>{0, 0, 1, 0}), 0.0);
  EXPECT_NEAR(commonality(std::vector<double>{0.5, 0.5, 0, 0}), 0.5, 1e-15);
  EXPECT_THROW(commonality(std::vector<double>{1.0}), ConfigError);

  std::mt19937_64 rng(4);
  const auto logits = oracle::random_mat(3, 6, rng);
  const auto rows = commonality_rows(oracle::to_tensor(logits));
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_NEAR(rows.values()[i], oracle::entropy_ratio(oracle::softmax(logits[i])), 1e-12);
}

TEST(Objectives, CmrExamples) {
  std::mt19937_64 rng(5);
  const auto v = oracle::random_mat(4, 3, rng), t = oracle::random_mat(4, 3, rng);
  const std::vector<std::int64_t> labels = {0, 1, 2, 3};
  const Tensor tv = oracle::to_tensor(v), tt = oracle::to_tensor(t);
  const std::vector<double> zero(4, 0.0), one(4, 1.0);
  EXPECT_EQ(cmr_loss(tv, tt, labels, 0.2, zero, zero).item(), ranking_loss(tv, tt, labels, 0.2).item());
  EXPECT_EQ(cmr_loss(tv, tt, labels, 0.2, one, one).item(), ranking_loss(tv, tt, labels, 0.0).item());

  // alpha = 0.2, C = 0.5, s(pos) = 0.55, s(neg) = 0.50 on the image anchor 0.
  const double term = std::max(0.0, 0.2 * (1.0 - 0.5) - 0.55 + 0.50);
  EXPECT_NEAR(term, 0.05, 1e-12);
  const Tensor image = Tensor::constant({2, 2}, {1, 0, 0, 1});
  const Tensor text = Tensor::constant({2, 2}, {0.55, std::sqrt(1 - 0.55 * 0.55), 0.50, std::sqrt(1 - 0.25)});
  const std::vector<std::int64_t> two = {0, 1};
  const std::vector<double> cv = {0.5, 0.5}, ct = {0.5, 0.5};
  const double got = cmr_loss(image, text, two, 0.2, cv, ct).item();
  EXPECT_NEAR(got, oracle::ranking(oracle::from_tensor(image), oracle::from_tensor(text), two, {0.1, 0.1}, {0.1, 0.1}),
              1e-12);
  EXPECT_GE(got, term);

  // Non-increasing in commonality.
  double previous = 1e9;
  for (double c = 0.0; c <= 1.0; c += 0.1) {
    const std::vector<double> cs(4, c);
    const double l = cmr_loss(tv, tt, labels, 0.2, cs, cs).item();
    EXPECT_LE(l, previous + 1e-15);
    previous = l;
  }
}

TEST(Objectives, TotalLossMatchesOracleAcrossAblations) {
  std::mt19937_64 rng(6);
  ParameterStore store;
  Rng prng(7);
  ClassifierBank bank(store, 4, 5, 2, 3, false, prng, 0.5);
  const auto batch = random_batch(6, 4, 2, 3, {0, 1, 2, 3, 4, 0}, rng);
  const auto w = oracle::classifiers_of(bank);
  for (int variant = 0; variant < 5; ++variant) {
    LossConfig cfg;
    cfg.use_coarse = variant >= 1;
    cfg.use_fine = variant >= 2;
    cfg.use_cmr = variant >= 3;
    if (variant == 4) cfg.margin = 0.35;
    const auto got = total_loss(batch, bank, cfg);
    EXPECT_NEAR(got.total.item(), oracle::total_objective(values_of(batch.image), values_of(batch.text), batch.labels, w, cfg),
                1e-10)
        << "variant " << variant;
    EXPECT_NEAR(got.total.item(), got.id_image + got.id_text + got.ranking + got.fine_ranking, 1e-10);
  }
}

TEST(Objectives, BaselineIsGlobalOnly) {
  std::mt19937_64 rng(8);
  ParameterStore store;
  Rng prng(9);
  ClassifierBank bank(store, 4, 3, 2, 2, false, prng, 0.5);
  const auto batch = random_batch(3, 4, 2, 2, {0, 1, 2}, rng);
  LossConfig cfg;
  cfg.use_coarse = cfg.use_fine = cfg.use_cmr = false;
  const Tensor gv = stack_slot(batch.image, 0), gt = stack_slot(batch.text, 0);
  const double id = ag::cross_entropy_rows(ag::matmul(gv, bank.global().weight), batch.labels).item() / 3.0 +
                    ag::cross_entropy_rows(ag::matmul(gt, bank.global().weight), batch.labels).item() / 3.0;
  EXPECT_NEAR(total_loss(batch, bank, cfg).total.item(), id + ranking_loss(gv, gt, batch.labels, 0.2).item(), 1e-12);
}

TEST(Objectives, NearZeroLossConstruction) {
  // Orthogonal per-identity directions with sharp correct classifiers.
  const std::size_t n = 3, d = 3;
  BatchEmbeddings batch;
  oracle::Mat w(d, oracle::Vec(n, 0.0));
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<double> e(d, 0.0);
    e[k] = 1.0;
    w[k][k] = 50.0;
    EmbeddingTensors s;
    s.global = Tensor::constant({1, d}, e);
    std::vector<double> rows;
    for (int r = 0; r < 2; ++r) rows.insert(rows.end(), e.begin(), e.end());
    s.coarse = Tensor::constant({2, d}, rows);
    s.fine = Tensor::constant({2, d}, rows);
    batch.image.push_back(s);
    batch.text.push_back(s);
    batch.labels.push_back(static_cast<std::int64_t>(k));
  }
  ClassifierBank bank(classifier_from(w), {classifier_from(w), classifier_from(w)}, {classifier_from(w), classifier_from(w)});
  EXPECT_LT(total_loss(batch, bank, LossConfig{}).total.item(), 1e-2);
}

TEST(Objectives, GradientsHonorCommonalityStop) {
  std::mt19937_64 rng(10);
  ParameterStore store;
  Rng prng(11);
  ClassifierBank bank(store, 4, 4, 2, 2, false, prng, 0.8);
  const auto batch = random_batch(4, 4, 2, 2, {0, 1, 2, 3}, rng);
  const LossConfig cfg;
  const auto first = total_loss(batch, bank, cfg);
  CommonalityOverride frozen{first.fine_commonality_image, first.fine_commonality_text, {}, {}};
  std::vector<Tensor> leaves;
  for (const auto* sets : {&batch.image, &batch.text})
    for (const auto& s : *sets) leaves.insert(leaves.end(), {s.global, s.coarse, s.fine});
  for (const auto& e : store.entries()) leaves.push_back(e.tensor);
  const auto check = oracle::check_gradients([&] { return total_loss(batch, bank, cfg).total; },
                                             [&] { return total_loss(batch, bank, cfg, &frozen).total; }, leaves);
  EXPECT_LT(check.max_relative, 1e-4);
  // Frozen values equal the live ones, so the frozen forward is the same loss.
  EXPECT_EQ(total_loss(batch, bank, cfg, &frozen).total.item(), first.total.item());
}
