#include <gtest/gtest.h>

#include "c2f/backbones.hpp"
#include "c2f/error.hpp"
#include "oracle.hpp"

using namespace c2f;

namespace {

BackboneConfig small_config() {
  BackboneConfig cfg;
  cfg.feature_dim = 8;
  cfg.grid_height = 8;
  cfg.grid_width = 4;
  cfg.max_words = 16;
  cfg.vocab_size = 20;
  cfg.text_heads = 2;
  return cfg;
}

}  // namespace

TEST(Backbones, ZeroImageThroughZeroBackboneIsZero) {
  auto cfg = small_config();
  ParameterStore store;
  Rng rng(1);
  auto backbone = make_image_backbone(cfg, store, rng);
  for (auto& e : store.entries()) {
    auto t = e.tensor;
    std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
  }
  const auto map = extract_visual(*backbone, Image::blank(3, 64, 32), cfg);
  ASSERT_EQ(map.features.shape(), (ag::Shape{32, 8}));
  for (double v : map.features.values()) EXPECT_EQ(v, 0.0);
}

TEST(Backbones, ExtractionIsDeterministic) {
  auto cfg = small_config();
  ParameterStore store;
  Rng rng(2);
  auto backbone = make_image_backbone(cfg, store, rng);
  Image img = Image::blank(3, 64, 32);
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& p : img.pixels) p = u(g);
  const auto ta = extract_visual(*backbone, img, cfg).features;
  const auto tb = extract_visual(*backbone, img, cfg).features;
  const auto a = ta.values(), b = tb.values();
  EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
}

TEST(Backbones, IdentityPointwiseConvReproducesInput) {
  ParameterStore store;
  Rng rng(4);
  TinyConvBackbone backbone(3, {{3, 1, 1, false}}, store, rng);
  auto w = backbone.weight(0);
  auto wv = w.mutable_values();
  std::fill(wv.begin(), wv.end(), 0.0);
  for (std::size_t c = 0; c < 3; ++c) wv[c * 3 + c] = 1.0;
  Image img = Image::blank(3, 2, 2);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = 0.1 * static_cast<double>(i) - 0.3;
  const auto out = backbone.forward(image_tensor(img));
  ASSERT_EQ(out.shape(), (ag::Shape{4, 3}));
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.at(y * 2 + x, c), img.at(c, y, x));
}

TEST(Backbones, WrongImageSizeIsRejected) {
  auto cfg = small_config();
  ParameterStore store;
  Rng rng(5);
  auto backbone = make_image_backbone(cfg, store, rng);
  EXPECT_THROW(extract_visual(*backbone, Image::blank(3, 32, 32), cfg), ShapeError);
}

TEST(Backbones, TextMaskAndPadding) {
  auto cfg = small_config();
  ParameterStore store;
  Rng rng(6);
  auto backbone = make_text_backbone(cfg, store, rng);
  const std::vector<std::int64_t> ids = {3, 4, 5, 6, 7};
  const auto seq = extract_textual(*backbone, ids, cfg);
  EXPECT_EQ(seq.mask.size(), 16u);
  EXPECT_EQ(seq.word_count(), 5u);
  for (std::size_t i = 5; i < 16; ++i)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(seq.features.at(i, c), 0.0);
}

TEST(Backbones, EmptyCaptionErrorsUnlessAllowed) {
  auto cfg = small_config();
  ParameterStore store;
  Rng rng(7);
  auto backbone = make_text_backbone(cfg, store, rng);
  EXPECT_THROW(extract_textual(*backbone, {}, cfg), DataError);
  cfg.allow_empty_caption = true;
  EXPECT_EQ(extract_textual(*backbone, {}, cfg).word_count(), 1u);
}

TEST(Backbones, LongCaptionsTruncateOrError) {
  auto cfg = small_config();
  ParameterStore store;
  Rng rng(8);
  auto backbone = make_text_backbone(cfg, store, rng);
  const std::vector<std::int64_t> ids(20, 3);
  TextExtractionStats stats;
  EXPECT_EQ(extract_textual(*backbone, ids, cfg, &stats).word_count(), 16u);
  EXPECT_EQ(stats.truncated.load(), 1u);
  cfg.truncate_long_captions = false;
  EXPECT_THROW(extract_textual(*backbone, ids, cfg), DataError);
  EXPECT_THROW(extract_textual(*backbone, std::vector<std::int64_t>{25}, small_config()), DataError);
}

TEST(Backbones, LookupOnlyTextBackboneIndexesTable) {
  auto cfg = small_config();
  ParameterStore store;
  Rng rng(9);
  TinyTextBackbone backbone(cfg, store, rng);
  backbone.set_attention_enabled(false);
  auto pos = store.get("backbone.text.position");
  std::fill(pos.mutable_values().begin(), pos.mutable_values().end(), 0.0);
  const std::vector<std::int64_t> ids = {7, 2, 19};
  const auto seq = extract_textual(backbone, ids, cfg);
  const auto table = backbone.embedding_table();
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t c = 0; c < 8; ++c)
      EXPECT_EQ(seq.features.at(i, c), table.at(static_cast<std::size_t>(ids[i]), c));
}

TEST(Backbones, RegistryAcceptsPlugins) {
  struct ConstantBackbone : ImageBackbone {
    std::size_t rows, d;
    ConstantBackbone(std::size_t r, std::size_t dd) : rows(r), d(dd) {}
    ag::Tensor forward(const ag::Tensor&) const override {
      return ag::Tensor::constant({rows, d}, std::vector<double>(rows * d, 0.5));
    }
  };
  register_image_backbone("constant-test", [](const BackboneConfig& c, ParameterStore&, Rng&) {
    return std::make_unique<ConstantBackbone>(c.positions(), c.feature_dim);
  });
  auto cfg = small_config();
  cfg.image_backbone = "constant-test";
  ParameterStore store;
  Rng rng(10);
  auto backbone = make_image_backbone(cfg, store, rng);
  EXPECT_EQ(extract_visual(*backbone, Image::blank(3, 64, 32), cfg).features.at(3, 3), 0.5);
  cfg.image_backbone = "missing";
  EXPECT_THROW(make_image_backbone(cfg, store, rng), ConfigError);
}

TEST(Backbones, VocabularyTokenization) {
  EXPECT_EQ(Vocabulary::tokenize("A Red-Shirt,  blue pants."),
            (std::vector<std::string>{"a", "red", "shirt", "blue", "pants"}));
  const auto vocab = Vocabulary::from_texts({"red shirt", "blue shirt"});
  EXPECT_EQ(vocab.word(0), "<pad>");
  EXPECT_EQ(vocab.id("unseen"), Vocabulary::kUnknown);
  EXPECT_EQ(vocab.encode("Blue SHIRT").size(), 2u);
}
