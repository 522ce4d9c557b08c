#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "c2f/config.hpp"
#include "c2f/error.hpp"

using namespace c2f;

TEST(Config, PaperPresetHyperparameters) {
  const auto cfg = make_preset("paper");
  EXPECT_EQ(cfg.epochs, 60u);
  EXPECT_EQ(cfg.batch_size, 32u);
  EXPECT_EQ(cfg.learning_rate, 5e-4);
  EXPECT_EQ(cfg.decay_epochs, (std::vector<std::size_t>{20, 40, 50, 55}));
  EXPECT_EQ(cfg.image_backbone_lr_scale, 0.1);
  EXPECT_TRUE(cfg.freeze_text_backbone);
  EXPECT_EQ(cfg.group_lr_scales().at("backbone_text"), 0.0);
  EXPECT_EQ(cfg.coarse_tokens, 4u);
  EXPECT_EQ(cfg.fine_parts, 4u);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, DeskPresetTrainsTextBackbone) {
  const auto cfg = make_preset("desk");
  EXPECT_FALSE(cfg.freeze_text_backbone);
  EXPECT_GT(cfg.group_lr_scales().at("backbone_text"), 0.0);
  EXPECT_EQ(cfg.feature_dim, 64u);
  EXPECT_EQ(cfg.heads, 4u);
  EXPECT_EQ(cfg.margin, 0.2);
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_THROW(make_preset("nope"), ConfigError);
  EXPECT_EQ(preset_names(), (std::vector<std::string>{"desk", "paper"}));
}

TEST(Config, LearningRateSchedule) {
  const auto cfg = make_preset("paper");
  const double expected[] = {5e-4, 5e-5, 5e-6, 5e-7, 5e-8};
  for (std::size_t e = 0; e < 60; ++e) {
    const std::size_t band = e < 20 ? 0 : e < 40 ? 1 : e < 50 ? 2 : e < 55 ? 3 : 4;
    EXPECT_NEAR(cfg.learning_rate_at(e), expected[band], expected[band] * 1e-12) << "epoch " << e;
  }
}

TEST(Config, EveryKeyRoundTrips) {
  TrainConfig a = make_preset("desk");
  a.seed = 17;
  a.margin = 0.35;
  a.decay_epochs = {3, 7};
  a.use_cmr = false;
  TrainConfig b;
  apply_config_text(b, a.to_text());
  EXPECT_EQ(a.to_text(), b.to_text());
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  for (const auto& key : config_keys()) EXPECT_EQ(get_config_value(a, key), get_config_value(b, key)) << key;
}

TEST(Config, TextFormatAndErrors) {
  TrainConfig cfg;
  apply_config_text(cfg, "# comment\n\nepochs = 12   \n  learning_rate=1e-3\ndecay_epochs = 4, 8\nuse_cmr = off\n");
  EXPECT_EQ(cfg.epochs, 12u);
  EXPECT_EQ(cfg.learning_rate, 1e-3);
  EXPECT_EQ(cfg.decay_epochs, (std::vector<std::size_t>{4, 8}));
  EXPECT_FALSE(cfg.use_cmr);
  EXPECT_THROW(apply_config_text(cfg, "no_such_key = 1"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "epochs = ten"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "just text"), ConfigError);
  EXPECT_THROW(apply_config_file(cfg, "/nonexistent/c2f.cfg"), ConfigError);
}

TEST(Config, ValidationRules) {
  auto cfg = make_preset("paper");
  cfg.decay_epochs = {20, 10};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = make_preset("paper");
  cfg.decay_epochs = {60};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = make_preset("paper");
  cfg.use_fine = false;
  EXPECT_THROW(cfg.validate(), ConfigError);  // cmr needs fine
  cfg.use_cmr = false;
  EXPECT_NO_THROW(cfg.validate());
  cfg.fine_parts = 3;
  cfg.use_fine = true;
  EXPECT_THROW(cfg.validate(), ConfigError);  // grid height 8 not divisible by 3
}

TEST(Config, EnvironmentOverridesAndPrecedence) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto file = dir / "c2f_config_test.cfg";
  std::ofstream(file) << "epochs = 7\nmargin = 0.3\n";
  TrainConfig cfg = make_preset("desk");
  apply_config_file(cfg, file);
  ::setenv("C2F_MARGIN", "0.4", 1);
  ::setenv("C2F_SEED", "5", 1);
  const auto applied = apply_env_overrides(cfg);
  ::unsetenv("C2F_MARGIN");
  ::unsetenv("C2F_SEED");
  EXPECT_EQ(cfg.epochs, 7u);
  EXPECT_EQ(cfg.margin, 0.4);
  EXPECT_EQ(cfg.seed, 5u);
  EXPECT_EQ(applied.size(), 2u);
  set_config_value(cfg, "margin", "0.5");
  EXPECT_EQ(cfg.margin, 0.5);
  std::filesystem::remove(file);
}

TEST(Config, ScoreFollowsLossGranularities) {
  auto cfg = make_preset("desk");
  cfg.use_coarse = false;
  cfg.use_fine = false;
  cfg.use_cmr = false;
  const auto score = cfg.score_config();
  EXPECT_TRUE(score.global);
  EXPECT_FALSE(score.coarse);
  EXPECT_FALSE(score.fine);
  const auto loss = cfg.loss_config();
  EXPECT_FALSE(loss.use_coarse);
  EXPECT_FALSE(loss.use_cmr);
}
