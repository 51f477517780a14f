#include "bgattack/io/config.hpp"
#include "support.hpp"

using namespace bgattack;

namespace {

std::string config_error(const std::string& text) {
  try {
    io::parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  ADD_FAILURE() << "expected a ConfigError for:\n" << text;
  return {};
}

}  // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
  const auto rc = io::parse_config("");
  EXPECT_EQ(rc.attack.epochs, 50u);
  EXPECT_EQ(rc.attack.schedule.alpha0, 0.03);
  EXPECT_EQ(rc.attack.schedule.mode, LrMode::Constant);
  EXPECT_EQ(rc.losses.eta, 9.0);
  EXPECT_EQ(rc.losses.lambda, 0.01);
  EXPECT_EQ(rc.eval.conf_threshold, 0.25);
  EXPECT_EQ(rc.eval.iou_threshold, 0.5);
  EXPECT_EQ(rc, io::parse_config("[attack]\n"));
}

TEST(Config, ReadsValues) {
  const auto rc = io::parse_config(
      "[dataset]\ncount = 3\nsprite_kinds = ring,disk\n"
      "[attack]\nepochs = 7\nschedule = poly\nexponent = 0.5\nensemble = true\n"
      "[losses]\ntv_mode = bidirectional\nbidir_anchor = literal\n"
      "[output]\ndir = /tmp/x\n");
  EXPECT_EQ(rc.dataset.count, 3u);
  EXPECT_EQ(rc.dataset.sprite_kinds, (std::vector<std::string>{"ring", "disk"}));
  EXPECT_EQ(rc.attack.epochs, 7u);
  EXPECT_EQ(rc.attack.schedule.mode, LrMode::PolyDecay);
  EXPECT_TRUE(rc.attack.ensemble);
  EXPECT_EQ(rc.losses.tv_mode, TvMode::AdaptiveBidirectional);
  EXPECT_EQ(rc.losses.bidir_anchor, BidirAnchor::Literal);
  EXPECT_EQ(rc.output_dir, "/tmp/x");
}

TEST(Config, ErrorsNameTheKey) {
  EXPECT_NE(config_error("[losses]\neta = -1\n").find("eta"), std::string::npos);
  EXPECT_NE(config_error("[attack]\nepohcs = 3\n").find("epohcs"), std::string::npos);
  EXPECT_NE(config_error("[atack]\nepochs = 3\n").find("atack"), std::string::npos);
  const auto type = config_error("[attack]\nepochs = many\n");
  EXPECT_NE(type.find("epochs"), std::string::npos);
  EXPECT_NE(type.find("many"), std::string::npos);
  EXPECT_NE(config_error("[attack]\nepochs = 3x\n").find("epochs"), std::string::npos);
  EXPECT_NE(config_error("[losses]\ntv_mode = wavy\n").find("tv_mode"), std::string::npos);
  EXPECT_NE(config_error("[attack]\nensemble = maybe\n").find("ensemble"), std::string::npos);
  EXPECT_NE(config_error("epochs = 3\n").find("epochs"), std::string::npos);
  EXPECT_FALSE(config_error("[eval]\nconf_threshold = 1.5\n").empty());
  EXPECT_FALSE(config_error("[dataset]\nsprite_kinds = blob\n").empty());
}

TEST(Config, SerializeParseRoundTrip) {
  io::RunConfig rc;
  rc.dataset.count = 4;
  rc.dataset.sprite_kinds = {"cross", "checker"};
  rc.dataset.background_fill = 0.1;
  rc.detector.init = io::DetectorInit::Random;
  rc.attack.schedule.alpha0 = 1.0 / 3.0;
  rc.attack.ensemble = true;
  rc.attack.phase_mode = EnsemblePhaseMode::Literal;
  rc.losses.tv_normalization = TvNormalization::Sum;
  rc.pa.noise_sigma = 0.02;
  rc.pa.rng_seed = 99;
  rc.eval.nms_iou = 0.45;
  rc.output_dir = "runs/a";
  const std::string text = io::serialize_config(rc);
  const auto back = io::parse_config(text);
  EXPECT_EQ(back, rc);
  EXPECT_EQ(io::serialize_config(back), text);
  EXPECT_EQ(io::parse_config(io::serialize_config(io::RunConfig{})), io::RunConfig{});
}

TEST(Config, BuildersFollowTheConfig) {
  const auto rc = io::parse_config("[dataset]\ncount = 4\nsprite_kinds = ring,disk\n");
  const auto scenes = io::build_dataset(rc);
  ASSERT_EQ(scenes.size(), 4u);
  EXPECT_EQ(scenes[0].ground_truth.at(0).class_id, 0u);
  EXPECT_EQ(scenes[1].ground_truth.at(0).class_id, 1u);
  for (const auto& s : scenes) {
    const auto& g = s.ground_truth.at(0);
    EXPECT_EQ(g.x1 % 8, 1u);
    EXPECT_EQ(g.y1 % 8, 1u);
  }
  EXPECT_EQ(io::build_dataset(rc)[2].image.values()[0], scenes[2].image.values()[0]);
  EXPECT_NE(io::scene_seed(0, 0), io::scene_seed(0, 1));
  EXPECT_EQ(io::perturbation_shape(rc), (Shape{64, 64, 3}));
  EXPECT_FALSE(io::build_attack_config(rc).ensemble.has_value());
}
