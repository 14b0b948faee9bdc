#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "model_gradcheck.hpp"
#include "psseg/mstcn.hpp"
#include "psseg/training.hpp"

namespace fs = std::filesystem;
using namespace psseg;

namespace {

FeatureSequence random_features(std::size_t T, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.f, 1.f);
  FeatureSequence f;
  f.frame_count = T;
  f.feat_dim = d;
  f.data.resize(T * d);
  for (auto& v : f.data) v = g(rng);
  return f;
}

ModelConfig tiny_config(std::size_t C = 3, std::size_t d = 4) {
  ModelConfig cfg;
  cfg.num_classes = C;
  cfg.feat_dim = d;
  cfg.hidden_maps = 4;
  cfg.pg_layers = 3;
  cfg.refine_stages = 2;
  cfg.refine_layers = 3;
  return cfg;
}

}  // namespace

TEST(ModelConfig, DefaultsMatchTheRecipe) {
  const ModelConfig cfg;
  EXPECT_EQ(cfg.num_stages(), 5u);
  EXPECT_EQ(cfg.pg_layers, 13u);
  EXPECT_EQ(cfg.refine_stages, 4u);
  EXPECT_EQ(cfg.refine_layers, 13u);
  EXPECT_EQ(cfg.hidden_maps, 64u);
  EXPECT_EQ(cfg.kernel_size, 3u);
  for (std::size_t i = 0; i < 13; ++i) {
    const auto [lo, hi] = cfg.pg_dilations(i);
    EXPECT_EQ(lo, std::size_t{1} << i);
    EXPECT_EQ(hi, std::size_t{1} << (12 - i));
  }
}

TEST(ModelConfig, JsonRoundTripAndValidation) {
  ModelConfig cfg = tiny_config();
  cfg.smoothing_weight = 0.1;
  EXPECT_EQ(ModelConfig::from_json(cfg.to_json()), cfg);
  ModelConfig bad = cfg;
  bad.dropout = 0.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.kernel_size = 2;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.num_classes = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Forward, PaperConfigShapes) {
  ModelConfig cfg;
  const auto params = init_params<float>(cfg, 1);
  const auto feats = random_features(50, 2048, 2);
  const auto out = forward_logits(params, cfg, feats);
  ASSERT_EQ(out.size(), 5u);
  for (const auto& s : out) EXPECT_EQ(s.size(), 19u * 50u);
}

TEST(Forward, SingleFrameInput) {
  ModelConfig cfg;
  cfg.feat_dim = 8;
  const auto params = init_params<float>(cfg, 1);
  const auto out = forward_logits(params, cfg, random_features(1, 8, 3));
  ASSERT_EQ(out.size(), 5u);
  for (const auto& s : out) {
    EXPECT_EQ(s.size(), 19u);
    for (float v : s) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Forward, ZeroWeightsGiveUniformSoftmax) {
  const auto cfg = tiny_config(5, 3);
  const auto params = zero_params<float>(cfg);
  const auto pred = predict(params, cfg, random_features(7, 3, 4));
  for (float p : pred.probabilities) EXPECT_FLOAT_EQ(p, 0.2f);
  for (auto l : pred.labels) EXPECT_EQ(l, 0);
}

TEST(Forward, RejectsMismatchedFeatures) {
  const auto cfg = tiny_config();
  const auto params = init_params<float>(cfg, 1);
  EXPECT_THROW(forward_logits(params, cfg, random_features(5, 7, 1)), std::invalid_argument);
  auto strided = random_features(5, 4, 1);
  strided.stride = 4;
  EXPECT_THROW(forward_logits(params, cfg, strided), std::invalid_argument);
}

TEST(Predict, ConstantMaximalClass) {
  auto cfg = tiny_config(5, 3);
  auto params = zero_params<float>(cfg);
  const std::string head = "refine" + std::to_string(cfg.refine_stages - 1) + ".out.bias";
  params.get(head).values[3] = 2.0f;
  const auto pred = predict(params, cfg, random_features(9, 3, 5));
  for (auto l : pred.labels) EXPECT_EQ(l, 3);
}

TEST(Predict, ArgmaxConsistentWithProbabilities) {
  const auto cfg = tiny_config(4, 4);
  const auto params = init_params<float>(cfg, 7);
  const auto pred = predict(params, cfg, random_features(30, 4, 8));
  EXPECT_EQ(pred.labels, argmax_columns(pred.probabilities, 4));
  for (std::size_t t = 0; t < 30; ++t) {
    double s = 0;
    for (std::size_t c = 0; c < 4; ++c) s += pred.probabilities[c * 30 + t];
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(Predict, ArgmaxTiesGoToSmallerIndex) {
  const std::vector<float> m = {0.5f, 0.1f, 0.5f, 0.9f};  // 2 x 2
  EXPECT_EQ(argmax_columns(m, 2), (std::vector<Label>{0, 1}));
}

TEST(ParameterCount, SmallHandEnumeratedConfig) {
  ModelConfig cfg;
  cfg.hidden_maps = 1;
  cfg.pg_layers = 1;
  cfg.refine_stages = 0;
  cfg.kernel_size = 3;
  cfg.feat_dim = 1;
  cfg.num_classes = 2;
  // in: 1+1, conv_low: 3+1, conv_high: 3+1, fuse: 2+1, out: 2+2
  EXPECT_EQ(parameter_count(cfg), 17u);
}

TEST(ParameterCount, MatchesLayoutEnumeration) {
  std::mt19937 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig cfg;
    cfg.num_classes = 1 + rng() % 20;
    cfg.feat_dim = 1 + rng() % 50;
    cfg.hidden_maps = 1 + rng() % 16;
    cfg.pg_layers = 1 + rng() % 6;
    cfg.refine_stages = rng() % 4;
    cfg.refine_layers = 1 + rng() % 6;
    std::size_t n = 0;
    for (const auto& t : parameter_layout(cfg)) n += ad::numel(t.shape);
    EXPECT_EQ(parameter_count(cfg), n);
    EXPECT_EQ(init_params<float>(cfg, 1).count(), n);
    EXPECT_EQ(parameter_count(cfg), parameter_count(cfg));
  }
}

TEST(ParameterCount, DifferenceAcrossClassCounts) {
  ModelConfig a;
  ModelConfig b = a;
  b.num_classes = a.num_classes + 3;
  const std::size_t dC = 3, F = a.hidden_maps, S = a.num_stages();
  // Every stage head gains F*dC weights + dC biases; every refinement input
  // projection gains dC*F weights.
  const std::size_t expected = S * (F * dC + dC) + a.refine_stages * (dC * F);
  EXPECT_EQ(parameter_count(b) - parameter_count(a), expected);
}

TEST(Forward, TimeReversalCovarianceWithSymmetricKernels) {
  const auto cfg = tiny_config(3, 4);
  auto params = init_params<double>(cfg, 11);
  for (auto& t : params.tensors) {
    if (t.shape.size() != 3 || t.shape[2] != 3) continue;
    for (std::size_t i = 0; i < t.values.size(); i += 3) t.values[i + 2] = t.values[i];
  }
  const std::size_t T = 23;
  const auto f = random_features(T, 4, 12);
  FeatureSequence r = f;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < 4; ++j) r.data[t * 4 + j] = f.data[(T - 1 - t) * 4 + j];
  const auto a = forward_logits(params, cfg, f);
  const auto b = forward_logits(params, cfg, r);
  for (std::size_t s = 0; s < a.size(); ++s)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < T; ++t) EXPECT_NEAR(a[s][c * T + t], b[s][c * T + (T - 1 - t)], 1e-12);
}

TEST(Forward, ShapeContractForRandomConfigs) {
  std::mt19937 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    ModelConfig cfg;
    cfg.num_classes = 1 + rng() % 6;
    cfg.feat_dim = 1 + rng() % 6;
    cfg.hidden_maps = 1 + rng() % 6;
    cfg.pg_layers = 1 + rng() % 5;
    cfg.refine_stages = rng() % 3;
    cfg.refine_layers = 1 + rng() % 4;
    const std::size_t T = 1 + rng() % 20;
    const auto out = forward_logits(init_params<float>(cfg, trial), cfg, random_features(T, cfg.feat_dim, trial));
    ASSERT_EQ(out.size(), cfg.refine_stages + 1);
    for (const auto& s : out) EXPECT_EQ(s.size(), cfg.num_classes * T);
  }
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const auto dir = fs::temp_directory_path() / "psseg_mstcn_ckpt";
  fs::create_directories(dir);
  const auto cfg = tiny_config();
  const auto params = init_params<float>(cfg, 21);
  save_checkpoint(params, dir / "m.psck");
  save_model_config(cfg, dir / "m.json");
  const auto back = load_checkpoint(dir / "m.psck");
  const auto cfg2 = load_model_config(dir / "m.json");
  EXPECT_EQ(cfg2, cfg);
  back.check_layout(cfg2);
  const auto f = random_features(17, 4, 22);
  EXPECT_EQ(forward_logits(params, cfg, f), forward_logits(back, cfg2, f));
  EXPECT_EQ(encode_checkpoint(params), encode_checkpoint(back));
}

TEST(Checkpoint, LayoutMismatchAndCorruptionAreRejected) {
  const auto dir = fs::temp_directory_path() / "psseg_mstcn_ckpt2";
  fs::create_directories(dir);
  const auto params = init_params<float>(tiny_config(3), 1);
  EXPECT_THROW(params.check_layout(tiny_config(4)), std::invalid_argument);
  auto bytes = encode_checkpoint(params);
  bytes.resize(bytes.size() - 3);
  std::ofstream(dir / "bad.psck", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  EXPECT_THROW(load_checkpoint(dir / "bad.psck"), std::exception);
}

TEST(Init, SeededAndBounded) {
  const auto cfg = tiny_config();
  const auto a = init_params<float>(cfg, 5), b = init_params<float>(cfg, 5), c = init_params<float>(cfg, 6);
  EXPECT_EQ(encode_checkpoint(a), encode_checkpoint(b));
  EXPECT_NE(encode_checkpoint(a), encode_checkpoint(c));
  const auto& w = a.get("pg.in.weight");
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.feat_dim));
  for (float v : w.values) EXPECT_LE(std::abs(v), bound);
}

TEST(EndToEnd, LossGradientMatchesFiniteDifferences) {
  for (int trial = 0; trial < 3; ++trial) {
    ModelConfig cfg;
    cfg.num_classes = 2 + trial % 2;
    cfg.feat_dim = 2 + trial;
    cfg.hidden_maps = 3;
    cfg.pg_layers = 3;
    cfg.refine_stages = 2;
    cfg.refine_layers = 2;
    const std::size_t T = 8 + 2 * trial;
    for (double lambda : {0.0, cfg.smoothing_weight}) {
      const auto r = gradcheck::check_model_loss(cfg, T, 40 + trial, lambda);
      EXPECT_GE(r.probes, 5u);
      EXPECT_LE(r.rel_error, 1e-5) << "trial " << trial << " lambda " << lambda;
    }
  }
}
