// Training recipe for the temporal head and the prediction dump format.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "psseg/autodiff.hpp"
#include "psseg/dataset.hpp"
#include "psseg/mstcn.hpp"
#include "psseg/optim.hpp"

namespace psseg {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 1;
  double base_lr = 5e-4;
  double gamma = 0.3;
  std::vector<double> milestone_fractions = {0.6, 0.9};
  double smoothing_weight = 0.35;
  std::uint64_t seed = 0;
  bool deterministic = true;
  bool shuffle = true;
  bool gradient_clipping = false;
  AdamOptions adam;

  // round(fraction * epochs) for each fraction, sorted.
  std::vector<std::size_t> milestones() const;
  double learning_rate(std::size_t epoch) const;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Sum over stages of cross-entropy + weight * truncated smoothing MSE of the
/// stage's log-softmax.
template <typename Real>
ad::Tensor<Real> total_loss(std::span<const ad::Tensor<Real>> stage_logits,
                            std::span<const Label> labels, double smoothing_weight,
                            double clamp_tau);

struct RunManifest {
  nlohmann::json model_config;
  nlohmann::json train_config;
  std::uint64_t seed = 0;
  std::string dataset_digest;
  std::vector<std::string> train_videos;
  std::vector<double> epoch_losses;
  std::vector<double> learning_rates;
  std::vector<std::vector<std::string>> epoch_orders;
  std::string init_scheme;
  std::string checkpoint_path;
  std::vector<std::string> prediction_paths;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

struct TrainResult {
  ModelParams<float> params;
  RunManifest manifest;
};

// Returns the parameters after the last epoch; there is no model selection.
TrainResult train_fold(std::span<const VideoData> videos, const ModelConfig& cfg,
                       const TrainConfig& tcfg, const std::string& dataset_digest = {});

inline constexpr char kPredictionMagic[4] = {'P', 'S', 'P', 'D'};
inline constexpr std::uint8_t kPredictionVersion = 1;

// Layout: "PSPD", version byte, u32 T, u32 C, T int32 labels, then C x T
// float32 probabilities (class-major), all little-endian.
void write_prediction(const Prediction& prediction, const std::filesystem::path& path);
Prediction read_prediction(const std::filesystem::path& path);

std::vector<std::filesystem::path> dump_predictions(const ModelParams<float>& params,
                                                    const ModelConfig& cfg,
                                                    std::span<const VideoData> videos,
                                                    const std::filesystem::path& out_dir);

}  // namespace psseg
