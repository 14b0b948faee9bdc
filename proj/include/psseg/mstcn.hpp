// MS-TCN++ temporal head: a dual-dilated prediction-generation stage followed by
// refinement stages that each consume the softmax of the previous stage.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "psseg/autodiff.hpp"
#include "psseg/feature_store.hpp"

namespace psseg {

struct ModelConfig {
  std::size_t num_classes = 19;
  std::size_t feat_dim = 2048;
  std::size_t hidden_maps = 64;
  std::size_t pg_layers = 13;
  std::size_t refine_stages = 4;
  std::size_t refine_layers = 13;
  std::size_t kernel_size = 3;
  double smoothing_weight = 0.35;
  double clamp_tau = 4.0;
  // Stored and logged only; no loss term uses it.
  std::size_t smoothing_window = 30;
  // Must stay 0: dropout is not implemented.
  double dropout = 0.0;
  // false: every refinement stage has its own weights.
  bool shared_refinement = false;

  std::size_t num_stages() const { return 1 + refine_stages; }

  // Dilations of the two parallel convolutions in prediction-generation layer i.
  std::pair<std::size_t, std::size_t> pg_dilations(std::size_t layer) const {
    return {std::size_t{1} << layer, std::size_t{1} << (pg_layers - 1 - layer)};
  }
  std::size_t refine_dilation(std::size_t layer) const { return std::size_t{1} << layer; }

  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

struct TensorSpec {
  std::string name;
  ad::Shape shape;
};

// Every parameter tensor the configuration implies, in a fixed order.
std::vector<TensorSpec> parameter_layout(const ModelConfig& cfg);

// Closed-form parameter count.
std::size_t parameter_count(const ModelConfig& cfg);

template <typename Real>
struct NamedTensor {
  std::string name;
  ad::Shape shape;
  std::vector<Real> values;
};

template <typename Real>
struct ModelParams {
  std::vector<NamedTensor<Real>> tensors;

  const NamedTensor<Real>& get(const std::string& name) const;
  NamedTensor<Real>& get(const std::string& name);
  std::size_t count() const;

  template <typename To>
  ModelParams<To> cast() const {
    ModelParams<To> out;
    for (const auto& t : tensors)
      out.tensors.push_back({t.name, t.shape, std::vector<To>(t.values.begin(), t.values.end())});
    return out;
  }

  // Throws unless names and shapes match parameter_layout(cfg) exactly.
  void check_layout(const ModelConfig& cfg) const;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases, where
// fan_in = input channels * kernel size.
template <typename Real>
ModelParams<Real> init_params(const ModelConfig& cfg, std::uint64_t seed);

template <typename Real>
ModelParams<Real> zero_params(const ModelConfig& cfg);

template <typename Real>
using BoundParams = std::unordered_map<std::string, ad::Tensor<Real>>;

template <typename Real>
BoundParams<Real> bind_params(ad::Tape<Real>& tape, const ModelParams<Real>& params,
                              bool requires_grad);

// input: feat_dim x T. Returns num_stages() logit tensors, each num_classes x T.
template <typename Real>
std::vector<ad::Tensor<Real>> forward(const BoundParams<Real>& params, const ModelConfig& cfg,
                                      const ad::Tensor<Real>& input);

// Frame-major T x d features to a channel-major d x T tensor.
template <typename Real>
ad::Tensor<Real> features_to_tensor(ad::Tape<Real>& tape, const FeatureSequence& feats);

// Logits of every stage as plain C x T matrices (no gradients).
template <typename Real>
std::vector<std::vector<Real>> forward_logits(const ModelParams<Real>& params,
                                              const ModelConfig& cfg,
                                              const FeatureSequence& feats);

struct Prediction {
  std::vector<Label> labels;
  std::size_t num_classes = 0;
  // num_classes x T, class-major.
  std::vector<float> probabilities;
};

// Final-stage softmax and its per-frame argmax (ties go to the smaller index).
Prediction predict(const ModelParams<float>& params, const ModelConfig& cfg,
                   const FeatureSequence& feats);

// Argmax over a class-major C x T matrix, ties to the smaller index.
std::vector<Label> argmax_columns(std::span<const float> matrix, std::size_t classes);

inline constexpr char kCheckpointMagic[4] = {'P', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path);
std::vector<char> encode_checkpoint(const ModelParams<float>& params);
ModelParams<float> load_checkpoint(const std::filesystem::path& path);

void save_model_config(const ModelConfig& cfg, const std::filesystem::path& path);
ModelConfig load_model_config(const std::filesystem::path& path);

}  // namespace psseg
