#include "psseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "psseg/binary_io.hpp"

namespace psseg {

using nlohmann::json;

std::vector<std::size_t> TrainConfig::milestones() const {
  std::vector<std::size_t> out;
  for (double f : milestone_fractions)
    out.push_back(static_cast<std::size_t>(std::llround(f * static_cast<double>(epochs))));
  std::sort(out.begin(), out.end());
  return out;
}

double TrainConfig::learning_rate(std::size_t epoch) const {
  const auto ms = milestones();
  return multistep_lr(base_lr, epoch, ms, gamma);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size != 1) throw std::invalid_argument("train config: only batch_size 1 is supported");
  if (!(base_lr > 0.0)) throw std::invalid_argument("train config: base_lr must be > 0");
  if (!(gamma > 0.0)) throw std::invalid_argument("train config: gamma must be > 0");
  for (double f : milestone_fractions)
    if (!(f > 0.0 && f <= 1.0))
      throw std::invalid_argument("train config: milestone fractions must lie in (0, 1]");
  if (!(smoothing_weight >= 0.0)) throw std::invalid_argument("train config: smoothing_weight must be >= 0");
  if (gradient_clipping) throw std::invalid_argument("train config: gradient clipping is not supported");
}

json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"base_lr", base_lr},
          {"gamma", gamma},
          {"milestone_fractions", milestone_fractions},
          {"milestones", milestones()},
          {"smoothing_weight", smoothing_weight},
          {"seed", seed},
          {"deterministic", deterministic},
          {"shuffle", shuffle},
          {"gradient_clipping", gradient_clipping},
          {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.gamma = j.value("gamma", c.gamma);
  c.milestone_fractions = j.value("milestone_fractions", c.milestone_fractions);
  c.smoothing_weight = j.value("smoothing_weight", c.smoothing_weight);
  c.seed = j.value("seed", c.seed);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.shuffle = j.value("shuffle", c.shuffle);
  c.gradient_clipping = j.value("gradient_clipping", c.gradient_clipping);
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.eps = a.value("eps", c.adam.eps);
  }
  c.validate();
  return c;
}

template <typename Real>
ad::Tensor<Real> total_loss(std::span<const ad::Tensor<Real>> stage_logits,
                            std::span<const Label> labels, double smoothing_weight,
                            double clamp_tau) {
  if (stage_logits.empty()) throw std::invalid_argument("total_loss: no stages");
  ad::Tensor<Real> total;
  for (const auto& logits : stage_logits) {
    if (logits.shape() != stage_logits.front().shape())
      throw std::invalid_argument("total_loss: stage shapes differ (" +
                                  ad::shape_str(logits.shape()) + " vs " +
                                  ad::shape_str(stage_logits.front().shape()) + ")");
    auto term = ad::cross_entropy(logits, labels);
    if (smoothing_weight != 0.0) {
      auto smooth =
          ad::truncated_smoothing_mse(ad::log_softmax_channels(logits), static_cast<Real>(clamp_tau));
      term = ad::add(term, ad::scale(smooth, static_cast<Real>(smoothing_weight)));
    }
    total = total.valid() ? ad::add(total, term) : term;
  }
  return total;
}

template ad::Tensor<float> total_loss<float>(std::span<const ad::Tensor<float>>,
                                             std::span<const Label>, double, double);
template ad::Tensor<double> total_loss<double>(std::span<const ad::Tensor<double>>,
                                               std::span<const Label>, double, double);

json RunManifest::to_json() const {
  return {{"model_config", model_config},
          {"train_config", train_config},
          {"seed", seed},
          {"dataset_digest", dataset_digest},
          {"train_videos", train_videos},
          {"epoch_losses", epoch_losses},
          {"learning_rates", learning_rates},
          {"epoch_orders", epoch_orders},
          {"init_scheme", init_scheme},
          {"checkpoint_path", checkpoint_path},
          {"prediction_paths", prediction_paths},
          {"warnings", warnings}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.model_config = j.at("model_config");
  m.train_config = j.at("train_config");
  m.seed = j.at("seed").get<std::uint64_t>();
  m.dataset_digest = j.value("dataset_digest", std::string{});
  m.train_videos = j.value("train_videos", std::vector<std::string>{});
  m.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
  m.learning_rates = j.at("learning_rates").get<std::vector<double>>();
  m.epoch_orders = j.value("epoch_orders", std::vector<std::vector<std::string>>{});
  m.init_scheme = j.value("init_scheme", std::string{});
  m.checkpoint_path = j.value("checkpoint_path", std::string{});
  m.prediction_paths = j.value("prediction_paths", std::vector<std::string>{});
  m.warnings = j.value("warnings", std::vector<std::string>{});
  return m;
}

TrainResult train_fold(std::span<const VideoData> videos, const ModelConfig& cfg,
                       const TrainConfig& tcfg, const std::string& dataset_digest) {
  cfg.validate();
  tcfg.validate();
  if (videos.empty()) throw std::invalid_argument("train_fold: empty training set");
  for (const auto& v : videos) {
    if (v.features.feat_dim != cfg.feat_dim)
      throw std::invalid_argument("train_fold: video " + v.id + " has feature dimension " +
                                  std::to_string(v.features.feat_dim) + ", model expects " +
                                  std::to_string(cfg.feat_dim));
    if (v.features.frame_count != v.labels.frame_count())
      throw std::invalid_argument("train_fold: video " + v.id + " is not reconciled (" +
                                  std::to_string(v.features.frame_count) + " feature frames vs " +
                                  std::to_string(v.labels.frame_count()) + " labels)");
    if (v.features.stride != 1)
      throw std::invalid_argument("train_fold: video " + v.id + " is not at full frame rate");
  }

  TrainResult result;
  result.params = init_params<float>(cfg, tcfg.seed);
  auto& params = result.params;
  std::vector<AdamMoments<float>> moments(params.tensors.size());
  std::int64_t step = 0;

  // Order shuffling draws from its own stream so it is independent of init.
  std::mt19937_64 order_rng(tcfg.seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<std::size_t> order(videos.size());

  auto& m = result.manifest;
  m.model_config = cfg.to_json();
  m.train_config = tcfg.to_json();
  m.seed = tcfg.seed;
  m.dataset_digest = dataset_digest;
  m.init_scheme = "uniform(+-1/sqrt(fan_in)), mt19937_64(seed)";
  for (const auto& v : videos) m.train_videos.push_back(v.id);

  for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    const double lr = tcfg.learning_rate(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (tcfg.shuffle) std::shuffle(order.begin(), order.end(), order_rng);

    double loss_sum = 0.0;
    std::vector<std::string> ids;
    for (std::size_t idx : order) {
      const auto& video = videos[idx];
      ids.push_back(video.id);
      ad::Tape<float> tape;
      const auto bound = bind_params(tape, params, true);
      const auto stages = forward(bound, cfg, features_to_tensor<float>(tape, video.features));
      const auto loss = total_loss<float>(stages, video.labels.labels, tcfg.smoothing_weight, cfg.clamp_tau);
      tape.backward(loss);
      loss_sum += loss.item();
      ++step;
      for (std::size_t p = 0; p < params.tensors.size(); ++p) {
        const auto grad = tape.grad(bound.at(params.tensors[p].name).id());
        adam_step<float>(params.tensors[p].values, grad, moments[p], step, lr, tcfg.adam);
      }
    }
    m.epoch_losses.push_back(loss_sum / static_cast<double>(videos.size()));
    m.learning_rates.push_back(lr);
    m.epoch_orders.push_back(std::move(ids));
  }
  return result;
}

void write_prediction(const Prediction& p, const std::filesystem::path& path) {
  const std::size_t T = p.labels.size();
  if (p.probabilities.size() != p.num_classes * T)
    throw std::invalid_argument("prediction has " + std::to_string(p.probabilities.size()) +
                                " probabilities for " + std::to_string(p.num_classes) + " x " +
                                std::to_string(T));
  io::ByteWriter w;
  w.put_bytes(std::string_view(kPredictionMagic, 4));
  w.put_u8(kPredictionVersion);
  w.put_u32(static_cast<std::uint32_t>(T));
  w.put_u32(static_cast<std::uint32_t>(p.num_classes));
  for (Label l : p.labels) w.put_i32(l);
  w.put_f32s(p.probabilities);
  w.write_file(path);
}

Prediction read_prediction(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  if (r.remaining() < 4 || r.get_bytes(4) != std::string_view(kPredictionMagic, 4))
    throw io::FormatError(path.string() + ": bad magic (expected PSPD)");
  const auto version = r.get_u8();
  if (version != kPredictionVersion)
    throw io::FormatError(path.string() + ": unsupported prediction version " + std::to_string(version));
  Prediction p;
  const std::size_t T = r.get_u32();
  p.num_classes = r.get_u32();
  const std::size_t expected = T * 4 + p.num_classes * T * 4;
  if (r.remaining() != expected)
    throw io::FormatError(path.string() + ": payload size mismatch (expected " +
                          std::to_string(expected) + " bytes, got " + std::to_string(r.remaining()) + ")");
  p.labels.resize(T);
  for (auto& l : p.labels) l = r.get_i32();
  p.probabilities.resize(p.num_classes * T);
  r.get_f32s(p.probabilities);
  for (Label l : p.labels)
    if (l < 0 || static_cast<std::size_t>(l) >= p.num_classes)
      throw io::FormatError(path.string() + ": label " + std::to_string(l) + " out of range");
  return p;
}

std::vector<std::filesystem::path> dump_predictions(const ModelParams<float>& params,
                                                    const ModelConfig& cfg,
                                                    std::span<const VideoData> videos,
                                                    const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> paths;
  for (const auto& v : videos) {
    const auto path = out_dir / (v.id + ".pspd");
    write_prediction(predict(params, cfg, v.features), path);
    paths.push_back(path);
  }
  return paths;
}

}  // namespace psseg
