#include "psseg/mstcn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "psseg/binary_io.hpp"

namespace psseg {

using nlohmann::json;

void ModelConfig::validate() const {
  if (num_classes < 1 || feat_dim < 1 || hidden_maps < 1 || pg_layers < 1 || refine_layers < 1)
    throw std::invalid_argument("model config: all layer and channel counts must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw std::invalid_argument("model config: kernel_size must be odd");
  if (pg_layers > 30 || refine_layers > 30)
    throw std::invalid_argument("model config: at most 30 layers per stage");
  if (!(smoothing_weight >= 0.0)) throw std::invalid_argument("model config: smoothing_weight must be >= 0");
  if (!(clamp_tau > 0.0)) throw std::invalid_argument("model config: clamp_tau must be > 0");
  if (dropout != 0.0) throw std::invalid_argument("model config: dropout is not supported (must be 0)");
}

json ModelConfig::to_json() const {
  return {{"num_classes", num_classes},
          {"feat_dim", feat_dim},
          {"hidden_maps", hidden_maps},
          {"pg_layers", pg_layers},
          {"refine_stages", refine_stages},
          {"refine_layers", refine_layers},
          {"kernel_size", kernel_size},
          {"smoothing_weight", smoothing_weight},
          {"clamp_tau", clamp_tau},
          {"smoothing_window", smoothing_window},
          {"dropout", dropout},
          {"shared_refinement", shared_refinement}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.num_classes = j.value("num_classes", c.num_classes);
  c.feat_dim = j.value("feat_dim", c.feat_dim);
  c.hidden_maps = j.value("hidden_maps", c.hidden_maps);
  c.pg_layers = j.value("pg_layers", c.pg_layers);
  c.refine_stages = j.value("refine_stages", c.refine_stages);
  c.refine_layers = j.value("refine_layers", c.refine_layers);
  c.kernel_size = j.value("kernel_size", c.kernel_size);
  c.smoothing_weight = j.value("smoothing_weight", c.smoothing_weight);
  c.clamp_tau = j.value("clamp_tau", c.clamp_tau);
  c.smoothing_window = j.value("smoothing_window", c.smoothing_window);
  c.dropout = j.value("dropout", c.dropout);
  c.shared_refinement = j.value("shared_refinement", c.shared_refinement);
  c.validate();
  return c;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) { return a.to_json() == b.to_json(); }

namespace {

std::string refine_prefix(const ModelConfig& cfg, std::size_t stage) {
  return cfg.shared_refinement ? "refine" : "refine" + std::to_string(stage);
}

std::size_t refine_weight_sets(const ModelConfig& cfg) {
  if (cfg.refine_stages == 0) return 0;
  return cfg.shared_refinement ? 1 : cfg.refine_stages;
}

void push_conv(std::vector<TensorSpec>& out, const std::string& name, std::size_t cout,
               std::size_t cin, std::size_t kernel) {
  out.push_back({name + ".weight", {cout, cin, kernel}});
  out.push_back({name + ".bias", {cout}});
}

}  // namespace

std::vector<TensorSpec> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t F = cfg.hidden_maps, C = cfg.num_classes, K = cfg.kernel_size;
  std::vector<TensorSpec> out;
  push_conv(out, "pg.in", F, cfg.feat_dim, 1);
  for (std::size_t i = 0; i < cfg.pg_layers; ++i) {
    const std::string p = "pg.layer" + std::to_string(i);
    push_conv(out, p + ".conv_low", F, F, K);
    push_conv(out, p + ".conv_high", F, F, K);
    push_conv(out, p + ".fuse", F, 2 * F, 1);
  }
  push_conv(out, "pg.out", C, F, 1);
  for (std::size_t s = 0; s < refine_weight_sets(cfg); ++s) {
    const std::string p = refine_prefix(cfg, s);
    push_conv(out, p + ".in", F, C, 1);
    for (std::size_t i = 0; i < cfg.refine_layers; ++i) {
      const std::string q = p + ".layer" + std::to_string(i);
      push_conv(out, q + ".conv", F, F, K);
      push_conv(out, q + ".proj", F, F, 1);
    }
    push_conv(out, p + ".out", C, F, 1);
  }
  return out;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t F = cfg.hidden_maps, C = cfg.num_classes, K = cfg.kernel_size;
  const std::size_t d = cfg.feat_dim;
  const std::size_t pg = (d * F + F) + cfg.pg_layers * (2 * (F * F * K + F) + (2 * F * F + F)) +
                         (F * C + C);
  const std::size_t refine =
      (C * F + F) + cfg.refine_layers * ((F * F * K + F) + (F * F + F)) + (F * C + C);
  return pg + refine_weight_sets(cfg) * refine;
}

template <typename Real>
const NamedTensor<Real>& ModelParams<Real>::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw std::out_of_range("no parameter named '" + name + "'");
}

template <typename Real>
NamedTensor<Real>& ModelParams<Real>::get(const std::string& name) {
  for (auto& t : tensors)
    if (t.name == name) return t;
  throw std::out_of_range("no parameter named '" + name + "'");
}

template <typename Real>
std::size_t ModelParams<Real>::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

template <typename Real>
void ModelParams<Real>::check_layout(const ModelConfig& cfg) const {
  const auto layout = parameter_layout(cfg);
  if (layout.size() != tensors.size())
    throw std::invalid_argument("parameters hold " + std::to_string(tensors.size()) +
                                " tensors, config expects " + std::to_string(layout.size()));
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].name != tensors[i].name || layout[i].shape != tensors[i].shape ||
        tensors[i].values.size() != ad::numel(tensors[i].shape))
      throw std::invalid_argument("parameter " + std::to_string(i) + " is '" + tensors[i].name +
                                  "' " + ad::shape_str(tensors[i].shape) + ", config expects '" +
                                  layout[i].name + "' " + ad::shape_str(layout[i].shape));
  }
}

template <typename Real>
ModelParams<Real> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams<Real> params;
  double bound = 1.0;
  for (auto& spec : parameter_layout(cfg)) {
    // Bias shares the bound of the weight that precedes it.
    if (spec.shape.size() == 3) bound = 1.0 / std::sqrt(static_cast<double>(spec.shape[1] * spec.shape[2]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<Real> values(ad::numel(spec.shape));
    for (auto& v : values) v = static_cast<Real>(dist(rng));
    params.tensors.push_back({spec.name, spec.shape, std::move(values)});
  }
  return params;
}

template <typename Real>
ModelParams<Real> zero_params(const ModelConfig& cfg) {
  ModelParams<Real> params;
  for (auto& spec : parameter_layout(cfg))
    params.tensors.push_back({spec.name, spec.shape, std::vector<Real>(ad::numel(spec.shape), Real(0))});
  return params;
}

template <typename Real>
BoundParams<Real> bind_params(ad::Tape<Real>& tape, const ModelParams<Real>& params,
                              bool requires_grad) {
  BoundParams<Real> bound;
  for (const auto& t : params.tensors) bound.emplace(t.name, tape.leaf(t.shape, t.values, requires_grad));
  return bound;
}

template <typename Real>
std::vector<ad::Tensor<Real>> forward(const BoundParams<Real>& params, const ModelConfig& cfg,
                                      const ad::Tensor<Real>& input) {
  cfg.validate();
  if (input.shape().size() != 2 || input.rows() != cfg.feat_dim)
    throw std::invalid_argument("forward: expected " + std::to_string(cfg.feat_dim) +
                                "-dim features, got " + ad::shape_str(input.shape()));
  auto conv = [&](const ad::Tensor<Real>& x, const std::string& name, std::size_t dilation) {
    return ad::conv1d(x, params.at(name + ".weight"), params.at(name + ".bias"), dilation);
  };

  std::vector<ad::Tensor<Real>> stages;
  auto f = conv(input, "pg.in", 1);
  for (std::size_t i = 0; i < cfg.pg_layers; ++i) {
    const std::string p = "pg.layer" + std::to_string(i);
    const auto [low, high] = cfg.pg_dilations(i);
    auto fused = conv(ad::concat_channels(conv(f, p + ".conv_low", low), conv(f, p + ".conv_high", high)),
                      p + ".fuse", 1);
    f = ad::add(ad::relu(fused), f);
  }
  stages.push_back(conv(f, "pg.out", 1));

  for (std::size_t s = 0; s < cfg.refine_stages; ++s) {
    const std::string p = refine_prefix(cfg, s);
    auto h = conv(ad::softmax_channels(stages.back()), p + ".in", 1);
    for (std::size_t i = 0; i < cfg.refine_layers; ++i) {
      const std::string q = p + ".layer" + std::to_string(i);
      auto r = conv(ad::relu(conv(h, q + ".conv", cfg.refine_dilation(i))), q + ".proj", 1);
      h = ad::add(h, r);
    }
    stages.push_back(conv(h, p + ".out", 1));
  }
  return stages;
}

template <typename Real>
ad::Tensor<Real> features_to_tensor(ad::Tape<Real>& tape, const FeatureSequence& feats) {
  const std::size_t T = feats.frame_count, d = feats.feat_dim;
  if (feats.data.size() != T * d) throw std::invalid_argument("feature payload does not match its header");
  std::vector<Real> x(d * T);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < d; ++j) x[j * T + t] = static_cast<Real>(feats.data[t * d + j]);
  return tape.constant({d, T}, std::move(x));
}

template <typename Real>
std::vector<std::vector<Real>> forward_logits(const ModelParams<Real>& params,
                                              const ModelConfig& cfg,
                                              const FeatureSequence& feats) {
  if (feats.feat_dim != cfg.feat_dim)
    throw std::invalid_argument("features have dimension " + std::to_string(feats.feat_dim) +
                                ", model expects " + std::to_string(cfg.feat_dim));
  if (feats.stride != 1)
    throw std::invalid_argument("features must be interpolated to full rate (stride " +
                                std::to_string(feats.stride) + ")");
  ad::Tape<Real> tape;
  const auto bound = bind_params(tape, params, false);
  const auto stages = forward(bound, cfg, features_to_tensor(tape, feats));
  std::vector<std::vector<Real>> out;
  for (const auto& s : stages) out.emplace_back(s.values().begin(), s.values().end());
  return out;
}

std::vector<Label> argmax_columns(std::span<const float> matrix, std::size_t classes) {
  if (classes == 0 || matrix.size() % classes != 0)
    throw std::invalid_argument("argmax_columns: matrix size is not a multiple of the class count");
  const std::size_t T = matrix.size() / classes;
  std::vector<Label> labels(T, 0);
  for (std::size_t t = 0; t < T; ++t) {
    float best = matrix[t];
    for (std::size_t c = 1; c < classes; ++c)
      if (matrix[c * T + t] > best) {
        best = matrix[c * T + t];
        labels[t] = static_cast<Label>(c);
      }
  }
  return labels;
}

Prediction predict(const ModelParams<float>& params, const ModelConfig& cfg,
                   const FeatureSequence& feats) {
  const auto logits = forward_logits(params, cfg, feats);
  const std::size_t C = cfg.num_classes, T = feats.frame_count;
  Prediction p;
  p.num_classes = C;
  p.probabilities = ad::detail::log_softmax_columns<float>(logits.back(), C, T);
  for (auto& v : p.probabilities) v = std::exp(v);
  p.labels = argmax_columns(p.probabilities, C);
  return p;
}

std::vector<char> encode_checkpoint(const ModelParams<float>& params) {
  io::ByteWriter w;
  w.put_bytes(std::string_view(kCheckpointMagic, 4));
  w.put_u32(kCheckpointVersion);
  w.put_u32(static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& t : params.tensors) {
    w.put_u32(static_cast<std::uint32_t>(t.name.size()));
    w.put_bytes(t.name);
    w.put_u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto dim : t.shape) w.put_u32(static_cast<std::uint32_t>(dim));
    w.put_f32s(t.values);
  }
  return w.bytes();
}

void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  if (r.remaining() < 4 || r.get_bytes(4) != std::string_view(kCheckpointMagic, 4))
    throw io::FormatError(path.string() + ": bad magic (expected PSCK)");
  const auto version = r.get_u32();
  if (version != kCheckpointVersion)
    throw io::FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  ModelParams<float> params;
  const auto count = r.get_u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor<float> t;
    t.name = r.get_bytes(r.get_u32());
    const auto rank = r.get_u32();
    if (rank > 8) throw io::FormatError(path.string() + ": tensor '" + t.name + "' has rank " + std::to_string(rank));
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.get_u32());
    t.values.resize(ad::numel(t.shape));
    r.get_f32s(t.values);
    params.tensors.push_back(std::move(t));
  }
  r.expect_end();
  return params;
}

void save_model_config(const ModelConfig& cfg, const std::filesystem::path& path) {
  io::write_text_file(path, cfg.to_json().dump(2) + "\n");
}

ModelConfig load_model_config(const std::filesystem::path& path) {
  try {
    return ModelConfig::from_json(json::parse(io::read_text_file(path)));
  } catch (const json::exception& e) {
    throw io::FormatError(path.string() + ": " + e.what());
  }
}

#define PSSEG_INSTANTIATE(Real)                                                                  \
  template struct ModelParams<Real>;                                                             \
  template ModelParams<Real> init_params<Real>(const ModelConfig&, std::uint64_t);               \
  template ModelParams<Real> zero_params<Real>(const ModelConfig&);                              \
  template BoundParams<Real> bind_params<Real>(ad::Tape<Real>&, const ModelParams<Real>&, bool); \
  template std::vector<ad::Tensor<Real>> forward<Real>(const BoundParams<Real>&,                 \
                                                       const ModelConfig&,                       \
                                                       const ad::Tensor<Real>&);                 \
  template ad::Tensor<Real> features_to_tensor<Real>(ad::Tape<Real>&, const FeatureSequence&);  \
  template std::vector<std::vector<Real>> forward_logits<Real>(                                  \
      const ModelParams<Real>&, const ModelConfig&, const FeatureSequence&);

PSSEG_INSTANTIATE(float)
PSSEG_INSTANTIATE(double)

#undef PSSEG_INSTANTIATE

}  // namespace psseg
