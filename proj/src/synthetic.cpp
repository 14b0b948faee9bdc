#include "psseg/synthetic.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <iomanip>
#include <stdexcept>

namespace psseg {

std::vector<std::vector<double>> synthetic_class_means(const SyntheticOptions& options) {
  const std::size_t d = options.feat_dim;
  const double axis = options.separation / std::sqrt(2.0);
  std::vector<std::vector<double>> means(options.num_classes, std::vector<double>(d, 0.0));
  for (std::size_t c = 0; c < options.num_classes; ++c) {
    // One-hot axes while they last, then shifted copies along dim 0.
    means[c][c % d] += axis;
    means[c][0] += options.separation * static_cast<double>(c / d);
  }
  return means;
}

std::vector<SyntheticVideo> generate_synthetic(const SyntheticOptions& o) {
  if (o.num_classes < 2) throw std::invalid_argument("synthetic data needs at least 2 classes");
  if (o.feat_dim < 1) throw std::invalid_argument("synthetic feature dimension must be >= 1");
  if (o.num_videos < 1) throw std::invalid_argument("synthetic data needs at least 1 video");
  if (o.min_frames < 1 || o.max_frames < o.min_frames)
    throw std::invalid_argument("degenerate frame range [" + std::to_string(o.min_frames) + ", " +
                                std::to_string(o.max_frames) + "]");
  if (o.min_segment < 1) throw std::invalid_argument("minimum segment duration must be >= 1");
  if (o.noise < 0.0) throw std::invalid_argument("noise must be >= 0");
  if (o.groups.empty()) throw std::invalid_argument("at least one group prefix is required");

  const auto means = synthetic_class_means(o);
  std::vector<std::string> vocabulary;
  for (std::size_t c = 0; c < o.num_classes; ++c) vocabulary.push_back("phase_" + std::to_string(c));

  std::mt19937_64 rng(o.seed);
  std::vector<SyntheticVideo> videos;
  for (std::size_t v = 0; v < o.num_videos; ++v) {
    SyntheticVideo video;
    video.group = o.groups[v % o.groups.size()];
    std::ostringstream id;
    id << video.group << '_' << std::setw(3) << std::setfill('0') << v;
    video.id = id.str();

    const std::size_t frames =
        std::uniform_int_distribution<std::size_t>(o.min_frames, o.max_frames)(rng);
    std::uniform_int_distribution<std::size_t> extra(0, o.max_extra_segment);
    std::uniform_int_distribution<std::size_t> first_class(0, o.num_classes - 1);
    std::uniform_int_distribution<std::size_t> next_offset(1, o.num_classes - 1);

    auto& labels = video.labels.labels;
    labels.reserve(frames);
    std::size_t cls = first_class(rng);
    while (labels.size() < frames) {
      const std::size_t run = std::min(o.min_segment + extra(rng), frames - labels.size());
      labels.insert(labels.end(), run, static_cast<Label>(cls));
      cls = (cls + next_offset(rng)) % o.num_classes;
    }
    video.labels.vocabulary = vocabulary;

    auto& f = video.features;
    f.frame_count = frames;
    f.feat_dim = o.feat_dim;
    f.stride = 1;
    f.source_tag = "synthetic";
    f.data.resize(frames * o.feat_dim);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t t = 0; t < frames; ++t) {
      const auto& mu = means[static_cast<std::size_t>(labels[t])];
      for (std::size_t j = 0; j < o.feat_dim; ++j)
        f.data[t * o.feat_dim + j] = static_cast<float>(mu[j] + o.noise * gauss(rng));
    }
    videos.push_back(std::move(video));
  }
  return videos;
}

}  // namespace psseg
