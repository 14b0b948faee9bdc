// Seeded synthetic phase-segmentation data for desk-scale experiments.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psseg/feature_store.hpp"

namespace psseg {

struct SyntheticOptions {
  std::size_t num_videos = 10;
  std::size_t min_frames = 100;
  std::size_t max_frames = 200;
  std::size_t feat_dim = 16;
  std::size_t num_classes = 4;
  std::size_t min_segment = 20;
  // Each segment lasts min_segment + U{0, max_extra_segment} frames.
  std::size_t max_extra_segment = 40;
  double separation = 10.0;
  double noise = 1.0;
  std::uint64_t seed = 0;
  std::vector<std::string> groups = {"BL", "BN", "SD"};
};

struct SyntheticVideo {
  std::string id;
  std::string group;
  FeatureSequence features;
  LabelSequence labels;
};

// Phases follow a Markov chain that always leaves the current class, with each
// run lasting at least min_segment frames (the final run may be cut short).
// Features are drawn from N(mean_c, noise^2 I); distinct class means are at
// least separation / sqrt(2) apart.
std::vector<SyntheticVideo> generate_synthetic(const SyntheticOptions& options);

// Class means used by generate_synthetic, row c is the mean of class c.
std::vector<std::vector<double>> synthetic_class_means(const SyntheticOptions& options);

}  // namespace psseg
