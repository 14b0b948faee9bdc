// Per-frame feature cache ("PSFC"), phase label files, and the frame-rate
// transforms applied between encoder output and the temporal head.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psseg/binary_io.hpp"

namespace psseg {

using Label = std::int32_t;

inline constexpr char kCacheMagic[4] = {'P', 'S', 'F', 'C'};
inline constexpr std::uint8_t kCacheVersion = 1;

/// T x d embeddings stored frame-major. `stride` is the sampling stride of the
/// raw extraction; it becomes 1 once the sequence is interpolated to full rate.
struct FeatureSequence {
  std::size_t frame_count = 0;
  std::size_t feat_dim = 0;
  std::uint32_t stride = 1;
  std::string source_tag;
  std::vector<float> data;

  std::span<const float> frame(std::size_t t) const {
    return {data.data() + t * feat_dim, feat_dim};
  }
  std::span<float> frame(std::size_t t) { return {data.data() + t * feat_dim, feat_dim}; }

  float at(std::size_t t, std::size_t j) const { return data[t * feat_dim + j]; }

  // Throws std::invalid_argument on shape problems or non-finite entries.
  void validate() const;
};

// Byte-level equality of the payload plus header fields.
bool bit_equal(const FeatureSequence& a, const FeatureSequence& b);

struct LabelSequence {
  std::vector<Label> labels;
  std::vector<std::string> vocabulary;

  std::size_t frame_count() const { return labels.size(); }
  std::size_t num_classes() const { return vocabulary.size(); }

  void validate() const;
};

struct ClipSpec {
  std::size_t clip_len = 64;
  std::size_t extraction_stride = 4;

  std::size_t center_offset() const { return clip_len / 2; }
};

struct ClipPlacement {
  std::size_t clip_start = 0;
  std::size_t assigned_frame = 0;
  // Frames appended by replicating the last frame when the video is shorter
  // than one clip.
  std::size_t padded_frames = 0;

  bool operator==(const ClipPlacement&) const = default;
};

void write_cache(const FeatureSequence& seq, const std::filesystem::path& path);
std::vector<char> encode_cache(const FeatureSequence& seq);

FeatureSequence read_cache(const std::filesystem::path& path);
FeatureSequence decode_cache(std::vector<char> bytes, const std::string& what = "cache");

// Linear interpolation of samples taken at frames 0, stride, 2*stride, ...
// to every frame in [0, target_frames). Frames after the last sample hold it.
FeatureSequence interpolate_to_full_rate(const FeatureSequence& seq, std::size_t target_frames);

std::vector<ClipPlacement> clip_centers(std::size_t video_frames, const ClipSpec& spec);

struct Reconciled {
  FeatureSequence features;
  LabelSequence labels;
  std::size_t dropped_feature_frames = 0;
  std::size_t dropped_label_frames = 0;

  bool truncated() const { return dropped_feature_frames + dropped_label_frames > 0; }
  std::optional<std::string> warning() const;
};

Reconciled reconcile_lengths(const FeatureSequence& features, const LabelSequence& labels);

// Label files. CSV has the header `frame,label`; the vocabulary is a JSON array
// of phase names. A segments JSON is an array of {label, start, end} objects
// (end inclusive, label given as index or name).
std::vector<Label> read_label_csv(const std::filesystem::path& path);
void write_label_csv(std::span<const Label> labels, const std::filesystem::path& path);
std::vector<std::string> read_vocabulary(const std::filesystem::path& path);
void write_vocabulary(std::span<const std::string> vocabulary, const std::filesystem::path& path);
std::vector<Label> read_segments_json(const std::filesystem::path& path,
                                      std::span<const std::string> vocabulary);

// Dispatches on extension: .json is read as segments, anything else as CSV.
LabelSequence load_labels(const std::filesystem::path& path, std::vector<std::string> vocabulary);

}  // namespace psseg
