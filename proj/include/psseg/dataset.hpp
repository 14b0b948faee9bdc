// Dataset manifest: which videos exist, their procedure-type group, and where
// their feature caches and label files live.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "psseg/feature_store.hpp"
#include "psseg/synthetic.hpp"

namespace psseg {

struct ManifestEntry {
  std::string video_id;
  std::string group;
  std::filesystem::path features;
  std::filesystem::path labels;
};

struct DatasetManifest {
  std::vector<std::string> vocabulary;
  std::vector<ManifestEntry> entries;
  // Relative entry paths resolve against this directory.
  std::filesystem::path base_dir;

  static DatasetManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::string to_json_string() const;
  // FNV-1a over the canonical JSON form, as 16 hex digits.
  std::string digest() const;

  const ManifestEntry& find(const std::string& video_id) const;
  void validate() const;
};

struct VideoData {
  std::string id;
  FeatureSequence features;
  LabelSequence labels;
};

struct PathOverrides {
  std::optional<std::filesystem::path> features_dir;
  std::optional<std::filesystem::path> labels_dir;
};

// Reads the cache and labels for one entry, interpolates strided caches to the
// label frame count and truncates both streams to their shared length.
// Truncation warnings are appended to `warnings` when provided.
VideoData load_video(const DatasetManifest& manifest, const ManifestEntry& entry,
                     const PathOverrides& overrides = {},
                     std::vector<std::string>* warnings = nullptr);

// Writes caches, label CSVs, the vocabulary and manifest.json under out_dir.
DatasetManifest write_synthetic_dataset(const std::vector<SyntheticVideo>& videos,
                                        const std::filesystem::path& out_dir);

std::string fnv1a_hex(std::string_view bytes);

}  // namespace psseg
