// Stratified K-fold assignment of videos, balanced by procedure-type group.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "psseg/dataset.hpp"

namespace psseg {

struct FoldSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

struct FoldSpec {
  std::uint64_t seed = 0;
  std::size_t num_folds = 0;
  std::vector<std::vector<std::string>> folds;

  // Held-out fold k as the test set, every other fold as training data.
  FoldSplit fold(std::size_t k) const;
  void validate() const;

  nlohmann::json to_json() const;
  static FoldSpec from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static FoldSpec load(const std::filesystem::path& path);
};

// Groups are visited in name order; inside a group the ids are sorted, shuffled
// with `seed`, and dealt round-robin. The dealing position carries over from
// one group to the next so that total fold sizes also differ by at most one.
// A warning is appended when a group has fewer videos than folds.
FoldSpec stratified_kfold(const DatasetManifest& manifest, std::size_t num_folds,
                          std::uint64_t seed, std::vector<std::string>* warnings = nullptr);

}  // namespace psseg
