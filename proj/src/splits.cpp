#include "psseg/splits.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

namespace psseg {

using nlohmann::json;

FoldSplit FoldSpec::fold(std::size_t k) const {
  if (k >= folds.size())
    throw std::out_of_range("fold index " + std::to_string(k) + " out of range [0, " +
                            std::to_string(folds.size()) + ")");
  FoldSplit split;
  split.test = folds[k];
  for (std::size_t j = 0; j < folds.size(); ++j)
    if (j != k) split.train.insert(split.train.end(), folds[j].begin(), folds[j].end());
  return split;
}

void FoldSpec::validate() const {
  if (num_folds < 2) throw std::invalid_argument("fold spec: need at least 2 folds");
  if (folds.size() != num_folds)
    throw std::invalid_argument("fold spec: K=" + std::to_string(num_folds) + " but " +
                                std::to_string(folds.size()) + " fold lists");
  std::set<std::string> seen;
  for (const auto& f : folds)
    for (const auto& id : f)
      if (!seen.insert(id).second)
        throw std::invalid_argument("fold spec: video " + id + " appears in more than one fold");
}

json FoldSpec::to_json() const { return {{"seed", seed}, {"K", num_folds}, {"folds", folds}}; }

FoldSpec FoldSpec::from_json(const json& j) {
  FoldSpec s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.num_folds = j.at("K").get<std::size_t>();
  s.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
  s.validate();
  return s;
}

void FoldSpec::save(const std::filesystem::path& path) const {
  io::write_text_file(path, to_json().dump(2) + "\n");
}

FoldSpec FoldSpec::load(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(io::read_text_file(path)));
  } catch (const json::exception& e) {
    throw io::FormatError(path.string() + ": malformed fold spec: " + e.what());
  }
}

FoldSpec stratified_kfold(const DatasetManifest& manifest, std::size_t num_folds,
                          std::uint64_t seed, std::vector<std::string>* warnings) {
  if (num_folds < 2) throw std::invalid_argument("stratified_kfold: K must be >= 2");
  if (manifest.entries.empty()) throw std::invalid_argument("stratified_kfold: empty manifest");
  if (manifest.entries.size() < num_folds)
    throw std::invalid_argument("stratified_kfold: " + std::to_string(manifest.entries.size()) +
                                " videos cannot fill " + std::to_string(num_folds) + " folds");
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& e : manifest.entries) groups[e.group].push_back(e.video_id);

  FoldSpec spec;
  spec.seed = seed;
  spec.num_folds = num_folds;
  spec.folds.resize(num_folds);
  std::mt19937_64 rng(seed);
  std::size_t next = 0;
  for (auto& [group, ids] : groups) {
    if (ids.size() < num_folds && warnings)
      warnings->push_back("group " + group + " has " + std::to_string(ids.size()) +
                          " videos for " + std::to_string(num_folds) +
                          " folds; some folds get none");
    std::sort(ids.begin(), ids.end());
    std::shuffle(ids.begin(), ids.end(), rng);
    for (const auto& id : ids) {
      spec.folds[next].push_back(id);
      next = (next + 1) % num_folds;
    }
  }
  spec.validate();
  return spec;
}

}  // namespace psseg
