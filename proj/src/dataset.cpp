#include "psseg/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace psseg {

using nlohmann::json;
namespace fs = std::filesystem;

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_text_file(path));
  } catch (const json::parse_error& e) {
    throw io::FormatError(path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.base_dir = path.parent_path();
  try {
    const auto& vocab = j.at("vocabulary");
    if (vocab.is_string())
      m.vocabulary = read_vocabulary(m.base_dir / vocab.get<std::string>());
    else
      m.vocabulary = vocab.get<std::vector<std::string>>();
    for (const auto& v : j.at("videos")) {
      m.entries.push_back({v.at("id").get<std::string>(), v.at("group").get<std::string>(),
                           v.at("features").get<std::string>(), v.at("labels").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw io::FormatError(path.string() + ": malformed manifest: " + e.what());
  }
  m.validate();
  return m;
}

std::string DatasetManifest::to_json_string() const {
  json j;
  j["vocabulary"] = vocabulary;
  j["videos"] = json::array();
  for (const auto& e : entries)
    j["videos"].push_back({{"id", e.video_id},
                           {"group", e.group},
                           {"features", e.features.generic_string()},
                           {"labels", e.labels.generic_string()}});
  return j.dump(2) + "\n";
}

void DatasetManifest::save(const fs::path& path) const { io::write_text_file(path, to_json_string()); }

std::string DatasetManifest::digest() const { return fnv1a_hex(to_json_string()); }

const ManifestEntry& DatasetManifest::find(const std::string& video_id) const {
  const auto it = std::find_if(entries.begin(), entries.end(),
                               [&](const ManifestEntry& e) { return e.video_id == video_id; });
  if (it == entries.end()) throw std::out_of_range("video '" + video_id + "' not in manifest");
  return *it;
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (e.video_id.empty()) throw std::invalid_argument("manifest entry with empty video id");
    if (!ids.insert(e.video_id).second)
      throw std::invalid_argument("duplicate video id in manifest: " + e.video_id);
  }
  LabelSequence probe{{}, vocabulary};
  probe.validate();
}

namespace {

fs::path resolve(const fs::path& p, const fs::path& base, const std::optional<fs::path>& override_dir) {
  if (override_dir) return *override_dir / p.filename();
  return p.is_absolute() ? p : base / p;
}

}  // namespace

VideoData load_video(const DatasetManifest& manifest, const ManifestEntry& entry,
                     const PathOverrides& overrides, std::vector<std::string>* warnings) {
  const auto feat_path = resolve(entry.features, manifest.base_dir, overrides.features_dir);
  const auto label_path = resolve(entry.labels, manifest.base_dir, overrides.labels_dir);
  auto features = read_cache(feat_path);
  auto labels = load_labels(label_path, manifest.vocabulary);
  if (features.stride > 1) {
    const std::size_t target =
        std::max(labels.frame_count(), features.frame_count);
    features = interpolate_to_full_rate(features, target);
  }
  auto rec = reconcile_lengths(features, labels);
  if (warnings) {
    if (auto w = rec.warning()) warnings->push_back(entry.video_id + ": " + *w);
  }
  return {entry.video_id, std::move(rec.features), std::move(rec.labels)};
}

DatasetManifest write_synthetic_dataset(const std::vector<SyntheticVideo>& videos,
                                        const fs::path& out_dir) {
  if (videos.empty()) throw std::invalid_argument("no videos to write");
  fs::create_directories(out_dir / "features");
  fs::create_directories(out_dir / "labels");
  DatasetManifest m;
  m.base_dir = out_dir;
  m.vocabulary = videos.front().labels.vocabulary;
  for (const auto& v : videos) {
    const fs::path feat = fs::path("features") / (v.id + ".psfc");
    const fs::path lab = fs::path("labels") / (v.id + ".csv");
    write_cache(v.features, out_dir / feat);
    write_label_csv(v.labels.labels, out_dir / lab);
    m.entries.push_back({v.id, v.group, feat, lab});
  }
  write_vocabulary(m.vocabulary, out_dir / "vocabulary.json");
  m.save(out_dir / "manifest.json");
  return m;
}

}  // namespace psseg
