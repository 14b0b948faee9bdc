#include "psseg/feature_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace psseg {

using nlohmann::json;

namespace {

void check_finite(std::span<const float> data, std::size_t feat_dim, const std::string& what) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      std::ostringstream msg;
      msg << what << ": non-finite feature at (frame " << i / feat_dim << ", dim " << i % feat_dim
          << ")";
      throw std::invalid_argument(msg.str());
    }
  }
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

void FeatureSequence::validate() const {
  if (frame_count < 1) throw std::invalid_argument("feature sequence has no frames");
  if (feat_dim < 1) throw std::invalid_argument("feature dimension must be >= 1");
  if (stride < 1) throw std::invalid_argument("feature stride must be >= 1");
  if (data.size() != frame_count * feat_dim)
    throw std::invalid_argument("feature payload has " + std::to_string(data.size()) +
                                " entries, expected " + std::to_string(frame_count * feat_dim));
  check_finite(data, feat_dim, "feature sequence");
}

bool bit_equal(const FeatureSequence& a, const FeatureSequence& b) {
  return a.frame_count == b.frame_count && a.feat_dim == b.feat_dim && a.stride == b.stride &&
         a.source_tag == b.source_tag && a.data.size() == b.data.size() &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

void LabelSequence::validate() const {
  std::set<std::string> seen;
  for (const auto& name : vocabulary)
    if (!seen.insert(name).second)
      throw std::invalid_argument("duplicate phase name in vocabulary: " + name);
  const auto classes = static_cast<Label>(vocabulary.size());
  for (std::size_t t = 0; t < labels.size(); ++t)
    if (labels[t] < 0 || labels[t] >= classes)
      throw std::invalid_argument("label " + std::to_string(labels[t]) + " at frame " +
                                  std::to_string(t) + " outside [0, " + std::to_string(classes) +
                                  ")");
}

std::vector<char> encode_cache(const FeatureSequence& seq) {
  seq.validate();
  io::ByteWriter w;
  w.put_bytes(std::string_view(kCacheMagic, 4));
  w.put_u8(kCacheVersion);
  w.put_u32(static_cast<std::uint32_t>(seq.frame_count));
  w.put_u32(static_cast<std::uint32_t>(seq.feat_dim));
  w.put_u32(seq.stride);
  w.put_u32(static_cast<std::uint32_t>(seq.source_tag.size()));
  w.put_bytes(seq.source_tag);
  w.put_f32s(seq.data);
  return w.bytes();
}

void write_cache(const FeatureSequence& seq, const std::filesystem::path& path) {
  const auto bytes = encode_cache(seq);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

FeatureSequence decode_cache(std::vector<char> bytes, const std::string& what) {
  io::ByteReader r(std::move(bytes), what);
  if (r.remaining() < 4 || r.get_bytes(4) != std::string_view(kCacheMagic, 4))
    throw io::FormatError(what + ": bad magic (expected PSFC)");
  const auto version = r.get_u8();
  if (version != kCacheVersion)
    throw io::FormatError(what + ": unsupported cache version " + std::to_string(version));
  FeatureSequence seq;
  seq.frame_count = r.get_u32();
  seq.feat_dim = r.get_u32();
  seq.stride = r.get_u32();
  const auto tag_len = r.get_u32();
  seq.source_tag = r.get_bytes(tag_len);
  if (seq.frame_count < 1 || seq.feat_dim < 1 || seq.stride < 1)
    throw io::FormatError(what + ": header has zero frames, dims or stride");
  const std::size_t expected = seq.frame_count * seq.feat_dim * sizeof(float);
  if (r.remaining() != expected)
    throw io::FormatError(what + ": payload size mismatch (expected " + std::to_string(expected) +
                          " bytes, got " + std::to_string(r.remaining()) + ")");
  seq.data.resize(seq.frame_count * seq.feat_dim);
  r.get_f32s(seq.data);
  check_finite(seq.data, seq.feat_dim, what);
  return seq;
}

FeatureSequence read_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open feature cache " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_cache(std::move(bytes), path.string());
}

FeatureSequence interpolate_to_full_rate(const FeatureSequence& seq, std::size_t target_frames) {
  if (seq.stride == 0) throw std::invalid_argument("interpolation stride must be >= 1");
  if (target_frames < seq.frame_count)
    throw std::invalid_argument("target length " + std::to_string(target_frames) +
                                " is shorter than the " + std::to_string(seq.frame_count) +
                                " raw samples");
  if (seq.stride == 1 && target_frames == seq.frame_count) return seq;

  FeatureSequence out;
  out.frame_count = target_frames;
  out.feat_dim = seq.feat_dim;
  out.stride = 1;
  out.source_tag = seq.source_tag;
  out.data.resize(target_frames * seq.feat_dim);

  const std::size_t stride = seq.stride;
  const std::size_t samples = seq.frame_count;
  for (std::size_t t = 0; t < target_frames; ++t) {
    const std::size_t i = t / stride;
    auto dst = out.frame(t);
    if (i + 1 >= samples) {
      const auto src = seq.frame(std::min(i, samples - 1));
      std::copy(src.begin(), src.end(), dst.begin());
      continue;
    }
    const double a = static_cast<double>(i * stride);
    const double b = static_cast<double>((i + 1) * stride);
    const double wa = (b - static_cast<double>(t)) / static_cast<double>(stride);
    const double wb = (static_cast<double>(t) - a) / static_cast<double>(stride);
    const auto fa = seq.frame(i);
    const auto fb = seq.frame(i + 1);
    for (std::size_t j = 0; j < seq.feat_dim; ++j)
      dst[j] = static_cast<float>(wa * fa[j] + wb * fb[j]);
  }
  return out;
}

std::vector<ClipPlacement> clip_centers(std::size_t video_frames, const ClipSpec& spec) {
  if (video_frames < 1) throw std::invalid_argument("video must have at least one frame");
  if (spec.clip_len < 1 || spec.extraction_stride < 1)
    throw std::invalid_argument("clip length and stride must be >= 1");
  std::vector<ClipPlacement> plan;
  if (video_frames < spec.clip_len) {
    plan.push_back({0, std::min(spec.center_offset(), video_frames - 1),
                    spec.clip_len - video_frames});
    return plan;
  }
  for (std::size_t start = 0; start + spec.clip_len <= video_frames;
       start += spec.extraction_stride)
    plan.push_back({start, start + spec.center_offset(), 0});
  return plan;
}

std::optional<std::string> Reconciled::warning() const {
  if (!truncated()) return std::nullopt;
  return "length mismatch reconciled to " + std::to_string(labels.frame_count()) +
         " frames: dropped " + std::to_string(dropped_feature_frames) + " feature frames and " +
         std::to_string(dropped_label_frames) + " label frames";
}

Reconciled reconcile_lengths(const FeatureSequence& features, const LabelSequence& labels) {
  const std::size_t shared = std::min(features.frame_count, labels.frame_count());
  if (shared == 0) throw std::invalid_argument("cannot reconcile: shared length is 0");
  Reconciled out;
  out.features = features;
  out.labels = labels;
  out.dropped_feature_frames = features.frame_count - shared;
  out.dropped_label_frames = labels.frame_count() - shared;
  out.features.frame_count = shared;
  out.features.data.resize(shared * features.feat_dim);
  out.labels.labels.resize(shared);
  return out;
}

std::vector<Label> read_label_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open label file " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != "frame,label")
    throw io::FormatError(path.string() + ": expected header 'frame,label'");
  std::vector<std::pair<long, Label>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw io::FormatError(path.string() + ":" + std::to_string(line_no) + ": missing comma");
    try {
      std::size_t used = 0;
      const std::string frame_s = trim(line.substr(0, comma));
      const std::string label_s = trim(line.substr(comma + 1));
      const long frame = std::stol(frame_s, &used);
      if (used != frame_s.size()) throw std::invalid_argument("frame");
      const long label = std::stol(label_s, &used);
      if (used != label_s.size()) throw std::invalid_argument("label");
      rows.emplace_back(frame, static_cast<Label>(label));
    } catch (const std::logic_error&) {
      throw io::FormatError(path.string() + ":" + std::to_string(line_no) +
                            ": malformed row '" + line + "'");
    }
  }
  std::sort(rows.begin(), rows.end());
  std::vector<Label> labels;
  labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].first != static_cast<long>(i))
      throw io::FormatError(path.string() + ": frame indices must cover 0.." +
                            std::to_string(rows.size() - 1) + " exactly once");
    labels.push_back(rows[i].second);
  }
  return labels;
}

void write_label_csv(std::span<const Label> labels, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "frame,label\n";
  for (std::size_t t = 0; t < labels.size(); ++t) out << t << ',' << labels[t] << '\n';
  io::write_text_file(path, out.str());
}

std::vector<std::string> read_vocabulary(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(io::read_text_file(path));
  } catch (const json::parse_error& e) {
    throw io::FormatError(path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw io::FormatError(path.string() + ": vocabulary must be a JSON array");
  std::vector<std::string> vocab;
  for (const auto& item : j) {
    if (!item.is_string())
      throw io::FormatError(path.string() + ": vocabulary entries must be strings");
    vocab.push_back(item.get<std::string>());
  }
  return vocab;
}

void write_vocabulary(std::span<const std::string> vocabulary, const std::filesystem::path& path) {
  json j = json::array();
  for (const auto& name : vocabulary) j.push_back(name);
  io::write_text_file(path, j.dump(2) + "\n");
}

std::vector<Label> read_segments_json(const std::filesystem::path& path,
                                      std::span<const std::string> vocabulary) {
  json j;
  try {
    j = json::parse(io::read_text_file(path));
  } catch (const json::parse_error& e) {
    throw io::FormatError(path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw io::FormatError(path.string() + ": segments must be a JSON array");

  auto resolve = [&](const json& v) -> Label {
    if (v.is_number_integer()) return v.get<Label>();
    if (v.is_string()) {
      const auto name = v.get<std::string>();
      const auto it = std::find(vocabulary.begin(), vocabulary.end(), name);
      if (it == vocabulary.end())
        throw io::FormatError(path.string() + ": unknown phase name '" + name + "'");
      return static_cast<Label>(it - vocabulary.begin());
    }
    throw io::FormatError(path.string() + ": segment label must be an index or a name");
  };

  std::vector<Label> labels;
  for (const auto& seg : j) {
    Label label = 0;
    long start = 0;
    long end = 0;
    if (seg.is_object()) {
      label = resolve(seg.at("label"));
      start = seg.at("start").get<long>();
      end = seg.at("end").get<long>();
    } else if (seg.is_array() && seg.size() == 3) {
      label = resolve(seg[0]);
      start = seg[1].get<long>();
      end = seg[2].get<long>();
    } else {
      throw io::FormatError(path.string() + ": segment must be {label,start,end}");
    }
    if (start != static_cast<long>(labels.size()) || end < start)
      throw io::FormatError(path.string() + ": segments must tile the frames contiguously from 0");
    labels.insert(labels.end(), static_cast<std::size_t>(end - start + 1), label);
  }
  return labels;
}

LabelSequence load_labels(const std::filesystem::path& path, std::vector<std::string> vocabulary) {
  LabelSequence seq;
  seq.labels = path.extension() == ".json" ? read_segments_json(path, vocabulary)
                                           : read_label_csv(path);
  seq.vocabulary = std::move(vocabulary);
  seq.validate();
  return seq;
}

}  // namespace psseg
