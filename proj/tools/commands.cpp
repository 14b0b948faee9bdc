#include "commands.hpp"

#include <algorithm>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "psseg/binary_io.hpp"
#include "psseg/dataset.hpp"
#include "psseg/metrics.hpp"
#include "psseg/mstcn.hpp"
#include "psseg/ribbon.hpp"
#include "psseg/splits.hpp"
#include "psseg/synthetic.hpp"
#include "psseg/training.hpp"

namespace psseg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
  json doc = json::object();
  fs::path base_dir = ".";

  fs::path path(const std::string& key) const {
    const fs::path p = doc.at(key).get<std::string>();
    return p.is_absolute() ? p : base_dir / p;
  }
  bool has(const std::string& key) const { return doc.contains(key); }
};

RunConfig load_config(const CommonFlags& flags) {
  RunConfig rc;
  if (!flags.config) return rc;
  if (!fs::exists(*flags.config)) throw std::runtime_error("config file not found: " + flags.config->string());
  try {
    rc.doc = json::parse(io::read_text_file(*flags.config));
  } catch (const json::parse_error& e) {
    throw io::FormatError("malformed config " + flags.config->string() + ": " + e.what());
  }
  if (!rc.doc.is_object()) throw io::FormatError("config " + flags.config->string() + " must be a JSON object");
  rc.base_dir = flags.config->parent_path();
  if (rc.base_dir.empty()) rc.base_dir = ".";
  return rc;
}

void write_resolved(const fs::path& dir, const std::string& command, json resolved) {
  fs::create_directories(dir);
  resolved["command"] = command;
  io::write_text_file(dir / ("resolved_" + command + ".json"), resolved.dump(2) + "\n");
}

json flags_json(const CommonFlags& f) {
  json j;
  if (f.config) j["config"] = f.config->string();
  if (f.seed) j["seed"] = *f.seed;
  if (f.features_dir) j["features_dir"] = f.features_dir->string();
  if (f.labels_dir) j["labels_dir"] = f.labels_dir->string();
  if (f.metrics_exclude) j["metrics_exclude"] = *f.metrics_exclude;
  j["out"] = f.out.string();
  return j;
}

fs::path manifest_path(const RunConfig& rc, const std::optional<fs::path>& flag) {
  if (flag) return *flag;
  if (rc.has("manifest")) return rc.path("manifest");
  throw std::runtime_error("no dataset manifest: pass --manifest or set \"manifest\" in the config");
}

fs::path splits_path(const RunConfig& rc, const CommonFlags& flags,
                     const std::optional<fs::path>& flag) {
  if (flag) return *flag;
  if (rc.has("splits")) return rc.path("splits");
  return flags.out / "folds.json";
}

std::uint64_t resolve_seed(const RunConfig& rc, const CommonFlags& flags) {
  if (flags.seed) return *flags.seed;
  return rc.doc.value("seed", std::uint64_t{0});
}

PathOverrides overrides(const CommonFlags& flags) { return {flags.features_dir, flags.labels_dir}; }

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw std::runtime_error(what + " not found: " + p.string());
}

std::vector<Label> parse_exclude(const RunConfig& rc, const CommonFlags& flags,
                                 const std::vector<std::string>& vocabulary) {
  std::vector<std::string> items;
  if (flags.metrics_exclude) {
    std::stringstream ss(*flags.metrics_exclude);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) items.push_back(item);
  } else if (rc.has("metrics_exclude")) {
    for (const auto& v : rc.doc.at("metrics_exclude"))
      items.push_back(v.is_string() ? v.get<std::string>() : std::to_string(v.get<int>()));
  }
  std::vector<Label> out;
  for (const auto& item : items) {
    const auto it = std::find(vocabulary.begin(), vocabulary.end(), item);
    if (it != vocabulary.end()) {
      out.push_back(static_cast<Label>(it - vocabulary.begin()));
      continue;
    }
    std::size_t used = 0;
    int idx = -1;
    try {
      idx = std::stoi(item, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used != item.size() || idx < 0 || static_cast<std::size_t>(idx) >= vocabulary.size())
      throw std::invalid_argument("--metrics-exclude: unknown class '" + item + "'");
    out.push_back(idx);
  }
  return out;
}

fs::path fold_dir(const CommonFlags& flags, std::size_t fold) {
  return flags.out / ("fold_" + std::to_string(fold));
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

}  // namespace

int cmd_synth(const CommonFlags& flags) {
  const auto rc = load_config(flags);
  const json& j = rc.doc.contains("synthetic") ? rc.doc.at("synthetic") : rc.doc;
  SyntheticOptions o;
  o.num_videos = j.value("num_videos", o.num_videos);
  o.min_frames = j.value("min_frames", o.min_frames);
  o.max_frames = j.value("max_frames", o.max_frames);
  o.feat_dim = j.value("feat_dim", o.feat_dim);
  o.num_classes = j.value("num_classes", o.num_classes);
  o.min_segment = j.value("min_segment", o.min_segment);
  o.max_extra_segment = j.value("max_extra_segment", o.max_extra_segment);
  o.separation = j.value("separation", o.separation);
  o.noise = j.value("noise", o.noise);
  o.groups = j.value("groups", o.groups);
  o.seed = flags.seed ? *flags.seed : j.value("seed", o.seed);

  const auto manifest = write_synthetic_dataset(generate_synthetic(o), flags.out);
  json resolved = flags_json(flags);
  resolved["synthetic"] = {{"num_videos", o.num_videos},   {"min_frames", o.min_frames},
                           {"max_frames", o.max_frames},   {"feat_dim", o.feat_dim},
                           {"num_classes", o.num_classes}, {"min_segment", o.min_segment},
                           {"max_extra_segment", o.max_extra_segment},
                           {"separation", o.separation},   {"noise", o.noise},
                           {"groups", o.groups},           {"seed", o.seed}};
  write_resolved(flags.out, "synth", resolved);
  std::cout << "wrote " << manifest.entries.size() << " videos to " << flags.out.string() << '\n';
  return 0;
}

int cmd_split(const CommonFlags& flags, const SplitFlags& split) {
  const auto rc = load_config(flags);
  const auto mpath = manifest_path(rc, split.manifest);
  require_file(mpath, "dataset manifest");
  const auto manifest = DatasetManifest::load(mpath);
  const std::size_t k = rc.doc.value("folds", std::size_t{5});
  const auto seed = resolve_seed(rc, flags);
  std::vector<std::string> warnings;
  const auto spec = stratified_kfold(manifest, k, seed, &warnings);
  print_warnings(warnings);

  const fs::path dir = flags.out.has_parent_path() ? flags.out.parent_path() : fs::path(".");
  fs::create_directories(dir);
  spec.save(flags.out);
  json resolved = flags_json(flags);
  resolved["manifest"] = mpath.string();
  resolved["folds"] = k;
  resolved["seed"] = seed;
  write_resolved(dir, "split", resolved);
  std::cout << "wrote " << k << "-fold split to " << flags.out.string() << '\n';
  return 0;
}

int cmd_train(const CommonFlags& flags, const TrainFlags& train) {
  const auto rc = load_config(flags);
  const auto mpath = manifest_path(rc, std::nullopt);
  require_file(mpath, "dataset manifest");
  const auto manifest = DatasetManifest::load(mpath);
  const auto spath = splits_path(rc, flags, train.splits);
  require_file(spath, "fold spec");
  const auto spec = FoldSpec::load(spath);
  const auto split = spec.fold(train.fold);

  std::vector<std::string> warnings;
  std::vector<VideoData> train_videos, test_videos;
  for (const auto& id : split.train)
    train_videos.push_back(load_video(manifest, manifest.find(id), overrides(flags), &warnings));
  for (const auto& id : split.test)
    test_videos.push_back(load_video(manifest, manifest.find(id), overrides(flags), &warnings));
  print_warnings(warnings);
  if (train_videos.empty()) throw std::runtime_error("fold " + std::to_string(train.fold) + " has no training videos");

  json model_j = rc.doc.value("model", json::object());
  if (!model_j.contains("num_classes")) model_j["num_classes"] = manifest.vocabulary.size();
  if (!model_j.contains("feat_dim")) model_j["feat_dim"] = train_videos.front().features.feat_dim;
  const auto cfg = ModelConfig::from_json(model_j);

  json train_j = rc.doc.value("train", json::object());
  train_j["smoothing_weight"] = cfg.smoothing_weight;
  train_j["seed"] = resolve_seed(rc, flags);
  if (train.epochs) train_j["epochs"] = *train.epochs;
  const auto tcfg = TrainConfig::from_json(train_j);

  auto result = train_fold(train_videos, cfg, tcfg, manifest.digest());
  const auto dir = fold_dir(flags, train.fold);
  fs::create_directories(dir);
  save_checkpoint(result.params, dir / "checkpoint.psck");
  save_model_config(cfg, dir / "model_config.json");
  const auto dumps = dump_predictions(result.params, cfg, test_videos, dir / "predictions");

  auto& m = result.manifest;
  m.warnings.insert(m.warnings.end(), warnings.begin(), warnings.end());
  m.checkpoint_path = "checkpoint.psck";
  for (const auto& p : dumps) m.prediction_paths.push_back((fs::path("predictions") / p.filename()).generic_string());
  json mj = m.to_json();
  mj["fold"] = train.fold;
  mj["test_videos"] = split.test;
  mj["splits"] = spath.string();
  io::write_text_file(dir / "run_manifest.json", mj.dump(2) + "\n");

  json resolved = flags_json(flags);
  resolved["fold"] = train.fold;
  resolved["manifest"] = mpath.string();
  resolved["splits"] = spath.string();
  resolved["model"] = cfg.to_json();
  resolved["train"] = tcfg.to_json();
  write_resolved(dir, "train", resolved);
  std::cout << "fold " << train.fold << ": trained on " << train_videos.size() << " videos, final loss "
            << m.epoch_losses.back() << ", " << dumps.size() << " prediction dumps\n";
  return 0;
}

int cmd_eval(const CommonFlags& flags, const EvalFlags& eval) {
  const auto rc = load_config(flags);
  const auto mpath = manifest_path(rc, std::nullopt);
  require_file(mpath, "dataset manifest");
  const auto manifest = DatasetManifest::load(mpath);
  const auto spath = splits_path(rc, flags, eval.splits);
  require_file(spath, "fold spec");
  const auto spec = FoldSpec::load(spath);
  const auto split = spec.fold(eval.fold);
  const auto dir = fold_dir(flags, eval.fold);
  const fs::path pred_dir = eval.predictions ? *eval.predictions : dir / "predictions";
  const std::size_t C = manifest.vocabulary.size();
  const auto exclude = parse_exclude(rc, flags, manifest.vocabulary);

  std::vector<std::string> warnings;
  std::vector<metrics::VideoEval> videos;
  for (const auto& id : split.test) {
    const auto video = load_video(manifest, manifest.find(id), overrides(flags), &warnings);
    const auto ppath = pred_dir / (id + ".pspd");
    require_file(ppath, "prediction dump");
    auto pred = read_prediction(ppath);
    if (pred.labels.size() != video.labels.frame_count())
      throw std::runtime_error("video " + id + ": prediction length " +
                               std::to_string(pred.labels.size()) + " != label length " +
                               std::to_string(video.labels.frame_count()));
    if (pred.num_classes != C)
      throw std::runtime_error("video " + id + ": prediction has " + std::to_string(pred.num_classes) +
                               " classes, vocabulary has " + std::to_string(C));
    videos.push_back({id, video.labels.labels, std::move(pred.labels), std::move(pred.probabilities)});
  }
  print_warnings(warnings);
  const auto report = metrics::aggregate(videos, C, exclude, static_cast<int>(eval.fold));
  fs::create_directories(dir);
  io::write_text_file(dir / "fold_report.json", report.to_json().dump(2) + "\n");
  json resolved = flags_json(flags);
  resolved["fold"] = eval.fold;
  resolved["predictions"] = pred_dir.string();
  resolved["metrics_exclude"] = exclude;
  write_resolved(dir, "eval", resolved);
  std::cout << "fold " << eval.fold << ": accuracy " << report.values[metrics::kAccuracy] << ", edit "
            << report.values[metrics::kEdit] << '\n';
  return 0;
}

int cmd_report(const CommonFlags& flags, const ReportFlags& report) {
  std::vector<fs::path> paths = report.fold_reports;
  if (paths.empty()) {
    if (fs::is_directory(flags.out))
      for (const auto& entry : fs::directory_iterator(flags.out))
        if (entry.is_directory() && entry.path().filename().string().rfind("fold_", 0) == 0 &&
            fs::exists(entry.path() / "fold_report.json"))
          paths.push_back(entry.path() / "fold_report.json");
    std::sort(paths.begin(), paths.end());
  }
  if (paths.empty()) throw std::runtime_error("no fold reports given or found under " + flags.out.string());
  std::vector<metrics::FoldReport> folds;
  for (const auto& p : paths) {
    require_file(p, "fold report");
    try {
      folds.push_back(metrics::FoldReport::from_json(json::parse(io::read_text_file(p))));
    } catch (const json::exception& e) {
      throw io::FormatError("malformed fold report " + p.string() + ": " + e.what());
    }
  }
  const auto study = metrics::summarize(folds);
  fs::create_directories(flags.out);
  json sj = study.to_json();
  sj["fold_reports"] = json::array();
  for (const auto& p : paths) sj["fold_reports"].push_back(p.string());
  io::write_text_file(flags.out / "study_report.json", sj.dump(2) + "\n");
  const auto table = study.to_table(report.row_name);
  io::write_text_file(flags.out / "study_report.txt", table);
  json resolved = flags_json(flags);
  resolved["fold_reports"] = sj["fold_reports"];
  write_resolved(flags.out, "report", resolved);
  std::cout << table;
  return 0;
}

int cmd_ribbon(const CommonFlags& flags, const RibbonFlags& ribbon) {
  const auto rc = load_config(flags);
  std::vector<std::string> vocabulary;
  if (ribbon.vocabulary) {
    vocabulary = read_vocabulary(*ribbon.vocabulary);
  } else if (rc.has("manifest")) {
    vocabulary = DatasetManifest::load(rc.path("manifest")).vocabulary;
  } else {
    throw std::runtime_error("ribbon needs --vocabulary or a config with a manifest");
  }
  require_file(ribbon.gt, "ground-truth labels");
  std::vector<RibbonRow> rows;
  rows.push_back({"ground truth", load_labels(ribbon.gt, vocabulary).labels});
  for (const auto& spec : ribbon.predictions) {
    const auto eq = spec.find('=');
    const std::string name = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
    const fs::path path = eq == std::string::npos ? fs::path(spec) : fs::path(spec.substr(eq + 1));
    require_file(path, "prediction");
    rows.push_back({name, path.extension() == ".pspd" ? read_prediction(path).labels
                                                      : load_labels(path, vocabulary).labels});
  }
  RibbonOptions opts;
  opts.pixels_per_frame = ribbon.pixels_per_frame;
  const auto svg = render_ribbon_svg(rows, vocabulary, opts);
  if (flags.out.has_parent_path()) fs::create_directories(flags.out.parent_path());
  io::write_text_file(flags.out, svg);
  std::cout << "wrote " << rows.size() << " ribbon rows to " << flags.out.string() << '\n';
  return 0;
}

}  // namespace psseg::cli
