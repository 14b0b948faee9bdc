#include "psseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace psseg::metrics {

using nlohmann::json;

namespace {

void require_same_length(std::span<const Label> pred, std::span<const Label> gt, const char* what) {
  if (pred.size() != gt.size())
    throw std::invalid_argument(std::string(what) + ": prediction has " +
                                std::to_string(pred.size()) + " frames, ground truth has " +
                                std::to_string(gt.size()));
}

bool is_excluded(Label c, std::span<const Label> exclude) {
  return std::find(exclude.begin(), exclude.end(), c) != exclude.end();
}

void check_label(Label l, std::size_t num_classes, const char* what) {
  if (l < 0 || static_cast<std::size_t>(l) >= num_classes)
    throw std::invalid_argument(std::string(what) + ": label " + std::to_string(l) +
                                " outside [0, " + std::to_string(num_classes) + ")");
}

std::vector<Segment> kept_segments(std::span<const Label> labels, std::span<const Label> exclude) {
  auto segs = to_segments(labels);
  std::erase_if(segs, [&](const Segment& s) { return is_excluded(s.label, exclude); });
  return segs;
}

double frame_iou(const Segment& a, const Segment& b) {
  const std::size_t lo = std::max(a.start, b.start);
  const std::size_t hi = std::min(a.end, b.end);
  const double inter = hi >= lo ? static_cast<double>(hi - lo + 1) : 0.0;
  const double uni = static_cast<double>(a.length() + b.length()) - inter;
  return inter / uni;
}

}  // namespace

std::vector<Segment> to_segments(std::span<const Label> labels) {
  if (labels.empty()) throw std::invalid_argument("to_segments: empty label sequence");
  std::vector<Segment> segs;
  std::size_t start = 0;
  for (std::size_t t = 1; t <= labels.size(); ++t) {
    if (t == labels.size() || labels[t] != labels[start]) {
      segs.push_back({labels[start], start, t - 1});
      start = t;
    }
  }
  return segs;
}

std::vector<Label> expand(std::span<const Segment> segments) {
  std::vector<Label> out;
  for (const auto& s : segments) out.insert(out.end(), s.length(), s.label);
  return out;
}

double accuracy(std::span<const Label> pred, std::span<const Label> gt,
                std::span<const Label> exclude) {
  require_same_length(pred, gt, "accuracy");
  std::size_t correct = 0, total = 0;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (is_excluded(gt[t], exclude)) continue;
    ++total;
    correct += pred[t] == gt[t];
  }
  if (total == 0) throw std::invalid_argument("accuracy: no frames left to score");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

double macro_f1(std::span<const Label> pred, std::span<const Label> gt, std::size_t num_classes,
                std::span<const Label> exclude) {
  require_same_length(pred, gt, "macro_f1");
  std::vector<std::size_t> tp(num_classes), fp(num_classes), fn(num_classes);
  std::vector<bool> present(num_classes, false);
  for (std::size_t t = 0; t < gt.size(); ++t) {
    check_label(gt[t], num_classes, "macro_f1");
    check_label(pred[t], num_classes, "macro_f1");
    if (is_excluded(gt[t], exclude)) continue;
    const auto g = static_cast<std::size_t>(gt[t]);
    const auto p = static_cast<std::size_t>(pred[t]);
    present[g] = true;
    if (p == g) {
      ++tp[g];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  double sum = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (!present[c] || is_excluded(static_cast<Label>(c), exclude)) continue;
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    sum += denom > 0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
    ++classes;
  }
  if (classes == 0) throw std::invalid_argument("macro_f1: no ground-truth classes to score");
  return 100.0 * sum / static_cast<double>(classes);
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> positives) {
  if (scores.size() != positives.size())
    throw std::invalid_argument("average_precision: scores and labels differ in length");
  const std::size_t total_pos = static_cast<std::size_t>(std::count(positives.begin(), positives.end(), 1));
  if (total_pos == 0) throw std::invalid_argument("average_precision: no positive samples");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      ++seen;
      tp += positives[order[i]] != 0;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

double pr_auc(std::span<const float> probabilities, std::span<const Label> gt,
              std::size_t num_classes, std::span<const Label> exclude) {
  const std::size_t T = gt.size();
  if (probabilities.size() != num_classes * T)
    throw std::invalid_argument("pr_auc: probability matrix has " +
                                std::to_string(probabilities.size()) + " entries, expected " +
                                std::to_string(num_classes) + " x " + std::to_string(T));
  std::vector<std::size_t> frames;
  for (std::size_t t = 0; t < T; ++t) {
    check_label(gt[t], num_classes, "pr_auc");
    if (!is_excluded(gt[t], exclude)) frames.push_back(t);
  }
  double sum = 0.0;
  std::size_t eligible = 0;
  std::vector<double> scores(frames.size());
  std::vector<std::uint8_t> positives(frames.size());
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (is_excluded(static_cast<Label>(c), exclude)) continue;
    bool any = false;
    for (std::size_t i = 0; i < frames.size(); ++i) {
      scores[i] = probabilities[c * T + frames[i]];
      positives[i] = gt[frames[i]] == static_cast<Label>(c);
      any = any || positives[i];
    }
    if (!any) continue;
    sum += average_precision(scores, positives);
    ++eligible;
  }
  if (eligible == 0) throw std::invalid_argument("pr_auc: no class has a positive frame");
  return 100.0 * sum / static_cast<double>(eligible);
}

std::size_t levenshtein(std::span<const Label> a, std::span<const Label> b) {
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

double edit_score(std::span<const Label> pred, std::span<const Label> gt,
                  std::span<const Label> exclude) {
  std::vector<Label> p, g;
  for (const auto& s : kept_segments(pred, exclude)) p.push_back(s.label);
  for (const auto& s : kept_segments(gt, exclude)) g.push_back(s.label);
  const std::size_t longest = std::max(p.size(), g.size());
  if (longest == 0) return 100.0;
  const double score =
      100.0 * (1.0 - static_cast<double>(levenshtein(p, g)) / static_cast<double>(longest));
  return std::clamp(score, 0.0, 100.0);
}

double segmental_f1(std::span<const Label> pred, std::span<const Label> gt, double tau,
                    std::span<const Label> exclude) {
  require_same_length(pred, gt, "segmental_f1");
  const auto p = kept_segments(pred, exclude);
  const auto g = kept_segments(gt, exclude);
  if (p.empty() && g.empty()) return 100.0;
  std::vector<bool> matched(g.size(), false);
  std::size_t tp = 0, fp = 0;
  for (const auto& ps : p) {
    double best = -1.0;
    std::size_t best_idx = g.size();
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (g[j].label != ps.label) continue;
      const double iou = frame_iou(ps, g[j]);
      if (iou > best) {
        best = iou;
        best_idx = j;
      }
    }
    if (best_idx < g.size() && best >= tau && !matched[best_idx]) {
      matched[best_idx] = true;
      ++tp;
    } else {
      ++fp;
    }
  }
  const std::size_t fn = g.size() - tp;
  return 100.0 * 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

double mean_iou(std::span<const Label> pred, std::span<const Label> gt, std::size_t num_classes,
                std::span<const Label> exclude) {
  require_same_length(pred, gt, "mean_iou");
  std::vector<std::size_t> inter(num_classes), uni(num_classes);
  for (std::size_t t = 0; t < gt.size(); ++t) {
    check_label(gt[t], num_classes, "mean_iou");
    check_label(pred[t], num_classes, "mean_iou");
    if (is_excluded(gt[t], exclude)) continue;
    const auto g = static_cast<std::size_t>(gt[t]);
    const auto p = static_cast<std::size_t>(pred[t]);
    ++uni[g];
    if (p == g)
      ++inter[g];
    else
      ++uni[p];
  }
  double sum = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (uni[c] == 0 || is_excluded(static_cast<Label>(c), exclude)) continue;
    sum += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    ++classes;
  }
  if (classes == 0) throw std::invalid_argument("mean_iou: no classes to score");
  return 100.0 * sum / static_cast<double>(classes);
}

const std::array<std::string, kNumMetrics>& metric_titles() {
  static const std::array<std::string, kNumMetrics> titles = {
      "Accuracy", "F1 (macro)", "Edit", "PR-AUC", "F1@10", "F1@25", "F1@50", "mIoU"};
  return titles;
}

const std::array<std::string, kNumMetrics>& metric_keys() {
  static const std::array<std::string, kNumMetrics> keys = {
      "accuracy", "macro_f1", "edit", "pr_auc", "f1_10", "f1_25", "f1_50", "miou"};
  return keys;
}

VideoMetrics evaluate_video(const VideoEval& v, std::size_t num_classes,
                            std::span<const Label> exclude) {
  require_same_length(v.pred, v.gt, ("video " + v.video_id).c_str());
  VideoMetrics m;
  m.video_id = v.video_id;
  m.frames = v.gt.size();
  m.accuracy = accuracy(v.pred, v.gt, exclude);
  m.edit = edit_score(v.pred, v.gt, exclude);
  m.f1_10 = segmental_f1(v.pred, v.gt, 0.10, exclude);
  m.f1_25 = segmental_f1(v.pred, v.gt, 0.25, exclude);
  m.f1_50 = segmental_f1(v.pred, v.gt, 0.50, exclude);
  m.miou = mean_iou(v.pred, v.gt, num_classes, exclude);
  return m;
}

FoldReport aggregate(std::span<const VideoEval> videos, std::size_t num_classes,
                     std::span<const Label> exclude, int fold) {
  if (videos.empty()) throw std::invalid_argument("aggregate: fold has no videos");
  FoldReport r;
  r.fold = fold;
  r.num_classes = num_classes;
  r.excluded.assign(exclude.begin(), exclude.end());

  std::vector<Label> all_pred, all_gt;
  std::vector<std::vector<float>> class_scores(num_classes);
  for (const auto& v : videos) {
    const std::size_t T = v.gt.size();
    if (v.pred.size() != T)
      throw std::invalid_argument("video " + v.video_id + ": prediction length " +
                                  std::to_string(v.pred.size()) + " != label length " +
                                  std::to_string(T));
    if (v.probabilities.size() != num_classes * T)
      throw std::invalid_argument("video " + v.video_id + ": probability matrix is not " +
                                  std::to_string(num_classes) + " x " + std::to_string(T));
    all_pred.insert(all_pred.end(), v.pred.begin(), v.pred.end());
    all_gt.insert(all_gt.end(), v.gt.begin(), v.gt.end());
    for (std::size_t c = 0; c < num_classes; ++c)
      class_scores[c].insert(class_scores[c].end(), v.probabilities.begin() + c * T,
                             v.probabilities.begin() + (c + 1) * T);
    r.videos.push_back(evaluate_video(v, num_classes, exclude));
  }
  std::vector<float> pooled;
  pooled.reserve(num_classes * all_gt.size());
  for (const auto& s : class_scores) pooled.insert(pooled.end(), s.begin(), s.end());

  r.frames = all_gt.size();
  r.values[kAccuracy] = accuracy(all_pred, all_gt, exclude);
  r.values[kMacroF1] = macro_f1(all_pred, all_gt, num_classes, exclude);
  r.values[kPrAuc] = pr_auc(pooled, all_gt, num_classes, exclude);
  const double n = static_cast<double>(r.videos.size());
  for (const auto& m : r.videos) {
    r.values[kEdit] += m.edit / n;
    r.values[kF1At10] += m.f1_10 / n;
    r.values[kF1At25] += m.f1_25 / n;
    r.values[kF1At50] += m.f1_50 / n;
    r.values[kMIoU] += m.miou / n;
  }
  return r;
}

StudyReport summarize(std::span<const FoldReport> folds) {
  if (folds.empty()) throw std::invalid_argument("summarize: no fold reports");
  StudyReport s;
  s.folds = folds.size();
  const double n = static_cast<double>(folds.size());
  for (std::size_t k = 0; k < kNumMetrics; ++k) {
    // Shifted by the first fold so identical folds give exactly zero spread.
    const double ref = folds.front().values[k];
    double sum = 0.0, sq = 0.0;
    for (const auto& f : folds) {
      const double d = f.values[k] - ref;
      sum += d;
      sq += d * d;
    }
    const double shift = sum / n;
    s.mean[k] = ref + shift;
    s.stddev[k] = std::sqrt(std::max(0.0, sq / n - shift * shift));
  }
  return s;
}

json FoldReport::to_json() const {
  json j;
  j["fold"] = fold;
  j["num_classes"] = num_classes;
  j["frames"] = frames;
  j["excluded_classes"] = excluded;
  j["pooling"] = {{"frame_metrics", "pooled over all frames of the fold"},
                  {"segment_metrics", "mean over videos"}};
  for (std::size_t k = 0; k < kNumMetrics; ++k) j["metrics"][metric_keys()[k]] = values[k];
  j["videos"] = json::array();
  for (const auto& v : videos)
    j["videos"].push_back({{"id", v.video_id},
                           {"frames", v.frames},
                           {"accuracy", v.accuracy},
                           {"edit", v.edit},
                           {"f1_10", v.f1_10},
                           {"f1_25", v.f1_25},
                           {"f1_50", v.f1_50},
                           {"miou", v.miou}});
  return j;
}

FoldReport FoldReport::from_json(const json& j) {
  FoldReport r;
  r.fold = j.value("fold", -1);
  r.num_classes = j.at("num_classes").get<std::size_t>();
  r.frames = j.value("frames", std::size_t{0});
  r.excluded = j.value("excluded_classes", std::vector<Label>{});
  for (std::size_t k = 0; k < kNumMetrics; ++k)
    r.values[k] = j.at("metrics").at(metric_keys()[k]).get<double>();
  for (const auto& v : j.value("videos", json::array())) {
    VideoMetrics m;
    m.video_id = v.at("id").get<std::string>();
    m.frames = v.value("frames", std::size_t{0});
    m.accuracy = v.at("accuracy").get<double>();
    m.edit = v.at("edit").get<double>();
    m.f1_10 = v.at("f1_10").get<double>();
    m.f1_25 = v.at("f1_25").get<double>();
    m.f1_50 = v.at("f1_50").get<double>();
    m.miou = v.at("miou").get<double>();
    r.videos.push_back(std::move(m));
  }
  return r;
}

json StudyReport::to_json() const {
  json j;
  j["folds"] = folds;
  j["std_kind"] = "population";
  j["columns"] = metric_keys();
  for (std::size_t k = 0; k < kNumMetrics; ++k)
    j["metrics"][metric_keys()[k]] = {{"mean", mean[k]}, {"std", stddev[k]}};
  return j;
}

std::string StudyReport::to_table(const std::string& row_name) const {
  std::ostringstream out;
  out << "Model";
  for (const auto& t : metric_titles()) out << " | " << t;
  out << '\n' << row_name;
  out << std::fixed << std::setprecision(1);
  for (std::size_t k = 0; k < kNumMetrics; ++k) out << " | " << mean[k] << " ± " << stddev[k];
  out << '\n';
  return out.str();
}

}  // namespace psseg::metrics
