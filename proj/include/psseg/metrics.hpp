// Frame-level and segment-level evaluation of phase predictions, and the
// per-fold / cross-fold aggregation of those scores. Every score is a
// percentage in [0, 100].
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "psseg/feature_store.hpp"

namespace psseg::metrics {

struct Segment {
  Label label = 0;
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive

  std::size_t length() const { return end - start + 1; }
  bool operator==(const Segment&) const = default;
};

// Maximal constant runs, in temporal order.
std::vector<Segment> to_segments(std::span<const Label> labels);
std::vector<Label> expand(std::span<const Segment> segments);

// `exclude` lists classes to ignore. Frame metrics drop frames whose ground
// truth is excluded and never average over excluded classes; segment metrics
// drop excluded segments on both sides.

double accuracy(std::span<const Label> pred, std::span<const Label> gt,
                std::span<const Label> exclude = {});

// Mean per-class F1 = 2TP / (2TP + FP + FN) over the classes present in gt.
double macro_f1(std::span<const Label> pred, std::span<const Label> gt, std::size_t num_classes,
                std::span<const Label> exclude = {});

// Macro average precision over classes with at least one positive frame.
// `probabilities` is num_classes x T, class-major. Tied scores form one
// threshold and AP = sum_k (R_k - R_{k-1}) * P_k.
double pr_auc(std::span<const float> probabilities, std::span<const Label> gt,
              std::size_t num_classes, std::span<const Label> exclude = {});

// Step-rule AP of one binary problem; positives[i] is 0 or 1.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> positives);

std::size_t levenshtein(std::span<const Label> a, std::span<const Label> b);

double edit_score(std::span<const Label> pred, std::span<const Label> gt,
                  std::span<const Label> exclude = {});

// Each predicted segment, in order, is compared with the same-label ground-truth
// segment of highest IoU (earliest on ties). It is a true positive when that
// IoU >= tau and the ground-truth segment is still unmatched.
double segmental_f1(std::span<const Label> pred, std::span<const Label> gt, double tau,
                    std::span<const Label> exclude = {});

double mean_iou(std::span<const Label> pred, std::span<const Label> gt, std::size_t num_classes,
                std::span<const Label> exclude = {});

enum Metric : std::size_t { kAccuracy, kMacroF1, kEdit, kPrAuc, kF1At10, kF1At25, kF1At50, kMIoU };
inline constexpr std::size_t kNumMetrics = 8;

// Column titles in table order, and the matching JSON keys.
const std::array<std::string, kNumMetrics>& metric_titles();
const std::array<std::string, kNumMetrics>& metric_keys();

struct VideoMetrics {
  std::string video_id;
  std::size_t frames = 0;
  double accuracy = 0;
  double edit = 0;
  double f1_10 = 0;
  double f1_25 = 0;
  double f1_50 = 0;
  double miou = 0;
};

struct VideoEval {
  std::string video_id;
  std::vector<Label> gt;
  std::vector<Label> pred;
  std::vector<float> probabilities;  // num_classes x T
};

VideoMetrics evaluate_video(const VideoEval& video, std::size_t num_classes,
                            std::span<const Label> exclude = {});

struct FoldReport {
  int fold = -1;
  std::size_t num_classes = 0;
  std::size_t frames = 0;
  std::vector<Label> excluded;
  // Accuracy, macro-F1 and PR-AUC pool every frame of the fold; the rest are
  // means of per-video values.
  std::array<double, kNumMetrics> values{};
  std::vector<VideoMetrics> videos;

  nlohmann::json to_json() const;
  static FoldReport from_json(const nlohmann::json& j);
};

struct StudyReport {
  std::size_t folds = 0;
  std::array<double, kNumMetrics> mean{};
  std::array<double, kNumMetrics> stddev{};  // population standard deviation

  nlohmann::json to_json() const;
  // Header row plus one "mean ± std" row, columns separated by " | ".
  std::string to_table(const std::string& row_name = "model") const;
};

FoldReport aggregate(std::span<const VideoEval> videos, std::size_t num_classes,
                     std::span<const Label> exclude = {}, int fold = -1);

StudyReport summarize(std::span<const FoldReport> folds);

}  // namespace psseg::metrics
