#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace psseg::cli {

// Flags shared by every subcommand. Unset optionals fall back to the config file.
struct CommonFlags {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> features_dir;
  std::optional<std::filesystem::path> labels_dir;
  std::optional<std::string> metrics_exclude;
  std::filesystem::path out;
};

struct SplitFlags {
  std::optional<std::filesystem::path> manifest;
};

struct TrainFlags {
  std::size_t fold = 0;
  std::optional<std::filesystem::path> splits;
  std::optional<std::size_t> epochs;
};

struct EvalFlags {
  std::size_t fold = 0;
  std::optional<std::filesystem::path> splits;
  std::optional<std::filesystem::path> predictions;
};

struct ReportFlags {
  std::vector<std::filesystem::path> fold_reports;
  std::string row_name = "model";
};

struct RibbonFlags {
  std::filesystem::path gt;
  std::vector<std::string> predictions;  // name=path or path
  std::optional<std::filesystem::path> vocabulary;
  double pixels_per_frame = 1.0;
};

// Each returns the process exit status and prints diagnostics to stderr.
int cmd_synth(const CommonFlags& flags);
int cmd_split(const CommonFlags& flags, const SplitFlags& split);
int cmd_train(const CommonFlags& flags, const TrainFlags& train);
int cmd_eval(const CommonFlags& flags, const EvalFlags& eval);
int cmd_report(const CommonFlags& flags, const ReportFlags& report);
int cmd_ribbon(const CommonFlags& flags, const RibbonFlags& ribbon);

}  // namespace psseg::cli
