// psseg: synthesize data, build splits, train folds, evaluate and report.
#include <exception>
#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace psseg::cli;
  CLI::App app{"Cached-feature surgical phase segmentation"};
  app.require_subcommand(1);

  CommonFlags common;
  SplitFlags split;
  TrainFlags train;
  EvalFlags eval;
  ReportFlags report;
  RibbonFlags ribbon;

  auto add_common = [&](CLI::App* sub, bool out_required) {
    sub->add_option("--config", common.config, "run configuration JSON");
    sub->add_option("--seed", common.seed, "override the configured seed");
    sub->add_option("--features-dir", common.features_dir, "directory holding feature caches");
    sub->add_option("--labels-dir", common.labels_dir, "directory holding label files");
    sub->add_option("--metrics-exclude", common.metrics_exclude,
                    "comma-separated class indices or names ignored by metrics");
    auto* out = sub->add_option("--out", common.out, "output path");
    if (out_required) out->required();
  };

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth_cmd, true);

  auto* split_cmd = app.add_subcommand("split", "build stratified folds");
  add_common(split_cmd, true);
  split_cmd->add_option("--manifest", split.manifest, "dataset manifest JSON");

  auto* train_cmd = app.add_subcommand("train", "train one fold and dump test predictions");
  add_common(train_cmd, true);
  train_cmd->add_option("--fold", train.fold, "held-out fold index")->required();
  train_cmd->add_option("--splits", train.splits, "fold spec JSON");
  train_cmd->add_option("--epochs", train.epochs, "override the configured epoch count");

  auto* eval_cmd = app.add_subcommand("eval", "score one fold's prediction dumps");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--fold", eval.fold, "held-out fold index")->required();
  eval_cmd->add_option("--splits", eval.splits, "fold spec JSON");
  eval_cmd->add_option("--predictions", eval.predictions, "directory of .pspd dumps");

  auto* report_cmd = app.add_subcommand("report", "merge fold reports into mean ± std");
  add_common(report_cmd, true);
  report_cmd->add_option("reports", report.fold_reports, "fold_report.json files");
  report_cmd->add_option("--name", report.row_name, "row label in the table");

  auto* ribbon_cmd = app.add_subcommand("ribbon", "render label ribbons as SVG");
  add_common(ribbon_cmd, true);
  ribbon_cmd->add_option("--gt", ribbon.gt, "ground-truth label file")->required();
  ribbon_cmd->add_option("--pred", ribbon.predictions, "prediction rows as name=path");
  ribbon_cmd->add_option("--vocabulary", ribbon.vocabulary, "vocabulary JSON");
  ribbon_cmd->add_option("--pixels-per-frame", ribbon.pixels_per_frame, "horizontal scale");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) return cmd_synth(common);
    if (*split_cmd) return cmd_split(common, split);
    if (*train_cmd) return cmd_train(common, train);
    if (*eval_cmd) return cmd_eval(common, eval);
    if (*report_cmd) return cmd_report(common, report);
    if (*ribbon_cmd) return cmd_ribbon(common, ribbon);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
