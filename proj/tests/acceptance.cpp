// Acceptance suite: one PASS/FAIL line per top-level requirement. Exits
// non-zero when any line fails.
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "cli_runner.hpp"
#include "model_gradcheck.hpp"
#include "json.hpp"
#include "metric_oracles.hpp"
#include "psseg/binary_io.hpp"
#include "psseg/feature_store.hpp"
#include "psseg/metrics.hpp"
#include "psseg/mstcn.hpp"
#include "psseg/optim.hpp"
#include "psseg/splits.hpp"
#include "psseg/synthetic.hpp"
#include "psseg/training.hpp"

namespace fs = std::filesystem;
using namespace psseg;
using nlohmann::json;
using L = std::vector<Label>;
using Clock = std::chrono::steady_clock;

namespace {

// A check records the first failed expectation; detail describes the result.
struct Check {
  bool ok = true;
  std::ostringstream detail;
  void expect(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail << "failed: " << what << "; ";
    }
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<float> random_probabilities(std::mt19937& rng, int C, int T, bool coarse) {
  std::uniform_real_distribution<float> u(0.01f, 1.f);
  std::vector<float> p(C * T);
  for (int t = 0; t < T; ++t) {
    float s = 0;
    for (int c = 0; c < C; ++c) {
      float v = u(rng);
      if (coarse) v = std::round(v * 4) / 4 + 0.25f;
      p[c * T + t] = v;
      s += v;
    }
    for (int c = 0; c < C; ++c) p[c * T + t] /= s;
  }
  return p;
}

void metric_oracle_suite(Check& c) {
  const auto t0 = Clock::now();
  std::mt19937 rng(2024);
  int divergences = 0;
  for (int i = 0; i < 1000 && c.ok; ++i) {
    const int T = 1 + static_cast<int>(rng() % 60);
    const int C = 1 + static_cast<int>(rng() % 6);
    const auto gt = oracle::random_sequence(rng, T, C);
    const auto pred = oracle::perturb(rng, gt, C);
    const auto probs = random_probabilities(rng, C, T, i % 2 == 0);
    const std::string tag = " (case " + std::to_string(i) + ")";
    c.expect(metrics::accuracy(pred, gt) == oracle::accuracy(pred, gt), "accuracy" + tag);
    c.expect(metrics::macro_f1(pred, gt, C) == oracle::macro_f1(pred, gt, C), "macro-F1" + tag);
    c.expect(metrics::mean_iou(pred, gt, C) == oracle::mean_iou(pred, gt, C), "mIoU" + tag);
    c.expect(metrics::edit_score(pred, gt) == oracle::edit(pred, gt), "edit" + tag);
    for (double tau : {0.10, 0.25, 0.50}) {
      const double f = metrics::segmental_f1(pred, gt, tau);
      c.expect(f == oracle::f1_greedy(pred, gt, tau), "segmental F1" + tag);
      if (f != oracle::f1_optimal(pred, gt, tau)) ++divergences;
    }
    c.expect(std::abs(metrics::pr_auc(probs, gt, C) - oracle::pr_auc(probs, gt, C)) <= 1e-9, "PR-AUC" + tag);
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 30.0, "runtime under 30 s");
  c.detail << "1000 pairs in " << secs << " s; greedy vs optimal matching differed in " << divergences
           << "/3000 F1 evaluations";
}

void worked_fixtures(Check& c) {
  const int A = 0, B = 1;
  const double edit = metrics::edit_score(L{A, B, A}, L{A, A, B});
  c.expect(std::abs(edit - 66.6667) < 1e-4, "edit 66.67");
  const L g8 = {A, A, A, A, B, B, B, B}, p8 = {A, A, A, B, B, B, B, B};
  const double f50 = metrics::segmental_f1(p8, g8, 0.5), f80 = metrics::segmental_f1(p8, g8, 0.8);
  c.expect(f50 == 100.0 && f80 == 50.0, "F1@50 = 100 and F1@80 = 50");
  L gf(20, B), pf(20, B);
  std::fill(gf.begin(), gf.begin() + 10, A);
  for (int t : {0, 1, 2, 3, 5, 6, 8, 9}) pf[t] = A;
  const double frag = metrics::segmental_f1(pf, gf, 0.25);
  c.expect(frag == 50.0, "fragmented segment F1@25 = 50");
  const double miou = metrics::mean_iou(L{0, 1, 1, 1}, L{0, 0, 1, 1}, 2);
  c.expect(std::abs(miou - 58.3333) < 1e-4, "mIoU 58.33");
  const double mf1 = metrics::macro_f1(L{0, 0, 0, 0}, L{0, 0, 1, 1}, 2);
  c.expect(std::abs(mf1 - 33.3333) < 1e-4, "macro-F1 33.33");
  const std::vector<double> sc = {0.9, 0.8, 0.7};
  const std::vector<std::uint8_t> pos = {1, 0, 1};
  const double ap = 100 * metrics::average_precision(sc, pos);
  c.expect(std::abs(ap - 83.3333) < 1e-4, "AP 83.33");
  ad::Tape<double> tape;
  const std::vector<Label> labels(6, 2);
  const double ce = ad::cross_entropy(tape.constant({19, 6}, std::vector<double>(19 * 6, 0.0)),
                                      std::span<const Label>(labels))
                        .item();
  c.expect(std::abs(ce - 2.9444) < 1e-4 && std::abs(ce - std::log(19.0)) < 1e-12, "CE = ln 19");
  c.detail << "edit " << edit << ", F1@50 " << f50 << ", F1@80 " << f80 << ", fragment F1@25 " << frag
           << ", mIoU " << miou << ", macro-F1 " << mf1 << ", AP " << ap << ", CE " << ce;
}

void gradient_checks(Check& c) {
  using gradcheck::Input;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  double worst_op = 0;
  auto op = [&](const gradcheck::Builder& b, std::vector<Input> in) {
    worst_op = std::max(worst_op, gradcheck::check(b, std::move(in)).rel_error);
  };
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t C = 2 + rng() % 3, T = 2 + rng() % 8, cout = 1 + rng() % 3;
    const auto w = gradcheck::random_values(rng, C * T);
    const auto w2 = gradcheck::random_values(rng, 2 * C * T);
    const auto wc = gradcheck::random_values(rng, cout * T);
    const Input x{{C, T}, gradcheck::random_values(rng, C * T)};
    const Input y{{C, T}, gradcheck::random_values(rng, C * T)};
    std::vector<Label> labels(T);
    for (auto& l : labels) l = static_cast<Label>(rng() % C);
    const std::size_t dil = 1 + rng() % 4;
    op([&](auto&, const auto& v) { return gradcheck::weighted_sum(ad::conv1d(v[0], v[1], v[2], dil), wc); },
       {x, Input{{cout, C, 3}, gradcheck::random_values(rng, cout * C * 3)},
        Input{{cout}, gradcheck::random_values(rng, cout)}});
    op([&](auto&, const auto& v) { return gradcheck::weighted_sum(ad::relu(v[0]), w); }, {x});
    op([&](auto&, const auto& v) { return gradcheck::weighted_sum(ad::add(v[0], v[1]), w); }, {x, y});
    op([&](auto&, const auto& v) { return gradcheck::weighted_sum(ad::scale(v[0], 0.35), w); }, {x});
    op([&](auto&, const auto& v) { return gradcheck::weighted_sum(ad::concat_channels(v[0], v[1]), w2); }, {x, y});
    op([&](auto&, const auto& v) { return gradcheck::weighted_sum(ad::softmax_channels(v[0]), w); }, {x});
    op([&](auto&, const auto& v) { return gradcheck::weighted_sum(ad::log_softmax_channels(v[0]), w); }, {x});
    op([&](auto&, const auto& v) { return ad::cross_entropy(v[0], std::span<const Label>(labels)); }, {x});
    // Smoothing with both active and saturated clamps; differences near the
    // kink are nudged away so central differences stay valid.
    auto sv = gradcheck::random_values(rng, C * T, 2.5);
    for (std::size_t ci = 0; ci < C; ++ci)
      for (std::size_t t = 1; t < T; ++t)
        if (std::abs(std::abs(sv[ci * T + t] - sv[ci * T + t - 1]) - 2.0) < 1e-2) sv[ci * T + t] += 0.05;
    worst_op = std::max(worst_op, gradcheck::smoothing_rel_error(sv, C, 2.0));
  }
  c.expect(worst_op <= 1e-6, "op relative error <= 1e-6");

  // End-to-end loss through a small model, with and without smoothing.
  ModelConfig cfg;
  cfg.num_classes = 3;
  cfg.feat_dim = 4;
  cfg.hidden_maps = 3;
  cfg.pg_layers = 3;
  cfg.refine_stages = 2;
  cfg.refine_layers = 2;
  double e2e = 0;
  std::size_t probes = 0;
  for (double lambda : {0.0, cfg.smoothing_weight}) {
    const auto r = gradcheck::check_model_loss(cfg, 12, 5, lambda);
    e2e = std::max(e2e, r.rel_error);
    probes += r.probes;
  }
  c.expect(e2e <= 1e-5, "end-to-end relative error <= 1e-5");
  const double secs = seconds_since(t0);
  c.expect(secs < 120.0, "runtime under 2 min");
  c.detail << "worst op rel error " << worst_op << "; end-to-end rel error " << e2e << " over " << probes
           << " parameters; " << secs << " s";
}

void configuration_fidelity(Check& c) {
  const ModelConfig cfg;
  c.expect(cfg.num_stages() == 5, "5 stages");
  c.expect(cfg.pg_layers == 13 && cfg.refine_stages == 4 && cfg.refine_layers == 13, "13 / 4x13 layers");
  c.expect(cfg.hidden_maps == 64, "64 hidden maps");
  for (std::size_t i = 0; i < 13; ++i) {
    const auto [lo, hi] = cfg.pg_dilations(i);
    c.expect(lo == (std::size_t{1} << i) && hi == (std::size_t{1} << (12 - i)), "dual dilations");
  }
  std::size_t conv_low = 0, refine_layers = 0;
  for (const auto& t : parameter_layout(cfg)) {
    if (t.name.find(".conv_low.weight") != std::string::npos) ++conv_low;
    if (t.name.rfind("refine", 0) == 0 && t.name.find(".conv.weight") != std::string::npos) ++refine_layers;
    if (t.name.find("weight") != std::string::npos && t.shape.size() == 3 && t.shape[2] == 3 &&
        t.name.find("conv") != std::string::npos)
      c.expect(t.shape[0] == 64 && t.shape[1] == 64, "64x64 dilated kernels");
  }
  c.expect(conv_low == 13 && refine_layers == 52, "layer enumeration");
  FeatureSequence f;
  f.frame_count = 50;
  f.feat_dim = 2048;
  f.data.assign(50 * 2048, 0.1f);
  const auto out = forward_logits(init_params<float>(cfg, 1), cfg, f);
  c.expect(out.size() == 5, "forward yields 5 stages");
  for (const auto& s : out) c.expect(s.size() == 19 * 50, "19x50 logits");
  const TrainConfig t;
  const double lr0 = t.learning_rate(0), lr59 = t.learning_rate(59), lr60 = t.learning_rate(60),
               lr89 = t.learning_rate(89), lr90 = t.learning_rate(90), lr99 = t.learning_rate(99);
  c.expect(lr0 == 5e-4 && lr59 == 5e-4, "lr 5e-4 before epoch 60");
  c.expect(std::abs(lr60 - 1.5e-4) < 1e-18 && std::abs(lr89 - 1.5e-4) < 1e-18, "lr 1.5e-4 from epoch 60");
  c.expect(std::abs(lr90 - 4.5e-5) < 1e-18 && std::abs(lr99 - 4.5e-5) < 1e-18, "lr 4.5e-5 from epoch 90");
  c.expect(t.epochs == 100 && t.batch_size == 1, "100 epochs, batch 1");
  c.detail << "stages " << out.size() << ", parameters " << parameter_count(cfg) << ", lr " << lr0 << " -> " << lr60
           << " -> " << lr90;
}

void desk_scale_training(Check& c) {
  SyntheticOptions opt;
  opt.num_videos = 5;
  opt.min_frames = opt.max_frames = 200;
  opt.feat_dim = 16;
  opt.num_classes = 4;
  opt.seed = 1;
  std::vector<VideoData> videos;
  for (auto& v : generate_synthetic(opt)) videos.push_back({v.id, v.features, v.labels});
  ModelConfig cfg;
  cfg.feat_dim = 16;
  cfg.num_classes = 4;
  TrainConfig tcfg;
  tcfg.seed = 7;

  auto run_once = [&](double& secs, std::vector<char>& ckpt, std::string& report) {
    const auto t0 = Clock::now();
    const auto res = train_fold(videos, cfg, tcfg);
    secs = seconds_since(t0);
    ckpt = encode_checkpoint(res.params);
    std::vector<metrics::VideoEval> evals;
    for (const auto& v : videos) {
      auto p = predict(res.params, cfg, v.features);
      evals.push_back({v.id, v.labels.labels, std::move(p.labels), std::move(p.probabilities)});
    }
    const auto fold = metrics::aggregate(evals, cfg.num_classes);
    report = fold.to_json().dump() + res.manifest.to_json().dump();
    return fold;
  };
  double s1 = 0, s2 = 0;
  std::vector<char> c1, c2;
  std::string r1, r2;
  const auto f1 = run_once(s1, c1, r1);
  run_once(s2, c2, r2);
  const double acc = f1.values[metrics::kAccuracy], edit = f1.values[metrics::kEdit];
  c.expect(acc >= 99.0, "train accuracy >= 99");
  c.expect(edit >= 90.0, "edit >= 90");
  c.expect(s1 <= 300.0 && s2 <= 300.0, "runtime <= 5 min per run");
  c.expect(c1 == c2, "bit-identical checkpoints");
  c.expect(r1 == r2, "identical reports");
  c.detail << "accuracy " << acc << ", edit " << edit << ", F1@50 " << f1.values[metrics::kF1At50] << ", run times "
           << s1 << " s / " << s2 << " s, checkpoints identical: " << (c1 == c2 ? "yes" : "no");
}

void split_protocol(Check& c) {
  DatasetManifest m;
  m.vocabulary = {"x"};
  for (const auto& [g, n] : std::vector<std::pair<std::string, int>>{{"BL", 32}, {"BN", 50}, {"SD", 33}})
    for (int i = 0; i < n; ++i) m.entries.push_back({g + "_" + std::to_string(i), g, "f", "l"});
  const auto spec = stratified_kfold(m, 5, 42);
  std::ostringstream sizes;
  for (const auto& f : spec.folds) {
    c.expect(f.size() == 23, "fold size 23");
    std::map<std::string, int> counts;
    for (const auto& id : f) counts[id.substr(0, 2)] += 1;
    sizes << "[" << counts["BL"] << "/" << counts["BN"] << "/" << counts["SD"] << "]";
  }
  for (const std::string g : {"BL", "BN", "SD"}) {
    int lo = 1000, hi = 0;
    for (const auto& f : spec.folds) {
      int n = 0;
      for (const auto& id : f) n += id.rfind(g, 0) == 0;
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    c.expect(hi - lo <= 1, "per-prefix counts differ by <= 1");
  }
  const auto back = FoldSpec::from_json(json::parse(spec.to_json().dump()));
  c.expect(back.folds == spec.folds && back.seed == spec.seed && back.num_folds == 5, "JSON round trip");
  c.detail << "fold sizes 23 x 5, BL/BN/SD per fold " << sizes.str();
}

void interpolation(Check& c) {
  FeatureSequence s;
  s.frame_count = 2;
  s.feat_dim = 1;
  s.stride = 4;
  s.data = {1.0f, 5.0f};
  const auto fixture = interpolate_to_full_rate(s, 5);
  c.expect(fixture.data == std::vector<float>({1, 2, 3, 4, 5}), "[1,2,3,4,5] fixture");

  std::mt19937 rng(9);
  std::normal_distribution<float> g(0.f, 3.f);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    FeatureSequence q;
    q.frame_count = 1 + rng() % 20;
    q.feat_dim = 1 + rng() % 4;
    q.stride = 4;
    for (std::size_t i = 0; i < q.frame_count * q.feat_dim; ++i) q.data.push_back(g(rng));
    const std::size_t target = q.frame_count * 4 + rng() % 4;
    const auto out = interpolate_to_full_rate(q, target);
    for (std::size_t t = 0; t < target; ++t)
      for (std::size_t j = 0; j < q.feat_dim; ++j) {
        const std::size_t k = std::min(t / 4, q.frame_count - 1);
        double expected = q.at(k, j);
        if (k + 1 < q.frame_count) {
          const double a = static_cast<double>(t - 4 * k) / 4.0;
          expected = (1 - a) * q.at(k, j) + a * q.at(k + 1, j);
        }
        worst = std::max(worst, std::abs(out.at(t, j) - expected));
      }
    FeatureSequence id = q;
    id.stride = 1;
    c.expect(bit_equal(interpolate_to_full_rate(id, id.frame_count), id), "stride-1 identity");
  }
  c.expect(worst <= 1e-6, "piecewise-linear oracle within 1e-6");
  c.detail << "fixture exact; max deviation from oracle " << worst;
}

void end_to_end_cli(Check& c) {
  const auto root = fs::temp_directory_path() / "psseg_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const json cfg = {{"synthetic",
                     {{"num_videos", 15}, {"min_frames", 80}, {"max_frames", 120}, {"feat_dim", 8}, {"num_classes", 4}}},
                    {"manifest", "data/manifest.json"},
                    {"folds", 5},
                    {"seed", 11},
                    {"model", {{"hidden_maps", 16}, {"pg_layers", 6}, {"refine_stages", 4}, {"refine_layers", 6}}},
                    {"train", {{"epochs", 10}}}};
  io::write_text_file(root / "config.json", cfg.dump(2));
  const std::string base = "--config " + cli_runner::quote((root / "config.json").string());
  auto out = [](const fs::path& p) { return " --out " + cli_runner::quote(p.string()); };
  const auto log = root / "cli.log";
  auto step = [&](const std::string& args) {
    const auto r = cli_runner::run(args, log);
    c.expect(r.status == 0, "psseg " + args.substr(0, args.find(' ')) + " exited " + std::to_string(r.status) +
                                ": " + r.output.substr(0, 300));
  };
  step("synth " + base + out(root / "data"));
  step("split " + base + out(root / "run" / "folds.json"));
  for (int k = 0; k < 5 && c.ok; ++k) {
    step("train " + base + " --fold " + std::to_string(k) + out(root / "run"));
    step("eval " + base + " --fold " + std::to_string(k) + out(root / "run"));
  }
  step("report" + out(root / "run"));
  if (!c.ok) return;
  const auto study = json::parse(io::read_text_file(root / "run" / "study_report.json"));
  std::size_t populated = 0;
  for (const auto& key : metrics::metric_keys()) {
    const auto& m = study.at("metrics").at(key);
    if (m.at("mean").is_number() && m.at("std").is_number()) ++populated;
  }
  c.expect(populated == 8, "8 populated columns");
  const auto table = io::read_text_file(root / "run" / "study_report.txt");
  for (const auto& t : metrics::metric_titles()) c.expect(table.find(t) != std::string::npos, "table column " + t);

  std::string dup = "report";
  for (int i = 0; i < 5; ++i) dup += " " + cli_runner::quote((root / "run" / "fold_2" / "fold_report.json").string());
  step(dup + out(root / "dup"));
  if (!c.ok) return;
  const auto dstudy = json::parse(io::read_text_file(root / "dup" / "study_report.json"));
  double max_std = 0;
  for (const auto& key : metrics::metric_keys()) max_std = std::max(max_std, dstudy.at("metrics").at(key).at("std").get<double>());
  c.expect(max_std == 0.0, "std 0 for duplicated folds");
  c.detail << populated << "/8 columns populated, accuracy "
           << study.at("metrics").at("accuracy").at("mean").get<double>() << " ± "
           << study.at("metrics").at("accuracy").at("std").get<double>() << "; duplicated-fold max std " << max_std;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria = {
      {"metric oracle suite", metric_oracle_suite},
      {"worked metric fixtures", worked_fixtures},
      {"gradient checks", gradient_checks},
      {"configuration fidelity", configuration_fidelity},
      {"desk-scale training", desk_scale_training},
      {"split protocol", split_protocol},
      {"interpolation", interpolation},
      {"end-to-end CLI", end_to_end_cli},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Check c;
    try {
      fn(c);
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail << "exception: " << e.what();
    }
    std::cout << (c.ok ? "PASS" : "FAIL") << "  " << name << ": " << c.detail.str() << std::endl;
    failed += c.ok ? 0 : 1;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
