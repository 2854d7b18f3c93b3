// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//
//   csad_acceptance --cli <path to csad> [--only name ...] [--work dir]

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "csad/experiment.hpp"
#include "csad/rng.hpp"
#include "csad/verify.hpp"

namespace fs = std::filesystem;
using namespace csad;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor random_tensor(Pcg32& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

SegMask random_mask(Pcg32& rng, std::size_t h, std::size_t w, double p) {
  SegMask m(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) m(y, x) = rng.chance(p) ? 1 : 0;
  return m;
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream ss;
  ss.precision(prec);
  ss << v;
  return ss.str();
}

int run_command(const std::string& cmd) {
  const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  verify::SuiteOptions opts;
  opts.instances = 50;
  bool ok = true;
  std::size_t ops = 0;
  std::string worst;
  double worst_ratio = 0.0;
  for (const auto& r : verify::run_gradcheck_suite(opts)) {
    ++ops;
    ok = ok && r.pass && r.instances >= 50;
    const double ratio = r.max_rel_error / r.threshold;
    if (ratio >= worst_ratio) {
      worst_ratio = ratio;
      worst = r.op_name + " " + fmt(r.max_rel_error);
    }
    if (!r.pass) std::cout << "  " << verify::format_report(r) << "\n";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 300.0;
  return {ok, std::to_string(ops) + " checks x 50 instances, worst " + worst + ", " + fmt(secs) + " s"};
}

Outcome oracle_equivalence() {
  Pcg32 rng(11, rng_stream::kTestData);
  std::size_t conv_bad = 0, corr_bad = 0, eval_bad = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t ci = 1 + rng.below(4), co = 1 + rng.below(4);
    const std::size_t k = rng.chance(0.5) ? 3 : 1;
    const std::size_t h = k + rng.below(9), w = k + rng.below(9);
    const std::size_t stride = 1 + rng.below(2), pad = rng.below(2);
    const Tensor x = random_tensor(rng, {ci, h, w}), ker = random_tensor(rng, {co, ci, k, k});
    if (conv2d(x, ker, stride, pad) != verify::brute_conv2d(x, ker, stride, pad)) ++conv_bad;
  }
  for (int i = 0; i < 100; ++i) {
    const Shape s{1 + rng.below(8), 1 + rng.below(6), 1 + rng.below(6)};
    const Tensor a = random_tensor(rng, s), b = random_tensor(rng, s);
    const Tensor got = spatial_correlation(a, b).z, ref = verify::brute_correlation(a, b);
    for (std::size_t j = 0; j < got.size(); ++j)
      if (!(std::fabs(got[j] - ref[j]) <= 1e-12)) {
        ++corr_bad;
        break;
      }
  }
  for (int i = 0; i < 1000; ++i) {
    const std::size_t h = 1 + rng.below(12), w = 1 + rng.below(12);
    const SegMask p = random_mask(rng, h, w, rng.uniform()), t = random_mask(rng, h, w, rng.uniform());
    if (!(evaluate(p, t) == verify::brute_metrics(p, t))) ++eval_bad;
  }
  return {conv_bad + corr_bad + eval_bad == 0,
          "conv2d mismatches " + std::to_string(conv_bad) + "/100, correlation " +
              std::to_string(corr_bad) + "/100, evaluate " + std::to_string(eval_bad) + "/1000"};
}

Outcome attention_invariants() {
  Pcg32 rng(12, rng_stream::kTestData);
  double worst_sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Tensor f = random_tensor(rng, {1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6)}, -3.0, 3.0);
    const AttentionMap m = amgb(f, 1 + rng.below(12), 1 + rng.below(12));
    worst_sum = std::max(worst_sum, std::fabs(sum(m.map()) - 1.0));
  }
  std::size_t asym = 0, negative = 0, self_nonzero = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8);
    const AttentionMap a(spatial_softmax(random_tensor(rng, {h, w}, -4.0, 4.0)));
    const AttentionMap b(spatial_softmax(random_tensor(rng, {h, w}, -4.0, 4.0)));
    const double ab = l_ad(a, b), ba = l_ad(b, a);
    if (ab != ba) ++asym;
    if (ab < 0.0) ++negative;
    if (l_ad(a, a) != 0.0) ++self_nonzero;
  }
  return {worst_sum <= 1e-9 && asym == 0 && negative == 0 && self_nonzero == 0,
          "max |sum-1| " + fmt(worst_sum) + "; asymmetric " + std::to_string(asym) + ", negative " +
              std::to_string(negative) + ", l_ad(a,a)!=0 " + std::to_string(self_nonzero) + " of 10000"};
}

Outcome plan_counts() {
  const TrainSample s = generate(3, 64, 64);
  std::string detail;
  bool ok = true;
  for (const auto& [scheme, expect] : {std::pair{Scheme::ILC, 8u}, std::pair{Scheme::PLC, 10u},
                                       std::pair{Scheme::NLC, 0u}}) {
    NetConfig cfg;
    cfg.scheme = scheme;
    const std::size_t plan = build_distill_plan(scheme, 5).pairs.size();
    const std::size_t used = loss_and_gradient(init_model(cfg, 1), s, LossConfig{}).csad_terms;
    ok = ok && plan == expect && used == expect;
    detail += std::string(to_string(scheme)) + " " + std::to_string(used) + " ";
  }
  return {ok, detail + "terms per sample (stages 5)"};
}

Outcome determinism(const std::string& cli, const fs::path& work) {
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "cfg.json")
      << R"({"net": {"input_size": [32, 32], "stages": 3}, "train": {"epochs": 2, "seed": 5, "augment": true}})";
  const std::string data = (dir / "data").string();
  if (run_command(cli + " gen-data --n 12 --size 32 --seed 9 --out " + data) != 0)
    return {false, "gen-data failed"};
  for (const char* name : {"a", "b"})
    if (run_command(cli + " train --config " + (dir / "cfg.json").string() + " --data " + data +
                    " --out " + (dir / (std::string(name) + ".ckpt")).string()) != 0)
      return {false, std::string("train run ") + name + " failed"};
  const std::string a = read_file(dir / "a.ckpt"), b = read_file(dir / "b.ckpt");
  return {!a.empty() && a == b, "two train runs, checkpoints " + std::to_string(a.size()) + " bytes, " +
                                    (a == b ? "identical" : "DIFFER")};
}

Outcome single_sample_overfit() {
  const auto t0 = Clock::now();
  const NetConfig net;  // 64x64, 5 stages, SCFF + ILC
  TrainConfig cfg;
  cfg.batch_size = 1;
  ModelState model = init_model(net, 1);
  const TrainSample s = generate(1, 64, 64);
  // A constant step ends in a period-3 cycle whose phase decides the result;
  // decaying linearly to zero lets it settle.
  for (int step = 0; step < 200; ++step) {
    cfg.learning_rate = 0.01 * (1.0 - step / 200.0);
    backward_and_step(model, {s}, cfg);
  }
  const SampleGradient end = loss_and_gradient(model, s, cfg.loss);
  const double dice = evaluate(predict_mask(model, s.t2w, s.adc, net.threshold), s.mask).dice;
  const double secs = seconds_since(t0);
  return {end.loss.total < 0.1 && dice > 90.0 && secs < 600.0,
          "after 200 steps: total " + fmt(end.loss.total, 4) + " (< 0.1), Dice " + fmt(dice, 4) +
              "% (> 90), " + fmt(secs) + " s"};
}

Outcome desk_trend(const std::string& cli, const fs::path& work) {
  const auto t0 = Clock::now();
  const fs::path data = work / "desk";
  fs::remove_all(data);
  if (run_command(cli + " gen-data --n 200 --size 64 --seed 2024 --out " + data.string()) != 0)
    return {false, "gen-data failed"};
  AblationOptions opts;
  opts.base = parse_run_config(nlohmann::json::parse(R"({"train": {"epochs": 20}})"));
  opts.seeds = {1, 2, 3};
  opts.only = {"Baseline", "Proposed", "NLC", "ILC"};
  const AblationResult r = run_ablation(load_dataset(data), opts);
  std::istringstream table(format_ablation_table(r));
  for (std::string line; std::getline(table, line);) std::cout << "  " << line << "\n";
  const double secs = seconds_since(t0);
  return {r.violations.empty() && secs < 2700.0,
          std::to_string(r.violations.size()) + " trend violations, " + fmt(secs / 60.0) + " min"};
}

Outcome cli_round_trip(const std::string& cli, const fs::path& work) {
  const fs::path dir = work / "cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "cfg.json") << R"({"train": {"epochs": 1, "learning_rate": 0.01}})";
  const std::string data = (dir / "data").string(), ckpt = (dir / "model.ckpt").string();
  const std::vector<std::pair<std::string, std::string>> steps{
      {"gen-data", cli + " gen-data --n 20 --size 64 --seed 7 --out " + data},
      {"train", cli + " train --config " + (dir / "cfg.json").string() + " --data " + data +
                    " --out " + ckpt + " --log " + (dir / "train.jsonl").string()},
      {"eval", cli + " eval --ckpt " + ckpt + " --data " + data + " --out " + (dir / "report.txt").string()},
      {"export-attn", cli + " export-attn --ckpt " + ckpt + " --sample " + data + "/sample_3 --out " +
                          (dir / "attn").string()},
  };
  for (const auto& [name, cmd] : steps)
    if (const int rc = run_command(cmd); rc != 0) return {false, name + " exited " + std::to_string(rc)};
  std::ifstream report(dir / "report.txt");
  MetricsReport parsed;
  try {
    parsed = read_report(report);
  } catch (const std::exception& e) {
    return {false, std::string("report unparseable: ") + e.what()};
  }
  std::size_t t2w = 0, adc = 0;
  for (const auto& e : fs::directory_iterator(dir / "attn")) {
    const std::string f = e.path().filename().string();
    if (e.path().extension() != ".pgm") continue;
    t2w += f.rfind("t2w_stage", 0) == 0;
    adc += f.rfind("adc_stage", 0) == 0;
  }
  return {parsed.per_sample.size() == 4 && t2w == 5 && adc == 5,
          "report with " + std::to_string(parsed.per_sample.size()) + " samples; " + std::to_string(t2w) +
              " T2W and " + std::to_string(adc) + " ADC attention PGMs"};
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  fs::path work = fs::temp_directory_path() / "csad_acceptance";
  std::vector<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cli" && i + 1 < argc) {
      cli = argv[++i];
    } else if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      only.emplace_back(argv[++i]);
    } else {
      std::cerr << "usage: csad_acceptance --cli <csad> [--work dir] [--only name]...\n";
      return 2;
    }
  }
  if (cli.empty()) {
    std::cerr << "--cli is required\n";
    return 2;
  }
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient-suite", gradient_suite},
      {"oracle-equivalence", oracle_equivalence},
      {"attention-invariants", attention_invariants},
      {"ablation-plan-counts", plan_counts},
      {"determinism", [&] { return determinism(cli, work); }},
      {"single-sample-overfit", single_sample_overfit},
      {"desk-trend", [&] { return desk_trend(cli, work); }},
      {"cli-round-trip", [&] { return cli_round_trip(cli, work); }},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
