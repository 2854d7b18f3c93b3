// csad — data generation, training, evaluation and verification front end.
//
// Exit codes: 0 success, 1 usage or I/O error, 2 configuration error,
// 3 data error, 4 numeric failure (non-finite loss, failed gradient check).

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "csad/config.hpp"
#include "csad/experiment.hpp"
#include "csad/image_io.hpp"
#include "csad/verify.hpp"

namespace fs = std::filesystem;
using namespace csad;

namespace {

constexpr int kExitIo = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// Only the header carries wall-clock time, so logs differ in that line alone.
std::string header_line(const std::string& command) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return nlohmann::json{{"command", command}, {"started", buf}}.dump();
}

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? parse_run_config(nlohmann::json::object()) : load_run_config(path);
}

void require_match(const NetConfig& net, const DatasetManifest& m) {
  if (net.input_h != m.height || net.input_w != m.width)
    throw ConfigError("net.input_size [" + std::to_string(net.input_h) + ", " +
                      std::to_string(net.input_w) + "] does not match the dataset's " +
                      std::to_string(m.height) + "x" + std::to_string(m.width) + " images");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

int cmd_gen_data(std::size_t n, std::size_t size, std::uint64_t seed, const fs::path& out,
                 double train_percent, std::size_t folds) {
  const DatasetManifest m = make_dataset(out, n, size, size, seed, train_percent, folds);
  std::cout << "wrote " << m.samples.size() << " samples (" << m.train_count() << " train) to "
            << out.string() << "\n";
  return 0;
}

int cmd_train(const std::string& config, const fs::path& data, const fs::path& out,
              const std::string& log_path) {
  const RunConfig cfg = config_or_default(config);
  const LoadedDataset ds = load_dataset(data);
  require_match(cfg.net, ds.manifest);
  if (ds.train.empty()) throw DataError(data.string() + ": dataset has no training samples");

  std::ofstream log_file;
  if (!log_path.empty()) {
    log_file.open(log_path);
    if (!log_file) throw std::runtime_error("cannot write '" + log_path + "'");
  }
  std::ostream& log = log_path.empty() ? std::cout : log_file;
  log << header_line("train") << "\n";
  ModelState model = init_model(cfg.net, cfg.train.seed);
  train(model, ds.train, ds.val, cfg.train,
        [&](const EpochRecord& rec) { log << epoch_record_json(rec) << std::endl; });
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(out, model, cfg.train);
  return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data, int fold, const std::string& out) {
  const Checkpoint ck = load_checkpoint(ckpt);
  std::vector<TrainSample> samples;
  if (fold >= 0) {
    samples = load_fold(data, static_cast<std::size_t>(fold));
  } else {
    samples = load_dataset(data).val;
  }
  if (samples.empty()) throw DataError("no samples selected for evaluation");
  require_match(ck.model.config, load_manifest(data));
  const MetricsReport report = evaluate_model(ck.model, samples);
  std::ostringstream ss;
  write_report(ss, report);
  if (out.empty())
    std::cout << ss.str();
  else
    write_text(out, ss.str());
  return 0;
}

int cmd_ablate(const fs::path& data, const fs::path& out, const std::string& config,
               const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& only,
               std::size_t epochs) {
  AblationOptions opts;
  opts.base = config_or_default(config);
  if (epochs > 0) opts.base.train.epochs = epochs;
  opts.seeds = seeds;
  opts.only = only;
  opts.out_dir = out;
  const LoadedDataset ds = load_dataset(data);
  require_match(opts.base.net, ds.manifest);
  fs::create_directories(out);
  std::ofstream log(out / "ablate.jsonl");
  log << header_line("ablate") << "\n";
  const AblationResult result =
      run_ablation(ds, opts, [&](const std::string& variant, std::uint64_t seed, const EpochRecord& rec) {
        log << "{\"variant\":\"" << variant << "\",\"seed\":" << seed
            << ",\"record\":" << epoch_record_json(rec) << "}" << std::endl;
      });
  const std::string table = format_ablation_table(result);
  write_text(out / "ablation.txt", table);
  std::cout << table;
  return 0;
}

int cmd_export_attn(const fs::path& ckpt, const fs::path& sample_dir, const fs::path& out) {
  const Checkpoint ck = load_checkpoint(ckpt);
  TrainSample s;
  try {
    s.t2w = load_rt1((sample_dir / "t2w.rt1").string());
    s.adc = load_rt1((sample_dir / "adc.rt1").string());
  } catch (const std::runtime_error& e) {
    throw DataError(sample_dir.string() + ": " + e.what());
  }
  const NetConfig& net = ck.model.config;
  if (s.t2w.shape() != Shape{1, net.input_h, net.input_w} || s.adc.shape() != s.t2w.shape())
    throw DataError(sample_dir.string() + ": image shape " + shape_to_string(s.t2w.shape()) +
                    " does not match the model input");
  const ForwardResult r = forward(ck.model, s.t2w, s.adc);
  fs::create_directories(out);
  for (std::size_t m = 0; m < r.attn_t2w.size(); ++m) {
    for (const auto& [name, maps] : {std::pair{"t2w", &r.attn_t2w}, std::pair{"adc", &r.attn_adc}}) {
      const std::string stem = std::string(name) + "_stage" + std::to_string(m + 1);
      write_pgm_normalized(out / (stem + ".pgm"), (*maps)[m].map());
      save_rt1((out / (stem + ".rt1")).string(), (*maps)[m].map());
    }
  }
  write_mask_pgm(out / "pred_mask.pgm", threshold_mask(r.pred, net.threshold));
  std::cout << "wrote " << 2 * r.attn_t2w.size() << " attention maps to " << out.string() << "\n";
  return 0;
}

int cmd_gradcheck(const verify::SuiteOptions& opts) {
  bool ok = true;
  for (const auto& rep : verify::run_gradcheck_suite(opts)) {
    std::cout << verify::format_report(rep) << "\n";
    ok = ok && rep.pass;
  }
  return ok ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal attention distillation for two-stream MRI lesion segmentation"};
  app.require_subcommand(1);

  std::size_t n = 200, size = 64, folds = 5, epochs = 0;
  std::uint64_t seed = 1;
  double train_percent = 80.0;
  std::string out, data, config, ckpt, sample, log_path, report_out;
  int fold = -1;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<std::string> only;
  verify::SuiteOptions gc;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic two-modality dataset");
  gen->add_option("--n", n, "Number of samples")->check(CLI::Range(10, 1000000));
  gen->add_option("--size", size, "Square image size")->check(CLI::Range(16, 4096));
  gen->add_option("--seed", seed, "Dataset seed");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--train-percent", train_percent, "Training share of the split");
  gen->add_option("--folds", folds, "Cross-validation folds");

  auto* tr = app.add_subcommand("train", "Train a model; per-epoch JSON lines on stdout");
  tr->add_option("--config", config, "Run configuration (JSON)");
  tr->add_option("--data", data, "Dataset root")->required();
  tr->add_option("--out", out, "Checkpoint path")->required();
  tr->add_option("--log", log_path, "Write the JSON-lines log here instead of stdout");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint; prints a metrics report");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--data", data, "Dataset root")->required();
  ev->add_option("--fold", fold, "Evaluate this fold (default: the validation split)");
  ev->add_option("--out", report_out, "Write the report here instead of stdout");

  auto* ab = app.add_subcommand("ablate", "Train every ablation variant over several seeds");
  ab->add_option("--data", data, "Dataset root")->required();
  ab->add_option("--out", out, "Output directory")->required();
  ab->add_option("--config", config, "Base run configuration (JSON)");
  ab->add_option("--seeds", seeds, "Seeds")->expected(1, -1);
  ab->add_option("--only", only, "Restrict to these rows")->expected(1, -1);
  ab->add_option("--epochs", epochs, "Override train.epochs");

  auto* ex = app.add_subcommand("export-attn", "Write per-stage attention maps (PGM + RT1)");
  ex->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ex->add_option("--sample", sample, "Sample directory holding t2w.rt1 and adc.rt1")->required();
  ex->add_option("--out", out, "Output directory")->required();

  auto* gcmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gcmd->add_option("--threshold", gc.threshold, "Relative error bound per operation");
  gcmd->add_option("--network-threshold", gc.network_threshold, "Bound for the end-to-end network");
  gcmd->add_option("--instances", gc.instances, "Random instances per operation");
  gcmd->add_option("--seed", gc.seed, "Instance seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitIo;
  }

  try {
    if (*gen) return cmd_gen_data(n, size, seed, out, train_percent, folds);
    if (*tr) return cmd_train(config, data, out, log_path);
    if (*ev) return cmd_eval(ckpt, data, fold, report_out);
    if (*ab) return cmd_ablate(data, out, config, seeds, only, epochs);
    if (*ex) return cmd_export_attn(ckpt, sample, out);
    if (*gcmd) return cmd_gradcheck(gc);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ParameterError& e) {
    std::cerr << "invalid parameter: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitIo;
}
