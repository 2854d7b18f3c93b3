#include "csad/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace csad {

namespace fs = std::filesystem;

LoadedDataset load_dataset(const fs::path& root) {
  LoadedDataset d;
  d.manifest = load_manifest(root);
  for (const DatasetEntry& e : d.manifest.samples)
    (e.train ? d.train : d.val).push_back(load_sample(root, e));
  return d;
}

std::vector<TrainSample> load_fold(const fs::path& root, std::size_t fold) {
  const DatasetManifest m = load_manifest(root);
  if (fold >= m.folds)
    throw DataError("fold " + std::to_string(fold) + " out of range (dataset has " +
                    std::to_string(m.folds) + " folds)");
  std::vector<TrainSample> out;
  for (const DatasetEntry& e : m.samples)
    if (e.fold == fold) out.push_back(load_sample(root, e));
  return out;
}

std::string epoch_record_json(const EpochRecord& rec) {
  nlohmann::json j{{"epoch", rec.epoch},
                   {"dice", rec.loss.dice},
                   {"wbce", rec.loss.wbce},
                   {"csad", rec.loss.csad},
                   {"total", rec.loss.total}};
  j["val_dice"] = std::isnan(rec.val_dice) ? nlohmann::json(nullptr) : nlohmann::json(rec.val_dice);
  return j.dump();
}

const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows{
      {"Baseline", Fusion::Concat, Scheme::NLC},   {"Baseline+SCFF", Fusion::SCFF, Scheme::NLC},
      {"Baseline+CSAD", Fusion::Concat, Scheme::ILC}, {"Proposed", Fusion::SCFF, Scheme::ILC},
      {"NLC", Fusion::SCFF, Scheme::NLC},          {"PLC", Fusion::SCFF, Scheme::PLC},
      {"ILC", Fusion::SCFF, Scheme::ILC},
  };
  return rows;
}

namespace {

std::string variant_key(Fusion f, Scheme s) {
  return std::string(to_string(f)) + "_" + std::string(to_string(s));
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

const VariantResult* find_row(const std::vector<VariantResult>& rows, const std::string& name) {
  for (const auto& r : rows)
    if (r.name == name) return &r;
  return nullptr;
}

}  // namespace

AblationResult run_ablation(const LoadedDataset& data, const AblationOptions& opts,
                            const RunLogger& log) {
  if (opts.seeds.empty()) throw ParameterError("ablate: at least one seed is required");
  std::vector<AblationRow> rows;
  for (const auto& r : ablation_rows())
    if (opts.only.empty() || std::find(opts.only.begin(), opts.only.end(), r.name) != opts.only.end())
      rows.push_back(r);
  for (const auto& name : opts.only)
    if (std::none_of(rows.begin(), rows.end(), [&](const AblationRow& r) { return r.name == name; }))
      throw ParameterError("ablate: unknown row '" + name + "'");

  // Final validation Dice per (variant, seed); identical variants train once.
  std::map<std::string, std::vector<double>> done;
  AblationResult result;
  for (const auto& row : rows) {
    const std::string key = variant_key(row.fusion, row.scheme);
    if (!done.count(key)) {
      std::vector<double> dice;
      for (std::uint64_t seed : opts.seeds) {
        RunConfig cfg = opts.base;
        cfg.net.fusion = row.fusion;
        cfg.net.scheme = row.scheme;
        cfg.train.seed = seed;
        ModelState model = init_model(cfg.net, seed);
        std::ofstream log_file;
        fs::path run_dir;
        if (!opts.out_dir.empty()) {
          run_dir = opts.out_dir / (key + "_seed" + std::to_string(seed));
          fs::create_directories(run_dir);
          log_file.open(run_dir / "train.jsonl");
        }
        double last = std::numeric_limits<double>::quiet_NaN();
        train(model, data.train, data.val, cfg.train, [&](const EpochRecord& rec) {
          last = rec.val_dice;
          if (log_file.is_open()) log_file << epoch_record_json(rec) << "\n";
          if (log) log(key, seed, rec);
        });
        if (!run_dir.empty()) save_checkpoint(run_dir / "model.ckpt", model, cfg.train);
        dice.push_back(last);
      }
      done.emplace(key, std::move(dice));
    }
    VariantResult v{row.name, row.fusion, row.scheme, done.at(key), 0.0, 0.0};
    for (double d : v.val_dice) v.mean += d;
    v.mean /= static_cast<double>(v.val_dice.size());
    v.stddev = sample_std(v.val_dice, v.mean);
    result.rows.push_back(std::move(v));
  }
  result.violations = trend_violations(result.rows);
  return result;
}

std::vector<std::string> trend_violations(const std::vector<VariantResult>& rows) {
  std::vector<std::string> out;
  const auto check = [&](const char* better, const char* worse) {
    const VariantResult* a = find_row(rows, better);
    const VariantResult* b = find_row(rows, worse);
    if (!a || !b) return;
    if (!(a->mean >= b->mean)) {
      std::ostringstream ss;
      ss << std::fixed << std::setprecision(2) << better << " (" << a->mean << ") < " << worse
         << " (" << b->mean << ")";
      out.push_back(ss.str());
    }
  };
  check("Proposed", "Baseline");
  check("ILC", "NLC");
  return out;
}

std::string format_ablation_table(const AblationResult& result) {
  std::ostringstream ss;
  ss << std::left << std::setw(16) << "variant" << std::setw(8) << "fusion" << std::setw(8)
     << "scheme" << "val Dice (%)   per seed\n";
  for (const auto& r : result.rows) {
    ss << std::setw(16) << r.name << std::setw(8) << to_string(r.fusion) << std::setw(8)
       << to_string(r.scheme) << std::setw(15) << format_mean_std(r.mean, r.stddev, 1);
    for (double d : r.val_dice) ss << " " << std::fixed << std::setprecision(2) << d;
    ss << "\n";
  }
  if (result.violations.empty()) {
    ss << "trend: ok\n";
  } else {
    for (const auto& v : result.violations) ss << "trend violation: " << v << "\n";
  }
  return ss.str();
}

}  // namespace csad
