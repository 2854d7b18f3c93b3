#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "csad/config.hpp"
#include "csad/net.hpp"
#include "csad/synth.hpp"

namespace csad {

struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<TrainSample> train;
  std::vector<TrainSample> val;
};

/// Loads every sample listed in the manifest, split by its train flag.
LoadedDataset load_dataset(const std::filesystem::path& root);

/// Samples of one cross-validation fold, in index order.
std::vector<TrainSample> load_fold(const std::filesystem::path& root, std::size_t fold);

/// One line-delimited JSON record per epoch.
std::string epoch_record_json(const EpochRecord& rec);

/// A named network variant. Rows sharing (fusion, scheme) are trained once.
struct AblationRow {
  std::string name;
  Fusion fusion;
  Scheme scheme;
};

/// Baseline, Baseline+SCFF, Baseline+CSAD, Proposed, then the NLC / PLC / ILC
/// schemes on the full model.
const std::vector<AblationRow>& ablation_rows();

struct AblationOptions {
  RunConfig base;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<std::string> only;      // row names; empty runs all seven
  std::filesystem::path out_dir;      // per-run logs and checkpoints; empty keeps nothing
};

struct VariantResult {
  std::string name;
  Fusion fusion;
  Scheme scheme;
  std::vector<double> val_dice;  // final-epoch validation Dice per seed
  double mean = 0.0;
  double stddev = 0.0;
};

struct AblationResult {
  std::vector<VariantResult> rows;
  std::vector<std::string> violations;
};

using RunLogger = std::function<void(const std::string& variant, std::uint64_t seed,
                                     const EpochRecord& rec)>;

AblationResult run_ablation(const LoadedDataset& data, const AblationOptions& opts,
                            const RunLogger& log = {});

/// Directional checks: Proposed >= Baseline and ILC >= NLC on mean
/// validation Dice. Pairs with a missing row are skipped.
std::vector<std::string> trend_violations(const std::vector<VariantResult>& rows);

std::string format_ablation_table(const AblationResult& result);

}  // namespace csad
