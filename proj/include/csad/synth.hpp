#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "csad/objectives.hpp"
#include "csad/tensor.hpp"

namespace csad {

/// One registered image pair with its lesion mask.
struct PhantomSample {
  Tensor t2w;  // [1,H,W], values in [0,1]
  Tensor adc;  // [1,H,W], values in [0,1]
  SegMask mask;
  std::uint64_t seed = 0;
};

/// Lesion area bounds as a fraction of the image.
inline constexpr double kMinLesionFraction = 0.005;
inline constexpr double kMaxLesionFraction = 0.15;

/// Synthetic paired-modality phantom. A smooth background, an elliptical gland
/// and 1-3 elliptical lesions inside it. Lesions are dark on T2W and bright on
/// ADC; each modality also carries decoy blobs of the same polarity that do not
/// appear in the other, so only the conjunction of both images locates the lesion.
PhantomSample generate(std::uint64_t seed, std::size_t height, std::size_t width);

struct AugmentParams {
  double probability = 0.5;
  double max_rotation_deg = 15.0;
  double min_zoom = 0.9;
  double max_zoom = 1.1;
  double max_shift_fraction = 0.10;
  double min_blur_sigma = 0.5;
  double max_blur_sigma = 1.5;
};

/// Which transforms a given augmentation seed selected, and their magnitudes.
struct AugmentDraw {
  bool rotate = false, zoom = false, shift = false, blur = false;
  double angle_deg = 0.0;
  double zoom_factor = 1.0;
  double shift_y = 0.0, shift_x = 0.0;  // pixels
  double blur_sigma = 0.0;

  bool geometric() const { return rotate || zoom || shift; }
};

AugmentDraw draw_augmentation(std::uint64_t seed, std::size_t height, std::size_t width,
                              const AugmentParams& params = {});

/// Applies one shared geometric transform to both images (bilinear) and the mask
/// (nearest neighbour), then optionally blurs the images.
PhantomSample apply_augmentation(const PhantomSample& sample, const AugmentDraw& draw);

PhantomSample augment(const PhantomSample& sample, std::uint64_t seed,
                      const AugmentParams& params = {});

/// Separable Gaussian blur of every channel of a [C,H,W] tensor; radius ceil(3 sigma),
/// replicated borders.
Tensor gaussian_blur(const Tensor& image, double sigma);
std::vector<double> gaussian_kernel(double sigma);

// ---------------------------------------------------------------------------
// Persisted datasets.

struct DatasetEntry {
  std::size_t index = 0;
  std::string dir;  // relative to the dataset root
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  bool train = true;
  std::string t2w_hash, adc_hash, mask_hash;  // FNV-1a 64 of file bytes, hex
};

struct DatasetManifest {
  std::size_t n = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::uint64_t seed = 0;
  std::size_t folds = 5;
  double train_percent = 80.0;
  std::vector<DatasetEntry> samples;

  std::size_t train_count() const;
};

/// Raised for unreadable or inconsistent dataset files; the message names the path.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Number of training samples for an n-sample split (floor of the percentage).
std::size_t split_train_count(std::size_t n, double train_percent);

/// Writes <root>/sample_<k>/{t2w.rt1, adc.rt1, mask.pgm}, manifest.json and
/// folds/fold_<f>.txt (sample indices, one per line).
DatasetManifest make_dataset(const std::filesystem::path& root, std::size_t n, std::size_t height,
                             std::size_t width, std::uint64_t seed, double train_percent = 80.0,
                             std::size_t folds = 5);

DatasetManifest load_manifest(const std::filesystem::path& root);
PhantomSample load_sample(const std::filesystem::path& root, const DatasetEntry& entry);

std::string hash_file_hex(const std::filesystem::path& path);

}  // namespace csad
