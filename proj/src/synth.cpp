#include "csad/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "csad/image_io.hpp"
#include "csad/rng.hpp"

namespace csad {

namespace {

struct Ellipse {
  double cy, cx, ry, rx, theta;

  bool contains(double y, double x) const {
    const double c = std::cos(theta), s = std::sin(theta);
    const double dy = y - cy, dx = x - cx;
    const double u = (c * dx + s * dy) / rx;
    const double v = (-s * dx + c * dy) / ry;
    return u * u + v * v <= 1.0;
  }
};

// A point uniformly inside `e` shrunk by `shrink`.
std::pair<double, double> point_inside(Pcg32& rng, const Ellipse& e, double shrink) {
  const double r = std::sqrt(rng.uniform()) * shrink;
  const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double u = r * std::cos(a) * e.rx, v = r * std::sin(a) * e.ry;
  const double c = std::cos(e.theta), s = std::sin(e.theta);
  return {e.cy + s * u + c * v, e.cx + c * u - s * v};
}

Ellipse small_blob(Pcg32& rng, const Ellipse& gland, double dim) {
  const auto [cy, cx] = point_inside(rng, gland, 0.6);
  const double lo = std::max(1.5, 0.08 * dim), hi = std::max(2.0, 0.15 * dim);
  return {cy, cx, rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(0.0, std::numbers::pi)};
}

struct LowFrequencyField {
  double base;
  double amp[3], fy[3], fx[3], phase[3];

  double at(double y, double x) const {
    double v = base;
    for (int k = 0; k < 3; ++k)
      v += amp[k] * std::cos(2.0 * std::numbers::pi * (fy[k] * y + fx[k] * x) + phase[k]);
    return v;
  }
};

LowFrequencyField draw_field(Pcg32& rng, double base, std::size_t h, std::size_t w) {
  LowFrequencyField f{};
  f.base = base;
  for (int k = 0; k < 3; ++k) {
    f.amp[k] = rng.uniform(0.02, 0.06);
    f.fy[k] = rng.uniform(0.3, 1.5) / static_cast<double>(h);
    f.fx[k] = rng.uniform(0.3, 1.5) / static_cast<double>(w);
    f.phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  return f;
}

constexpr double kLesionContrast = 0.22;
constexpr double kNoiseSigma = 0.03;

}  // namespace

PhantomSample generate(std::uint64_t seed, std::size_t height, std::size_t width) {
  if (height < 16 || width < 16) throw ParameterError("generate: height and width must be >= 16");
  Pcg32 rng(seed, rng_stream::kGenerate);
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  const double dim = std::min(h, w);

  const LowFrequencyField bg_t2w = draw_field(rng, 0.35, height, width);
  const LowFrequencyField bg_adc = draw_field(rng, 0.40, height, width);
  const Ellipse gland{(h - 1) / 2 + rng.uniform(-0.08, 0.08) * h,
                      (w - 1) / 2 + rng.uniform(-0.08, 0.08) * w,
                      rng.uniform(0.22, 0.32) * h,
                      rng.uniform(0.25, 0.35) * w,
                      rng.uniform(0.0, std::numbers::pi)};

  // Lesions, redrawn until the area constraint holds.
  SegMask mask(height, width);
  std::vector<Ellipse> lesions;
  for (int attempt = 0;; ++attempt) {
    lesions.clear();
    const std::uint32_t count = 1 + rng.below(3);
    for (std::uint32_t i = 0; i < count; ++i) lesions.push_back(small_blob(rng, gland, dim));
    std::size_t area = 0;
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        bool in = false;
        for (const auto& e : lesions) in = in || e.contains(static_cast<double>(y), static_cast<double>(x));
        mask(y, x) = in ? 1 : 0;
        area += in;
      }
    const double frac = static_cast<double>(area) / (h * w);
    if (frac >= kMinLesionFraction && frac <= kMaxLesionFraction) break;
    if (attempt > 1000) throw ParameterError("generate: cannot place lesions for this size");
  }

  // Decoys: same polarity as the lesion in one modality only, centred off-lesion.
  auto draw_decoys = [&]() {
    std::vector<Ellipse> out;
    const std::uint32_t count = 1 + rng.below(2);
    while (out.size() < count) {
      const Ellipse e = small_blob(rng, gland, dim);
      const auto cy = static_cast<std::size_t>(std::clamp(std::lround(e.cy), 0L, static_cast<long>(height) - 1));
      const auto cx = static_cast<std::size_t>(std::clamp(std::lround(e.cx), 0L, static_cast<long>(width) - 1));
      if (mask(cy, cx) == 0) out.push_back(e);
    }
    return out;
  };
  const std::vector<Ellipse> decoys_t2w = draw_decoys();
  const std::vector<Ellipse> decoys_adc = draw_decoys();
  const double gland_t2w = rng.uniform(0.18, 0.26);
  const double gland_adc = rng.uniform(0.08, 0.14);

  PhantomSample s{Tensor({1, height, width}), Tensor({1, height, width}), mask, seed};
  const auto inside_any = [](const std::vector<Ellipse>& es, double y, double x) {
    return std::any_of(es.begin(), es.end(), [&](const Ellipse& e) { return e.contains(y, x); });
  };
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double fy = static_cast<double>(y), fx = static_cast<double>(x);
      double t = bg_t2w.at(fy, fx);
      double a = bg_adc.at(fy, fx);
      if (gland.contains(fy, fx)) {
        t += gland_t2w;
        a += gland_adc;
      }
      if (mask(y, x) || inside_any(decoys_t2w, fy, fx)) t -= kLesionContrast;
      if (mask(y, x) || inside_any(decoys_adc, fy, fx)) a += kLesionContrast;
      t += kNoiseSigma * rng.normal();
      a += kNoiseSigma * rng.normal();
      s.t2w.at(0, y, x) = std::clamp(t, 0.0, 1.0);
      s.adc.at(0, y, x) = std::clamp(a, 0.0, 1.0);
    }
  return s;
}

// ---------------------------------------------------------------------------
// Augmentation

AugmentDraw draw_augmentation(std::uint64_t seed, std::size_t height, std::size_t width,
                              const AugmentParams& p) {
  Pcg32 rng(seed, rng_stream::kAugment);
  AugmentDraw d;
  d.rotate = rng.chance(p.probability);
  const double angle = rng.uniform(-p.max_rotation_deg, p.max_rotation_deg);
  d.zoom = rng.chance(p.probability);
  const double zoom = rng.uniform(p.min_zoom, p.max_zoom);
  d.shift = rng.chance(p.probability);
  const double sy = rng.uniform(-p.max_shift_fraction, p.max_shift_fraction) * static_cast<double>(height);
  const double sx = rng.uniform(-p.max_shift_fraction, p.max_shift_fraction) * static_cast<double>(width);
  d.blur = rng.chance(p.probability);
  const double sigma = rng.uniform(p.min_blur_sigma, p.max_blur_sigma);
  if (d.rotate) d.angle_deg = angle;
  if (d.zoom) d.zoom_factor = zoom;
  if (d.shift) {
    d.shift_y = sy;
    d.shift_x = sx;
  }
  if (d.blur) d.blur_sigma = sigma;
  return d;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("gaussian_kernel: sigma must be > 0");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : k) v /= total;
  return k;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  require_rank(image, 3, "gaussian_blur");
  const auto k = gaussian_kernel(sigma);
  const long r = static_cast<long>(k.size() / 2);
  const long h = static_cast<long>(image.dim(1)), w = static_cast<long>(image.dim(2));
  Tensor tmp(image.shape()), out(image.shape());
  for (std::size_t c = 0; c < image.dim(0); ++c) {
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long i = -r; i <= r; ++i)
          acc += k[static_cast<std::size_t>(i + r)] *
                 image.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(std::clamp(x + i, 0L, w - 1)));
        tmp.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc;
      }
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long i = -r; i <= r; ++i)
          acc += k[static_cast<std::size_t>(i + r)] *
                 tmp.at(c, static_cast<std::size_t>(std::clamp(y + i, 0L, h - 1)), static_cast<std::size_t>(x));
        out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc;
      }
  }
  return out;
}

namespace {

double sample_bilinear(const Tensor& img, double y, double x) {
  const double h = static_cast<double>(img.dim(1)), w = static_cast<double>(img.dim(2));
  y = std::clamp(y, 0.0, h - 1);
  x = std::clamp(x, 0.0, w - 1);
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, img.dim(1) - 1);
  const std::size_t x1 = std::min(x0 + 1, img.dim(2) - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  const double top = img.at(0, y0, x0) * (1 - fx) + img.at(0, y0, x1) * fx;
  const double bot = img.at(0, y1, x0) * (1 - fx) + img.at(0, y1, x1) * fx;
  return std::clamp(top * (1 - fy) + bot * fy, 0.0, 1.0);
}

}  // namespace

PhantomSample apply_augmentation(const PhantomSample& sample, const AugmentDraw& d) {
  PhantomSample out = sample;
  if (d.geometric()) {
    const std::size_t height = sample.mask.height(), width = sample.mask.width();
    const double cy = (static_cast<double>(height) - 1) / 2, cx = (static_cast<double>(width) - 1) / 2;
    const double a = d.angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(a), s = std::sin(a);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        // Inverse of: p' = R(zoom * p) + shift, about the image centre.
        const double py = static_cast<double>(y) - cy - d.shift_y;
        const double px = static_cast<double>(x) - cx - d.shift_x;
        const double sy = (-s * px + c * py) / d.zoom_factor + cy;
        const double sx = (c * px + s * py) / d.zoom_factor + cx;
        out.t2w.at(0, y, x) = sample_bilinear(sample.t2w, sy, sx);
        out.adc.at(0, y, x) = sample_bilinear(sample.adc, sy, sx);
        const long ny = std::lround(sy), nx = std::lround(sx);
        const bool inside = ny >= 0 && nx >= 0 && ny < static_cast<long>(height) && nx < static_cast<long>(width);
        out.mask(y, x) = inside ? sample.mask(static_cast<std::size_t>(ny), static_cast<std::size_t>(nx)) : 0;
      }
  }
  if (d.blur) {
    out.t2w = gaussian_blur(out.t2w, d.blur_sigma);
    out.adc = gaussian_blur(out.adc, d.blur_sigma);
  }
  return out;
}

PhantomSample augment(const PhantomSample& sample, std::uint64_t seed, const AugmentParams& params) {
  return apply_augmentation(sample,
                            draw_augmentation(seed, sample.mask.height(), sample.mask.width(), params));
}

// ---------------------------------------------------------------------------
// Persisted datasets

std::size_t split_train_count(std::size_t n, double train_percent) {
  if (!(train_percent >= 0.0 && train_percent <= 100.0))
    throw ParameterError("split: train percentage must lie in [0,100]");
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_percent / 100.0 + 1e-9));
}

std::size_t DatasetManifest::train_count() const { return split_train_count(n, train_percent); }

std::string hash_file_hex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(ss.str())));
  return buf;
}

namespace {

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["format"] = "csad-phantom-dataset/1";
  j["n"] = m.n;
  j["height"] = m.height;
  j["width"] = m.width;
  j["seed"] = m.seed;
  j["folds"] = m.folds;
  j["train_percent"] = m.train_percent;
  auto& arr = j["samples"] = nlohmann::json::array();
  for (const auto& e : m.samples)
    arr.push_back({{"index", e.index},
                   {"dir", e.dir},
                   {"seed", e.seed},
                   {"fold", e.fold},
                   {"split", e.train ? "train" : "val"},
                   {"hashes", {{"t2w.rt1", e.t2w_hash}, {"adc.rt1", e.adc_hash}, {"mask.pgm", e.mask_hash}}}});
  return j;
}

}  // namespace

DatasetManifest make_dataset(const std::filesystem::path& root, std::size_t n, std::size_t height,
                             std::size_t width, std::uint64_t seed, double train_percent,
                             std::size_t folds) {
  namespace fs = std::filesystem;
  if (n < 10) throw ParameterError("make_dataset: n must be >= 10");
  if (folds < 2 || folds > n) throw ParameterError("make_dataset: folds must lie in [2, n]");
  DatasetManifest m{n, height, width, seed, folds, train_percent, {}};
  const std::size_t n_train = m.train_count();

  std::error_code ec;
  fs::create_directories(root / "folds", ec);
  if (ec) throw DataError("cannot create '" + (root / "folds").string() + "': " + ec.message());

  Pcg32 seeds(seed, rng_stream::kDatasetSeeds);
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint64_t hi = seeds.next_u32();
    const std::uint64_t sample_seed = (hi << 32) | seeds.next_u32();
    const PhantomSample s = generate(sample_seed, height, width);
    DatasetEntry e;
    e.index = k;
    e.dir = "sample_" + std::to_string(k);
    e.seed = sample_seed;
    e.fold = k % folds;
    e.train = k < n_train;
    const fs::path dir = root / e.dir;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create '" + dir.string() + "': " + ec.message());
    try {
      save_rt1((dir / "t2w.rt1").string(), s.t2w);
      save_rt1((dir / "adc.rt1").string(), s.adc);
      write_mask_pgm(dir / "mask.pgm", s.mask);
    } catch (const std::runtime_error& err) {
      throw DataError(err.what());
    }
    e.t2w_hash = hash_file_hex(dir / "t2w.rt1");
    e.adc_hash = hash_file_hex(dir / "adc.rt1");
    e.mask_hash = hash_file_hex(dir / "mask.pgm");
    m.samples.push_back(std::move(e));
  }

  for (std::size_t f = 0; f < folds; ++f) {
    const fs::path p = root / "folds" / ("fold_" + std::to_string(f) + ".txt");
    std::ofstream out(p);
    if (!out) throw DataError("cannot write '" + p.string() + "'");
    for (const auto& e : m.samples)
      if (e.fold == f) out << e.index << "\n";
  }
  const fs::path mp = root / "manifest.json";
  std::ofstream out(mp);
  if (!out) throw DataError("cannot write '" + mp.string() + "'");
  out << to_json(m).dump(2) << "\n";
  if (!out) throw DataError("write failed for '" + mp.string() + "'");
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& root) {
  const auto path = root / "manifest.json";
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset manifest '" + path.string() + "'");
  try {
    const auto j = nlohmann::json::parse(in);
    DatasetManifest m;
    m.n = j.at("n").get<std::size_t>();
    m.height = j.at("height").get<std::size_t>();
    m.width = j.at("width").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.folds = j.at("folds").get<std::size_t>();
    m.train_percent = j.at("train_percent").get<double>();
    for (const auto& s : j.at("samples")) {
      DatasetEntry e;
      e.index = s.at("index").get<std::size_t>();
      e.dir = s.at("dir").get<std::string>();
      e.seed = s.at("seed").get<std::uint64_t>();
      e.fold = s.at("fold").get<std::size_t>();
      e.train = s.at("split").get<std::string>() == "train";
      const auto& h = s.at("hashes");
      e.t2w_hash = h.at("t2w.rt1").get<std::string>();
      e.adc_hash = h.at("adc.rt1").get<std::string>();
      e.mask_hash = h.at("mask.pgm").get<std::string>();
      m.samples.push_back(std::move(e));
    }
    if (m.samples.size() != m.n)
      throw DataError("manifest lists " + std::to_string(m.samples.size()) + " samples but n = " +
                      std::to_string(m.n));
    return m;
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed manifest (" + e.what() + ")");
  }
}

PhantomSample load_sample(const std::filesystem::path& root, const DatasetEntry& entry) {
  const auto dir = root / entry.dir;
  try {
    const auto verify_hash = [&](const char* file, const std::string& expected) {
      if (!expected.empty() && hash_file_hex(dir / file) != expected)
        throw DataError(std::string(file) + " does not match the manifest hash");
    };
    verify_hash("t2w.rt1", entry.t2w_hash);
    verify_hash("adc.rt1", entry.adc_hash);
    verify_hash("mask.pgm", entry.mask_hash);
    PhantomSample s;
    s.t2w = load_rt1((dir / "t2w.rt1").string());
    s.adc = load_rt1((dir / "adc.rt1").string());
    s.mask = read_mask_pgm(dir / "mask.pgm");
    s.seed = entry.seed;
    const Shape expected{1, s.mask.height(), s.mask.width()};
    if (s.t2w.shape() != expected || s.adc.shape() != expected)
      throw DataError("image shapes " + shape_to_string(s.t2w.shape()) + " / " +
                      shape_to_string(s.adc.shape()) + " do not match mask");
    return s;
  } catch (const DataError& e) {
    throw DataError(dir.string() + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
}

}  // namespace csad
