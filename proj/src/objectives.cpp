#include "csad/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace csad {

SegMask::SegMask(std::size_t height, std::size_t width)
    : height_(height), width_(width), cells_(height * width, 0) {
  if (height == 0 || width == 0) throw ParameterError("SegMask: dimensions must be positive");
}

SegMask::SegMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> cells)
    : height_(height), width_(width), cells_(std::move(cells)) {
  if (height == 0 || width == 0) throw ParameterError("SegMask: dimensions must be positive");
  if (cells_.size() != height * width)
    throw ShapeError("SegMask: " + std::to_string(cells_.size()) + " cells for " +
                     std::to_string(height) + "x" + std::to_string(width));
  for (auto c : cells_)
    if (c > 1) throw ParameterError("SegMask: cell values must be 0 or 1");
}

SegMask SegMask::from_tensor(const Tensor& t) {
  std::size_t h = 0, w = 0;
  if (t.rank() == 2) {
    h = t.dim(0);
    w = t.dim(1);
  } else if (t.rank() == 3 && t.dim(0) == 1) {
    h = t.dim(1);
    w = t.dim(2);
  } else {
    throw ShapeError("SegMask: expected [H,W] or [1,H,W], got " + shape_to_string(t.shape()));
  }
  std::vector<std::uint8_t> cells(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == 1.0) {
      cells[i] = 1;
    } else if (t[i] != 0.0) {
      throw ParameterError("SegMask: non-binary value " + std::to_string(t[i]));
    }
  }
  return SegMask(h, w, std::move(cells));
}

Tensor SegMask::to_tensor() const {
  Tensor t({height_, width_});
  for (std::size_t i = 0; i < cells_.size(); ++i) t[i] = cells_[i];
  return t;
}

std::size_t SegMask::count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

SegProb::SegProb(Tensor grid) : grid_(std::move(grid)) {
  require_rank(grid_, 2, "SegProb");
  for (double v : grid_.data())
    if (!(v >= 0.0 && v <= 1.0))
      throw ParameterError("SegProb: value " + std::to_string(v) + " outside [0,1]");
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0)) throw ParameterError("loss.alpha must be >= 0");
  if (!(beta >= 0.0)) throw ParameterError("loss.beta must be >= 0");
  if (!(sigma > 0.0)) throw ParameterError("loss.sigma must be > 0");
  if (!(lambda > 0.0 && lambda < 1.0)) throw ParameterError("loss.lambda must lie in (0,1)");
}

namespace {

void require_match(const SegProb& pred, const SegMask& truth, const char* what) {
  if (pred.height() != truth.height() || pred.width() != truth.width())
    throw ShapeError(std::string(what) + ": prediction " + shape_to_string(pred.grid().shape()) +
                     " vs mask [" + std::to_string(truth.height()) + "," +
                     std::to_string(truth.width()) + "]");
}

constexpr double kProbClamp = 1e-7;

}  // namespace

LossValue dice_loss(const SegProb& pred, const SegMask& truth, double sigma) {
  require_match(pred, truth, "dice_loss");
  if (!(sigma > 0.0)) throw ParameterError("dice_loss: sigma must be > 0");
  const Tensor& p = pred.grid();
  const auto& y = truth.cells();
  double inter = 0.0, sum_p = 0.0, sum_y = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * y[i];
    sum_p += p[i];
    sum_y += y[i];
  }
  const double num = 2.0 * inter + sigma;
  const double den = sum_p + sum_y + sigma;
  LossValue out{1.0 - num / den, Tensor(p.shape())};
  for (std::size_t i = 0; i < p.size(); ++i)
    out.grad[i] = -(2.0 * y[i] * den - num) / (den * den);
  return out;
}

LossValue wbce_loss(const SegProb& pred, const SegMask& truth, double lambda) {
  require_match(pred, truth, "wbce_loss");
  const Tensor& p = pred.grid();
  const auto& y = truth.cells();
  const double n = static_cast<double>(p.size());
  LossValue out{0.0, Tensor(p.shape())};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double raw = p[i];
    const double q = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
    const double yi = y[i];
    out.value += -lambda * yi * std::log(q) - (1.0 - lambda) * (1.0 - yi) * std::log(1.0 - q);
    if (raw > kProbClamp && raw < 1.0 - kProbClamp)
      out.grad[i] = (-lambda * yi / q + (1.0 - lambda) * (1.0 - yi) / (1.0 - q)) / n;
  }
  out.value /= n;
  return out;
}

Tensor wbce_logit_grad(const SegProb& pred, const SegMask& truth, double lambda) {
  require_match(pred, truth, "wbce_logit_grad");
  const Tensor& p = pred.grid();
  const auto& y = truth.cells();
  const double n = static_cast<double>(p.size());
  Tensor g(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double yi = y[i];
    g[i] = (-lambda * yi * (1.0 - p[i]) + (1.0 - lambda) * (1.0 - yi) * p[i]) / n;
  }
  return g;
}

LossBreakdown combine_losses(double dice, double wbce, double csad, const LossConfig& cfg) {
  return {dice, wbce, csad, dice + cfg.beta * wbce + cfg.alpha * csad};
}

LossBreakdown total_loss(const SegProb& pred, const SegMask& truth, double l_csad_value,
                         const LossConfig& cfg) {
  return combine_losses(dice_loss(pred, truth, cfg.sigma).value,
                        wbce_loss(pred, truth, cfg.lambda).value, l_csad_value, cfg);
}

SegMask threshold_mask(const SegProb& pred, double threshold) {
  SegMask mask(pred.height(), pred.width());
  const Tensor& p = pred.grid();
  for (std::size_t y = 0; y < pred.height(); ++y)
    for (std::size_t x = 0; x < pred.width(); ++x) mask(y, x) = p.at(y, x) >= threshold ? 1 : 0;
  return mask;
}

SampleMetrics evaluate(const SegMask& pred, const SegMask& truth) {
  if (pred.height() != truth.height() || pred.width() != truth.width())
    throw ShapeError("evaluate: mask dimensions differ");
  std::size_t inter = 0, size_a = 0, size_b = 0;
  const auto& a = pred.cells();
  const auto& b = truth.cells();
  for (std::size_t i = 0; i < a.size(); ++i) {
    size_a += a[i];
    size_b += b[i];
    inter += a[i] & b[i];
  }
  const std::size_t uni = size_a + size_b - inter;
  const double ia = static_cast<double>(inter);
  const double sa = static_cast<double>(size_a);
  const double sb = static_cast<double>(size_b);

  SampleMetrics m;
  m.dice = (size_a + size_b == 0) ? 100.0 : 200.0 * ia / (sa + sb);
  m.voe = uni == 0 ? 0.0 : 100.0 * (1.0 - ia / static_cast<double>(uni));
  if (size_a == 0)
    m.rvd = size_b == 0 ? 0.0 : 100.0;
  else
    m.rvd = 100.0 * (sb - sa) / sa;
  // TP = inter, FN = |B| - inter, FP = |A| - inter.
  m.sensitivity = size_b == 0 ? (size_a == 0 ? 100.0 : 0.0) : 100.0 * ia / sb;
  m.precision = size_a == 0 ? (size_b == 0 ? 100.0 : 0.0) : 100.0 * ia / sa;
  return m;
}

namespace {

template <class Get>
void mean_std(const std::vector<SampleMetrics>& xs, Get get, double& mean, double& sd) {
  mean = 0.0;
  sd = 0.0;
  if (xs.empty()) return;
  for (const auto& x : xs) mean += get(x);
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return;
  double ss = 0.0;
  for (const auto& x : xs) ss += (get(x) - mean) * (get(x) - mean);
  sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

struct Field {
  const char* name;
  double SampleMetrics::*member;
};

constexpr Field kFields[] = {{"dice", &SampleMetrics::dice},
                             {"sensitivity", &SampleMetrics::sensitivity},
                             {"precision", &SampleMetrics::precision},
                             {"voe", &SampleMetrics::voe},
                             {"rvd", &SampleMetrics::rvd}};

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

MetricsReport aggregate(std::vector<SampleMetrics> per_sample) {
  MetricsReport r;
  r.per_sample = std::move(per_sample);
  for (const auto& f : kFields)
    mean_std(
        r.per_sample, [&](const SampleMetrics& s) { return s.*(f.member); }, r.mean.*(f.member),
        r.stddev.*(f.member));
  return r;
}

std::string format_mean_std(double mean, double stddev, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f \xc2\xb1 %.*f", decimals, mean, decimals, stddev);
  return buf;
}

void write_report(std::ostream& out, const MetricsReport& report) {
  out << "[summary]\n";
  out << "samples = " << report.per_sample.size() << "\n";
  for (const auto& f : kFields)
    out << f.name << " = " << format_mean_std(report.mean.*(f.member), report.stddev.*(f.member))
        << "\n";
  out << "\n[samples]\n";
  for (std::size_t i = 0; i < report.per_sample.size(); ++i) {
    out << i << " =";
    for (const auto& f : kFields) out << " " << f.name << " " << exact(report.per_sample[i].*(f.member));
    out << "\n";
  }
}

namespace {

std::size_t parse_count(const std::string& text, const std::string& line) {
  std::size_t used = 0;
  std::size_t v = 0;
  try {
    v = std::stoul(text, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != text.size())
    throw std::runtime_error("metrics report: expected a count in '" + line + "'");
  return v;
}

}  // namespace

MetricsReport read_report(std::istream& in) {
  std::string line;
  std::string section;
  std::size_t declared = 0;
  bool have_declared = false;
  std::vector<SampleMetrics> samples;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line;
      continue;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw std::runtime_error("metrics report: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 3);
    if (section == "[summary]") {
      if (key == "samples") {
        declared = parse_count(value, line);
        have_declared = true;
      }
    } else if (section == "[samples]") {
      if (parse_count(key, line) != samples.size())
        throw std::runtime_error("metrics report: sample records out of order at '" + line + "'");
      std::istringstream fields(value);
      SampleMetrics s;
      for (const auto& f : kFields) {
        std::string name;
        double v = 0.0;
        if (!(fields >> name >> v) || name != f.name)
          throw std::runtime_error("metrics report: bad sample record '" + line + "'");
        s.*(f.member) = v;
      }
      samples.push_back(s);
    } else {
      throw std::runtime_error("metrics report: record outside a section: '" + line + "'");
    }
  }
  if (!have_declared || declared != samples.size())
    throw std::runtime_error("metrics report: sample count does not match records");
  return aggregate(std::move(samples));
}

}  // namespace csad
