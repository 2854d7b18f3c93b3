#include "csad/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

namespace csad {

namespace {

void write_p5(const std::filesystem::path& path, std::size_t h, std::size_t w,
              const std::vector<unsigned char>& px) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  char c = 0;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

void write_pgm_normalized(const std::filesystem::path& path, const Tensor& image) {
  std::size_t h = 0, w = 0;
  if (image.rank() == 2) {
    h = image.dim(0);
    w = image.dim(1);
  } else if (image.rank() == 3 && image.dim(0) == 1) {
    h = image.dim(1);
    w = image.dim(2);
  } else {
    throw ShapeError("write_pgm_normalized: expected [H,W] or [1,H,W], got " +
                     shape_to_string(image.shape()));
  }
  const auto [lo_it, hi_it] = std::minmax_element(image.data().begin(), image.data().end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  std::vector<unsigned char> px(image.size(), 0);
  if (span > 0.0)
    for (std::size_t i = 0; i < image.size(); ++i)
      px[i] = static_cast<unsigned char>(std::lround((image[i] - lo) / span * 255.0));
  write_p5(path, h, w, px);
}

void write_mask_pgm(const std::filesystem::path& path, const SegMask& mask) {
  std::vector<unsigned char> px(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) px[i] = mask.cells()[i] ? 255 : 0;
  write_p5(path, mask.height(), mask.width(), px);
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  if (header_token(in) != "P5") throw std::runtime_error(path.string() + ": not a binary PGM (P5)");
  GrayImage img;
  try {
    img.width = std::stoul(header_token(in));
    img.height = std::stoul(header_token(in));
    if (std::stoul(header_token(in)) != 255)
      throw std::runtime_error("maxval other than 255");
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": bad PGM header (" + e.what() + ")");
  }
  if (img.width == 0 || img.height == 0) throw std::runtime_error(path.string() + ": empty image");
  img.pixels.resize(img.width * img.height);
  if (!in.read(reinterpret_cast<char*>(img.pixels.data()),
               static_cast<std::streamsize>(img.pixels.size())))
    throw std::runtime_error(path.string() + ": truncated pixel data");
  return img;
}

SegMask read_mask_pgm(const std::filesystem::path& path) {
  const GrayImage img = read_pgm(path);
  std::vector<std::uint8_t> cells(img.pixels.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (img.pixels[i] == 255) {
      cells[i] = 1;
    } else if (img.pixels[i] != 0) {
      throw std::runtime_error(path.string() + ": mask pixel value " +
                               std::to_string(img.pixels[i]) + " is neither 0 nor 255");
    }
  }
  return SegMask(img.height, img.width, std::move(cells));
}

}  // namespace csad
