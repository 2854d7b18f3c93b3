#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csad {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for out-of-domain scalar parameters (non-positive sizes, etc.).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major double tensor. Owns its storage; every operation in this
/// header returns fresh storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-2 and rank-3 accessors, no bounds checks.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// A value together with the gradient of some scalar with respect to an input.
struct GradPair {
  Tensor value;
  Tensor grad;
};

void require_shape(const Tensor& t, const Shape& expected, const char* what);
void require_rank(const Tensor& t, std::size_t rank, const char* what);
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// Elementwise and scalar ops.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

/// d|x|/dx taken as sign(x), with 0 at x == 0.
Tensor abs_backward(const Tensor& input, const Tensor& upstream);
Tensor square_backward(const Tensor& input, const Tensor& upstream);

double sum(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& upstream);

Tensor sigmoid(const Tensor& input);
/// Takes the sigmoid *output* rather than its input.
Tensor sigmoid_backward(const Tensor& output, const Tensor& upstream);

// Shape manipulation (pure index remapping).
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& matrix);

/// [C,H,W] -> [H,W], summing over channels in channel order.
Tensor channel_sum(const Tensor& input);

/// Adds bias[c] to every position of channel c of a [C,H,W] tensor.
Tensor add_channel_bias(const Tensor& input, const Tensor& bias);
/// Gradient of add_channel_bias w.r.t. the bias: per-channel spatial sum.
Tensor channel_bias_backward(const Tensor& upstream);

/// Concatenate two [C,H,W] tensors along the channel axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Inverse of concat_channels: splits at channel `first_channels`.
std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t first_channels);

Tensor matmul(const Tensor& a, const Tensor& b);
struct MatmulGrads {
  Tensor a;
  Tensor b;
};
MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& upstream);

// Convolution (cross-correlation, no kernel flip).
Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride = 1,
              std::size_t padding = 0);
struct ConvGrads {
  Tensor input;
  Tensor kernels;
};
ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& upstream,
                          std::size_t stride = 1, std::size_t padding = 0);

/// Softmax over every entry of a [H,W] map.
Tensor spatial_softmax(const Tensor& map);
Tensor spatial_softmax_backward(const Tensor& map, const Tensor& upstream);

/// Bilinear resize of [C,H,W] with align_corners=false source sampling.
Tensor bilinear_upsample(const Tensor& input, std::size_t target_h, std::size_t target_w);
Tensor bilinear_upsample_backward(const Tensor& upstream, std::size_t source_h,
                                  std::size_t source_w);

/// 2x2 max pooling with stride 2 on [C,H,W]; odd trailing rows/cols are dropped.
Tensor maxpool2x2(const Tensor& input);
Tensor maxpool2x2_backward(const Tensor& input, const Tensor& upstream);

// RT1 portable tensor format.
void write_rt1(std::ostream& out, const Tensor& t);
Tensor read_rt1(std::istream& in);
void save_rt1(const std::string& path, const Tensor& t);
Tensor load_rt1(const std::string& path);

}  // namespace csad
