#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace arapflow {

/// Raised when an input violates a documented precondition or a type
/// invariant. The CLI maps it to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised on file-system and codec failures. The CLI maps it to exit code 1.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Row-major raster storage shared by every per-pixel type. Row index is y.
template <typename Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;

using Vec2d = Vec2<double>;
using Vec2i = Vec2<int>;

/// H x W raster of intensities in [0,1], 3 (RGB) or 4 (RGBA) channels,
/// stored interleaved: row y holds W*C values.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, Plane<float> data);
  Image(int width, int height, int channels, std::vector<float> data);

  static Image filled(int width, int height, int channels, float value);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool has_alpha() const { return channels_ == 4; }
  bool empty() const { return width_ == 0; }

  float at(int x, int y, int c) const { return data_(y, x * channels_ + c); }
  const Plane<float>& data() const { return data_; }

  /// Copy of the first three channels, opaque alpha appended when requested.
  Image to_rgb() const;
  Image to_rgba() const;

  friend bool operator==(const Image& a, const Image& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ &&
           a.channels_ == b.channels_ && (a.data_ == b.data_).all();
  }

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  Plane<float> data_;
};

/// H x W binary raster; true marks the object of interest.
class Mask {
 public:
  Mask() = default;
  Mask(int width, int height, bool value = false);
  explicit Mask(Plane<bool> bits);

  int width() const { return static_cast<int>(bits_.cols()); }
  int height() const { return static_cast<int>(bits_.rows()); }
  bool empty() const { return bits_.size() == 0; }

  bool operator()(int x, int y) const { return bits_(y, x); }
  bool& operator()(int x, int y) { return bits_(y, x); }
  const Plane<bool>& bits() const { return bits_; }

  std::int64_t count() const { return bits_.count(); }
  bool any() const { return bits_.any(); }
  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width() && y < height();
  }

  friend bool operator==(const Mask& a, const Mask& b) {
    return a.width() == b.width() && a.height() == b.height() &&
           (a.bits_ == b.bits_).all();
  }

 private:
  Plane<bool> bits_;
};

struct Box {
  Vec2i origin = Vec2i::Zero();
  int width = 0;
  int height = 0;

  friend bool operator==(const Box&, const Box&) = default;
};

/// Tightest axis-aligned box holding every true bit. Throws on an empty mask.
Box mask_bounding_box(const Mask& mask);

/// Point correspondence between frame t and frame t+delta, in pixel
/// coordinates with the origin at the top-left pixel center.
struct Match {
  Vec2d src = Vec2d::Zero();
  Vec2d dst = Vec2d::Zero();
  double score = 1.0;

  friend bool operator==(const Match&, const Match&) = default;
};

struct Dims {
  int width = 0;
  int height = 0;

  bool contains(const Vec2d& p) const {
    return p.x() >= -0.5 && p.y() >= -0.5 && p.x() < width - 0.5 &&
           p.y() < height - 0.5;
  }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct MatchSet {
  std::vector<Match> matches;
  Dims src_dims;
  Dims dst_dims;

  std::size_t size() const { return matches.size(); }
  bool empty() const { return matches.empty(); }
};

/// Rotation by a single angle; orthogonal with determinant +1 by
/// construction.
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 2> rotation(Scalar theta) {
  using std::cos;
  using std::sin;
  Eigen::Matrix<Scalar, 2, 2> r;
  r << cos(theta), -sin(theta), sin(theta), cos(theta);
  return r;
}

struct RotationState {
  double theta = 0.0;
  Eigen::Matrix2d matrix() const { return rotation(theta); }
};

/// Dense 2-D displacement field with a per-pixel validity mask. Components
/// of invalid pixels are kept as stored (e.g. a file's sentinel) but carry no
/// meaning; equality ignores them.
class FlowField {
 public:
  FlowField() = default;
  FlowField(Plane<float> u, Plane<float> v, Plane<bool> valid);

  int width() const { return static_cast<int>(u_.cols()); }
  int height() const { return static_cast<int>(u_.rows()); }

  float u(int x, int y) const { return u_(y, x); }
  float v(int x, int y) const { return v_(y, x); }
  bool valid(int x, int y) const { return valid_(y, x); }

  const Plane<float>& u() const { return u_; }
  const Plane<float>& v() const { return v_; }
  const Plane<bool>& valid() const { return valid_; }

  friend bool operator==(const FlowField& a, const FlowField& b) {
    return a.width() == b.width() && a.height() == b.height() &&
           (a.valid_ == b.valid_).all() && ((a.u_ == b.u_) || !a.valid_).all() &&
           ((a.v_ == b.v_) || !a.valid_).all();
  }

 private:
  Plane<float> u_;
  Plane<float> v_;
  Plane<bool> valid_;
};

/// All-zero, all-valid field. Throws on zero or overflowing dimensions.
FlowField new_flow_field(int width, int height);

/// One generated sample: both composited frames, the exact flow between
/// them, and the object footprint in frame1.
struct Triple {
  Image frame1;
  Image frame2;
  FlowField flow;
  Mask object_mask;
};

}  // namespace arapflow
