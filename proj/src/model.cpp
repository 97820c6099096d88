#include "arapflow/model.hpp"

#include <cmath>
#include <limits>

namespace arapflow {

namespace {

void check_dims(int width, int height) {
  if (width <= 0 || height <= 0) {
    throw ValidationError("raster dimensions must be positive, got " +
                          std::to_string(width) + "x" + std::to_string(height));
  }
  constexpr auto kMaxPixels = std::int64_t{1} << 31;
  if (std::int64_t{width} * height >= kMaxPixels) {
    throw ValidationError("raster dimensions overflow: " + std::to_string(width) +
                          "x" + std::to_string(height));
  }
}

}  // namespace

Image::Image(int width, int height, int channels, Plane<float> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
  check_dims(width, height);
  if (channels != 3 && channels != 4) {
    throw ValidationError("image must have 3 or 4 channels, got " +
                          std::to_string(channels));
  }
  if (data_.rows() != height || data_.cols() != std::int64_t{width} * channels) {
    throw ValidationError("image data length does not match width*height*channels");
  }
  // Negated comparison also rejects NaN.
  if (!((data_ >= 0.0f) && (data_ <= 1.0f)).all()) {
    throw ValidationError("image intensities must be finite and within [0,1]");
  }
}

Image::Image(int width, int height, int channels, std::vector<float> data)
    : Image(width, height, channels, [&] {
        if (width <= 0 || height <= 0 || channels <= 0 ||
            data.size() != static_cast<std::size_t>(width) * height * channels) {
          throw ValidationError("image data length does not match width*height*channels");
        }
        return Plane<float>(Eigen::Map<Plane<float>>(data.data(), height,
                                                     std::int64_t{width} * channels));
      }()) {}

Image Image::filled(int width, int height, int channels, float value) {
  check_dims(width, height);
  return Image(width, height, channels,
               Plane<float>::Constant(height, std::int64_t{width} * channels, value));
}

Image Image::to_rgb() const {
  if (channels_ == 3) return *this;
  Plane<float> out(height_, std::int64_t{width_} * 3);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      for (int c = 0; c < 3; ++c) out(y, x * 3 + c) = at(x, y, c);
    }
  }
  return Image(width_, height_, 3, std::move(out));
}

Image Image::to_rgba() const {
  if (channels_ == 4) return *this;
  Plane<float> out(height_, std::int64_t{width_} * 4);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      for (int c = 0; c < 3; ++c) out(y, x * 4 + c) = at(x, y, c);
      out(y, x * 4 + 3) = 1.0f;
    }
  }
  return Image(width_, height_, 4, std::move(out));
}

Mask::Mask(int width, int height, bool value) {
  check_dims(width, height);
  bits_ = Plane<bool>::Constant(height, width, value);
}

Mask::Mask(Plane<bool> bits) : bits_(std::move(bits)) {
  check_dims(static_cast<int>(bits_.cols()), static_cast<int>(bits_.rows()));
}

Box mask_bounding_box(const Mask& mask) {
  int min_x = std::numeric_limits<int>::max();
  int min_y = std::numeric_limits<int>::max();
  int max_x = -1;
  int max_y = -1;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask(x, y)) continue;
      min_x = std::min(min_x, x);
      min_y = std::min(min_y, y);
      max_x = std::max(max_x, x);
      max_y = std::max(max_y, y);
    }
  }
  if (max_x < 0) throw ValidationError("mask has no true bits");
  return Box{Vec2i(min_x, min_y), max_x - min_x + 1, max_y - min_y + 1};
}

FlowField::FlowField(Plane<float> u, Plane<float> v, Plane<bool> valid)
    : u_(std::move(u)), v_(std::move(v)), valid_(std::move(valid)) {
  check_dims(static_cast<int>(u_.cols()), static_cast<int>(u_.rows()));
  if (v_.rows() != u_.rows() || v_.cols() != u_.cols() ||
      valid_.rows() != u_.rows() || valid_.cols() != u_.cols()) {
    throw ValidationError("flow components and validity mask differ in size");
  }
  for (Eigen::Index i = 0; i < u_.size(); ++i) {
    if (valid_(i) && !(std::isfinite(u_(i)) && std::isfinite(v_(i)))) {
      throw ValidationError("flow must be finite wherever it is valid");
    }
  }
}

FlowField new_flow_field(int width, int height) {
  check_dims(width, height);
  return FlowField(Plane<float>::Zero(height, width), Plane<float>::Zero(height, width),
                   Plane<bool>::Constant(height, width, true));
}

}  // namespace arapflow
