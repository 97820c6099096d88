#include "arapflow/model.hpp"
#include "fixtures.hpp"

#include <doctest.h>
#include <Eigen/LU>

#include <cmath>
#include <limits>
#include <random>

using namespace arapflow;

TEST_CASE("new_flow_field is zero and valid") {
  const FlowField f = new_flow_field(2, 2);
  CHECK(f.width() == 2);
  CHECK(f.height() == 2);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      CHECK(f.u(x, y) == 0.0f);
      CHECK(f.v(x, y) == 0.0f);
      CHECK(f.valid(x, y));
    }
  }
  const FlowField one = new_flow_field(1, 1);
  CHECK(one.valid(0, 0));
  CHECK(one.u(0, 0) == 0.0f);
}

TEST_CASE("new_flow_field rejects bad dimensions") {
  CHECK_THROWS_AS(new_flow_field(0, 5), ValidationError);
  CHECK_THROWS_AS(new_flow_field(5, -1), ValidationError);
  CHECK_THROWS_AS(new_flow_field(std::numeric_limits<int>::max(), std::numeric_limits<int>::max()),
                  ValidationError);
}

TEST_CASE("FlowField requires finite values where valid") {
  Plane<float> u = Plane<float>::Zero(1, 2);
  Plane<float> v = Plane<float>::Zero(1, 2);
  Plane<bool> valid = Plane<bool>::Constant(1, 2, true);
  u(0, 1) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(FlowField(u, v, valid), ValidationError);
  valid(0, 1) = false;
  CHECK_NOTHROW(FlowField(u, v, valid));
  CHECK_THROWS_AS(FlowField(u, Plane<float>::Zero(2, 2), valid), ValidationError);
}

TEST_CASE("FlowField equality ignores invalid components") {
  Plane<bool> valid(1, 2);
  valid << true, false;
  Plane<float> a(1, 2), b(1, 2);
  a << 1.0f, 5.0f;
  b << 1.0f, 1e10f;
  CHECK(FlowField(a, a, valid) == FlowField(b, b, valid));
  b(0, 0) = 2.0f;
  CHECK_FALSE(FlowField(a, a, valid) == FlowField(b, b, valid));
}

TEST_CASE("Image validates its invariants") {
  CHECK_NOTHROW(Image(2, 1, 3, std::vector<float>(6, 0.5f)));
  CHECK_THROWS_AS(Image(2, 1, 3, std::vector<float>(5, 0.5f)), ValidationError);
  CHECK_THROWS_AS(Image(2, 1, 2, std::vector<float>(4, 0.5f)), ValidationError);
  CHECK_THROWS_AS(Image(1, 1, 3, std::vector<float>{0.0f, 1.5f, 0.0f}), ValidationError);
  CHECK_THROWS_AS(Image(1, 1, 3, std::vector<float>{0.0f, -0.1f, 0.0f}), ValidationError);
  CHECK_THROWS_AS(Image(1, 1, 3, std::vector<float>{0.0f, std::nanf(""), 0.0f}), ValidationError);
}

TEST_CASE("Image channel conversion") {
  const Image rgb(1, 1, 3, std::vector<float>{0.1f, 0.2f, 0.3f});
  const Image rgba = rgb.to_rgba();
  CHECK(rgba.channels() == 4);
  CHECK(rgba.at(0, 0, 3) == 1.0f);
  CHECK(rgba.to_rgb() == rgb);
}

TEST_CASE("mask_bounding_box") {
  SUBCASE("full mask") {
    const Box b = mask_bounding_box(Mask(4, 4, true));
    CHECK(b.origin == Vec2i(0, 0));
    CHECK(b.width == 4);
    CHECK(b.height == 4);
  }
  SUBCASE("single bit") {
    Mask m(5, 5);
    m(2, 3) = true;
    CHECK(mask_bounding_box(m) == Box{Vec2i(2, 3), 1, 1});
  }
  SUBCASE("two bits") {
    Mask m(5, 5);
    m(1, 1) = true;
    m(3, 2) = true;
    CHECK(mask_bounding_box(m) == Box{Vec2i(1, 1), 3, 2});
  }
  SUBCASE("empty mask") { CHECK_THROWS_AS(mask_bounding_box(Mask(3, 3)), ValidationError); }
}

namespace {

Box brute_force_box(const Mask& m) {
  int x0 = m.width(), y0 = m.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m(x, y)) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  return Box{Vec2i(x0, y0), x1 - x0 + 1, y1 - y0 + 1};
}

}  // namespace

TEST_CASE("mask_bounding_box matches enumeration and is idempotent under restriction") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int w = 1 + static_cast<int>(rng() % 12);
    const int h = 1 + static_cast<int>(rng() % 12);
    Mask m(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) m(x, y) = rng() % 5 == 0;
    }
    if (!m.any()) m(static_cast<int>(rng() % w), static_cast<int>(rng() % h)) = true;
    const Box b = mask_bounding_box(m);
    CHECK(b == brute_force_box(m));

    Mask restricted(w, h);
    for (int y = b.origin.y(); y < b.origin.y() + b.height; ++y) {
      for (int x = b.origin.x(); x < b.origin.x() + b.width; ++x) restricted(x, y) = m(x, y);
    }
    CHECK(mask_bounding_box(restricted) == b);
  }
}

TEST_CASE("rotation is orthogonal with unit determinant") {
  for (double theta : {-3.0, -0.5, 0.0, 0.1, 1.7, 3.14}) {
    const Eigen::Matrix2d r = RotationState{theta}.matrix();
    CHECK((r.transpose() * r - Eigen::Matrix2d::Identity()).norm() < 1e-14);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("Dims bounds follow pixel-center convention") {
  const Dims d{4, 3};
  CHECK(d.contains(Vec2d(0, 0)));
  CHECK(d.contains(Vec2d(-0.5, -0.5)));
  CHECK(d.contains(Vec2d(3.49, 2.49)));
  CHECK_FALSE(d.contains(Vec2d(3.5, 0)));
  CHECK_FALSE(d.contains(Vec2d(0, -0.51)));
}
