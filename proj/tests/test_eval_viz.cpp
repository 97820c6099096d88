#include "arapflow/eval_viz.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <vector>

using namespace arapflow;
namespace t = arapflow::testing;

namespace {

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

void put_i32(std::vector<std::uint8_t>& out, std::int32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(static_cast<std::uint32_t>(v) >> (8 * i)));
}

double hue_degrees(const Eigen::Vector3f& c) {
  const double r = c[0], g = c[1], b = c[2];
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  if (mx == mn) return 0.0;
  double h;
  if (mx == r) {
    h = 60.0 * std::fmod((g - b) / (mx - mn), 6.0);
  } else if (mx == g) {
    h = 60.0 * ((b - r) / (mx - mn) + 2.0);
  } else {
    h = 60.0 * ((r - g) / (mx - mn) + 4.0);
  }
  return h < 0 ? h + 360.0 : h;
}

}  // namespace

TEST_CASE("flo 1x1 round trip") {
  Plane<float> u(1, 1), v(1, 1);
  u << 1.5f;
  v << -2.0f;
  const FlowField f(u, v, Plane<bool>::Constant(1, 1, true));
  const auto bytes = write_flo(f);
  CHECK(bytes.size() == 20);
  std::vector<std::uint8_t> expected;
  put_f32(expected, 202021.25f);
  put_i32(expected, 1);
  put_i32(expected, 1);
  put_f32(expected, 1.5f);
  put_f32(expected, -2.0f);
  CHECK(bytes == expected);
  CHECK(read_flo(bytes) == f);
}

TEST_CASE("flo 2x1 zero payload") {
  const auto bytes = write_flo(new_flow_field(2, 1));
  REQUIRE(bytes.size() == 12 + 16);
  CHECK(std::all_of(bytes.begin() + 12, bytes.end(), [](std::uint8_t b) { return b == 0; }));
  std::vector<std::uint8_t> header;
  put_f32(header, 202021.25f);
  put_i32(header, 2);
  put_i32(header, 1);
  CHECK(std::equal(header.begin(), header.end(), bytes.begin()));
}

TEST_CASE("flo header errors") {
  auto message = [](const std::vector<std::uint8_t>& b) {
    try {
      read_flo(b);
    } catch (const ValidationError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  std::vector<std::uint8_t> bad;
  put_f32(bad, 0.0f);
  put_i32(bad, 1);
  put_i32(bad, 1);
  put_f32(bad, 0.0f);
  put_f32(bad, 0.0f);
  CHECK(message(bad).find("bad magic") != std::string::npos);

  std::vector<std::uint8_t> zero;
  put_f32(zero, 202021.25f);
  put_i32(zero, 0);
  put_i32(zero, 3);
  CHECK(message(zero).find("nonpositive") != std::string::npos);

  std::vector<std::uint8_t> trunc;
  put_f32(trunc, 202021.25f);
  put_i32(trunc, 2);
  put_i32(trunc, 2);
  put_f32(trunc, 1.0f);
  CHECK(message(trunc).find("truncated payload") != std::string::npos);
  CHECK(message({1, 2, 3}).find("truncated") != std::string::npos);
}

TEST_CASE("flo round trips with invalid pixels") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const FlowField f = t::random_flow(1 + static_cast<int>(seed % 7), 1 + static_cast<int>(seed % 5), seed, 50.0, 0.3);
    const auto bytes = write_flo(f);
    const FlowField back = read_flo(bytes);
    CHECK(back == f);
    CHECK(write_flo(back) == bytes);
  }
}

TEST_CASE("flo reads foreign sentinels and keeps them") {
  std::vector<std::uint8_t> bytes;
  put_f32(bytes, 202021.25f);
  put_i32(bytes, 3);
  put_i32(bytes, 1);
  put_f32(bytes, 2e9f);
  put_f32(bytes, 0.0f);
  put_f32(bytes, 1.0f);
  put_f32(bytes, std::nanf(""));
  put_f32(bytes, 0.5f);
  put_f32(bytes, -0.25f);
  const FlowField f = read_flo(bytes);
  CHECK_FALSE(f.valid(0, 0));
  CHECK_FALSE(f.valid(1, 0));
  CHECK(f.valid(2, 0));
  CHECK(write_flo(f) == bytes);
}

TEST_CASE("flo file helpers") {
  t::TempDir dir("flo");
  const FlowField f = t::random_flow(5, 4, 77, 3.0, 0.1);
  write_flo_file(dir / "a.flo", f);
  CHECK(read_flo_file(dir / "a.flo") == f);
  CHECK_THROWS_AS(read_flo_file(dir / "missing.flo"), IoError);
}

TEST_CASE("epe examples") {
  const FlowField gt = t::constant_flow(4, 3, 0, 0);
  CHECK(epe(gt, gt) == 0.0);
  CHECK(epe(t::constant_flow(4, 3, 1, 1), gt) == doctest::Approx(std::sqrt(2.0)));

  const FlowField g = t::random_flow(9, 7, 3, 10.0, 0.2);
  double sum = 0;
  int n = 0;
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 9; ++x) {
      if (!g.valid(x, y)) continue;
      sum += std::hypot(static_cast<double>(g.u(x, y)), static_cast<double>(g.v(x, y)));
      ++n;
    }
  }
  CHECK(epe(t::constant_flow(9, 7, 0, 0), g) == doctest::Approx(sum / n).epsilon(1e-12));
}

TEST_CASE("epe properties") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const FlowField a = t::random_flow(8, 6, seed, 5.0);
    const FlowField b = t::random_flow(8, 6, seed + 100, 5.0);
    const FlowField c = t::random_flow(8, 6, seed + 200, 5.0);
    CHECK(epe(a, a) == 0.0);
    CHECK(epe(a, b) == doctest::Approx(epe(b, a)).epsilon(1e-12));
    CHECK(epe(a, c) <= epe(a, b) + epe(b, c) + 1e-12);
    const Mask all(8, 6, true);
    CHECK(epe(a, b, &all) == epe(a, b));
  }
}

TEST_CASE("epe errors and region breakdown") {
  const FlowField a = t::constant_flow(4, 4, 1, 0);
  const FlowField b = t::constant_flow(4, 4, 0, 0);
  const Mask none(4, 4);
  CHECK_THROWS_AS(epe(a, b, &none), ValidationError);
  CHECK_THROWS_AS(epe(a, t::constant_flow(4, 5, 0, 0)), ValidationError);
  const Mask wrong(3, 4, true);
  CHECK_THROWS_AS(epe(a, b, &wrong), ValidationError);

  const Mask region = t::rect_mask(4, 4, 0, 0, 2, 4);
  const Mask occ = t::rect_mask(4, 4, 0, 0, 1, 1);
  const EpeReport r = evaluate(a, b, &region, &occ);
  CHECK(r.count_full == 16);
  CHECK(r.count_masked == 8);
  CHECK(r.count_occluded == 1);
  CHECK(*r.epe_masked == 1.0);
  CHECK(*r.epe_occluded == 1.0);
  const EpeReport bare = evaluate(a, b);
  CHECK_FALSE(bare.epe_masked.has_value());
}

TEST_CASE("occlusion_mask") {
  SUBCASE("zero flow") {
    const Mask m = t::disk_mask(12, 12, 6, 6, 4);
    const OcclusionMasks o = occlusion_mask(t::constant_flow(12, 12, 0, 0), m, Dims{12, 12});
    CHECK_FALSE(o.occ_src.any());
    CHECK_FALSE(o.disocc_tgt.any());
  }
  SUBCASE("object leaving the frame") {
    const Mask m = t::rect_mask(12, 6, 6, 1, 4, 3);
    const OcclusionMasks o = occlusion_mask(t::constant_flow(12, 6, 4, 0), m, Dims{12, 6});
    CHECK(o.occ_src == t::rect_mask(12, 6, 8, 1, 2, 3));
    CHECK(o.disocc_tgt == m);
  }
  SUBCASE("folding strip") {
    const Mask m = t::rect_mask(6, 4, 1, 0, 2, 4);
    Plane<float> u = Plane<float>::Zero(4, 6);
    for (int y = 0; y < 4; ++y) u(y, 1) = 1.0f;
    const FlowField flow(u, Plane<float>::Zero(4, 6), Plane<bool>::Constant(4, 6, true));
    const OcclusionMasks o = occlusion_mask(flow, m, Dims{6, 4});
    CHECK(o.occ_src == t::rect_mask(6, 4, 1, 0, 1, 4));
    CHECK(o.disocc_tgt == t::rect_mask(6, 4, 1, 0, 1, 4));
  }
  SUBCASE("occluded sources stay on the object") {
    const Mask m = t::disk_mask(20, 20, 10, 10, 6);
    const FlowField flow = t::random_flow(20, 20, 9, 3.0);
    const OcclusionMasks o = occlusion_mask(flow, m, Dims{20, 20});
    for (int y = 0; y < 20; ++y) {
      for (int x = 0; x < 20; ++x) {
        if (!m(x, y)) CHECK_FALSE(o.occ_src(x, y));
      }
    }
  }
}

TEST_CASE("displacement_stats") {
  const std::vector<double> edges{0.0, 1.0, 5.0};
  SUBCASE("zero flows") {
    const std::vector<FlowField> flows{t::constant_flow(3, 3, 0, 0), t::constant_flow(2, 2, 0, 0)};
    const DisplacementStats s = displacement_stats(flows, edges);
    CHECK(s.counts == std::vector<std::int64_t>{13, 0});
    CHECK(s.mean == 0.0);
    CHECK(s.max == 0.0);
  }
  SUBCASE("constant (3,4)") {
    const std::vector<FlowField> flows{t::constant_flow(4, 4, 3, 4)};
    const DisplacementStats s = displacement_stats(flows, edges);
    CHECK(s.counts == std::vector<std::int64_t>{0, 16});
    CHECK(s.mean == 5.0);
    CHECK(s.median == 5.0);
    CHECK(s.above == 0);
  }
  SUBCASE("equal mix of zero and (3,4)") {
    const std::vector<FlowField> flows{t::constant_flow(4, 4, 0, 0), t::constant_flow(2, 8, 3, 4)};
    const DisplacementStats s = displacement_stats(flows, edges);
    CHECK(s.mean == doctest::Approx((16 * 0.0 + 16 * 5.0) / 32));
    CHECK(s.median == doctest::Approx(2.5));
    CHECK(s.p90 == 5.0);
    CHECK(s.total == 32);
  }
  SUBCASE("below and above the edges") {
    const std::vector<FlowField> flows{t::constant_flow(1, 1, 0, 0.5f), t::constant_flow(1, 1, 0, 7)};
    const std::vector<double> narrow{1.0, 2.0};
    const DisplacementStats s = displacement_stats(flows, narrow);
    CHECK(s.below == 1);
    CHECK(s.above == 1);
  }
  SUBCASE("percentiles interpolate") {
    Plane<float> u(1, 5);
    u << 1, 2, 3, 4, 5;
    const std::vector<FlowField> flows{FlowField(u, Plane<float>::Zero(1, 5), Plane<bool>::Constant(1, 5, true))};
    const DisplacementStats s = displacement_stats(flows, edges);
    CHECK(s.median == 3.0);
    CHECK(s.p90 == doctest::Approx(4.6));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(displacement_stats(std::span<const FlowField>{}, edges), ValidationError);
    const std::vector<FlowField> flows{t::constant_flow(1, 1, 0, 0)};
    const std::vector<double> bad{1.0, 1.0};
    CHECK_THROWS_AS(displacement_stats(flows, bad), ValidationError);
  }
}

TEST_CASE("flow_to_color") {
  SUBCASE("zero flow renders white") {
    const Image img = flow_to_color(t::constant_flow(5, 3, 0, 0));
    CHECK(img == t::constant_image(5, 3, 1, 1, 1));
  }
  SUBCASE("rightward motion at full scale is pure red") {
    const Image img = flow_to_color(t::constant_flow(3, 3, 2.5f, 0), 2.5);
    CHECK(img == t::constant_image(3, 3, 1, 0, 0));
  }
  SUBCASE("opposite vectors get complementary hues") {
    // The wheel spaces hues perceptually, so opposite directions land near,
    // not exactly on, the HSV complement.
    Plane<float> u(1, 2);
    u << 2.0f, -2.0f;
    const Image img = flow_to_color(FlowField(u, Plane<float>::Zero(1, 2), Plane<bool>::Constant(1, 2, true)));
    const Eigen::Vector3f right(img.at(0, 0, 0), img.at(0, 0, 1), img.at(0, 0, 2));
    const Eigen::Vector3f left(img.at(1, 0, 0), img.at(1, 0, 1), img.at(1, 0, 2));
    double diff = std::abs(hue_degrees(right) - hue_degrees(left));
    diff = std::min(diff, 360.0 - diff);
    CHECK(diff == doctest::Approx(180.0).epsilon(15.0 / 180.0));
    CHECK(right == Eigen::Vector3f(1, 0, 0));
    CHECK(left[0] == 0.0f);
    CHECK(left[2] == 1.0f);
  }
  SUBCASE("invalid pixels are black") {
    const FlowField f = t::random_flow(6, 6, 4, 2.0, 0.5);
    const Image img = flow_to_color(f);
    for (int y = 0; y < 6; ++y) {
      for (int x = 0; x < 6; ++x) {
        if (!f.valid(x, y)) CHECK((img.at(x, y, 0) + img.at(x, y, 1) + img.at(x, y, 2)) == 0.0f);
      }
    }
  }
  SUBCASE("scale invariance") {
    const FlowField f = t::random_flow(10, 8, 12, 4.0);
    const Image base = flow_to_color(f, 3.0);
    for (float s : {0.25f, 2.0f, 8.0f}) {
      const FlowField g(f.u() * s, f.v() * s, f.valid());
      CHECK(flow_to_color(g, 3.0 * s) == base);
    }
    CHECK(flow_to_color(FlowField(f.u() * 4.0f, f.v() * 4.0f, f.valid())) == flow_to_color(f));
  }
  SUBCASE("saturation grows with magnitude") {
    const Eigen::Vector3f weak = wheel_color(0.2, 0.1);
    const Eigen::Vector3f strong = wheel_color(0.8, 0.4);
    CHECK(weak.minCoeff() > strong.minCoeff());
  }
}
