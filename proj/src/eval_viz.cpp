#include "arapflow/eval_viz.hpp"

#include "arapflow/warp_compose.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

namespace arapflow {

namespace {

std::uint32_t load_le32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
         std::uint32_t{p[3]} << 24;
}

void store_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

bool is_sentinel(float u, float v) {
  return !(std::abs(u) <= kFloInvalidThreshold) || !(std::abs(v) <= kFloInvalidThreshold);
}

void require_same_dims(const FlowField& a, const FlowField& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw ValidationError("flow dimensions differ: " + std::to_string(a.width()) + "x" +
                          std::to_string(a.height()) + " vs " + std::to_string(b.width()) +
                          "x" + std::to_string(b.height()));
  }
}

void require_mask_dims(const Mask& m, const FlowField& f) {
  if (m.width() != f.width() || m.height() != f.height()) {
    throw ValidationError("region mask dimensions differ from flow");
  }
}

}  // namespace

FlowField read_flo(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) throw ValidationError("flo: truncated header");
  if (std::bit_cast<float>(load_le32(bytes.data())) != kFloTag) {
    throw ValidationError("flo: bad magic");
  }
  const auto width = static_cast<std::int32_t>(load_le32(bytes.data() + 4));
  const auto height = static_cast<std::int32_t>(load_le32(bytes.data() + 8));
  if (width <= 0 || height <= 0) throw ValidationError("flo: nonpositive dimensions");
  const std::uint64_t payload = std::uint64_t{8} * static_cast<std::uint64_t>(width) *
                                static_cast<std::uint64_t>(height);
  if (bytes.size() - 12 < payload) throw ValidationError("flo: truncated payload");

  Plane<float> u(height, width);
  Plane<float> v(height, width);
  Plane<bool> valid(height, width);
  const std::uint8_t* p = bytes.data() + 12;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x, p += 8) {
      u(y, x) = std::bit_cast<float>(load_le32(p));
      v(y, x) = std::bit_cast<float>(load_le32(p + 4));
      valid(y, x) = !is_sentinel(u(y, x), v(y, x));
    }
  }
  return FlowField(std::move(u), std::move(v), std::move(valid));
}

std::vector<std::uint8_t> write_flo(const FlowField& flow) {
  std::vector<std::uint8_t> out;
  out.reserve(12 + std::size_t{8} * flow.width() * flow.height());
  store_le32(out, std::bit_cast<std::uint32_t>(kFloTag));
  store_le32(out, static_cast<std::uint32_t>(flow.width()));
  store_le32(out, static_cast<std::uint32_t>(flow.height()));
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      float u = flow.u(x, y);
      float v = flow.v(x, y);
      // An invalid pixel keeps its stored sentinel so files round-trip
      // byte for byte; anything else gets the canonical one.
      if (!flow.valid(x, y) && !is_sentinel(u, v)) {
        u = kFloInvalidValue;
        v = kFloInvalidValue;
      }
      store_le32(out, std::bit_cast<std::uint32_t>(u));
      store_le32(out, std::bit_cast<std::uint32_t>(v));
    }
  }
  return out;
}

FlowField read_flo_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  try {
    return read_flo(bytes);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_flo_file(const std::filesystem::path& path, const FlowField& flow) {
  const auto bytes = write_flo(flow);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

EpeReport evaluate(const FlowField& pred, const FlowField& gt, const Mask* region,
                   const Mask* occluded) {
  require_same_dims(pred, gt);
  if (region) require_mask_dims(*region, gt);
  if (occluded) require_mask_dims(*occluded, gt);

  double sum_full = 0.0;
  double sum_region = 0.0;
  double sum_occ = 0.0;
  EpeReport report;
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      if (!gt.valid(x, y)) continue;
      const double du = static_cast<double>(pred.u(x, y)) - gt.u(x, y);
      const double dv = static_cast<double>(pred.v(x, y)) - gt.v(x, y);
      const double err = std::sqrt(du * du + dv * dv);
      sum_full += err;
      ++report.count_full;
      if (region && (*region)(x, y)) {
        sum_region += err;
        ++report.count_masked;
      }
      if (occluded && (*occluded)(x, y)) {
        sum_occ += err;
        ++report.count_occluded;
      }
    }
  }
  if (report.count_full == 0) throw ValidationError("epe: no valid ground-truth pixels");
  report.epe_full = sum_full / report.count_full;
  if (report.count_masked > 0) report.epe_masked = sum_region / report.count_masked;
  if (report.count_occluded > 0) report.epe_occluded = sum_occ / report.count_occluded;
  return report;
}

double epe(const FlowField& pred, const FlowField& gt, const Mask* region) {
  const EpeReport r = evaluate(pred, gt, region, nullptr);
  if (!region) return r.epe_full;
  if (!r.epe_masked) throw ValidationError("epe: empty evaluation region");
  return *r.epe_masked;
}

OcclusionMasks occlusion_mask(const FlowField& flow, const Mask& object_mask, Dims frame_dims) {
  if (frame_dims.width != flow.width() || frame_dims.height != flow.height()) {
    throw ValidationError("occlusion_mask: frame dimensions differ from flow");
  }
  const MeshRaster raster = rasterize_mesh(object_mask, flow);
  OcclusionMasks out{raster.occluded_src, Mask(flow.width(), flow.height())};
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      if (!object_mask(x, y)) continue;
      const Vec2d target(x + static_cast<double>(flow.u(x, y)), y + static_cast<double>(flow.v(x, y)));
      if (!frame_dims.contains(target)) out.occ_src(x, y) = true;
      if (raster.owner(y, x) < 0) out.disocc_tgt(x, y) = true;
    }
  }
  return out;
}

DisplacementStats displacement_stats(std::span<const FlowField> flows,
                                     std::span<const double> bin_edges) {
  if (flows.empty()) throw ValidationError("displacement_stats: no flow fields");
  if (bin_edges.size() < 2) throw ValidationError("displacement_stats: need at least two bin edges");
  for (std::size_t i = 1; i < bin_edges.size(); ++i) {
    if (!(bin_edges[i] > bin_edges[i - 1])) {
      throw ValidationError("displacement_stats: bin edges must be strictly increasing");
    }
  }

  std::vector<double> mags;
  for (const FlowField& f : flows) {
    for (int y = 0; y < f.height(); ++y) {
      for (int x = 0; x < f.width(); ++x) {
        if (!f.valid(x, y)) continue;
        mags.push_back(std::hypot(static_cast<double>(f.u(x, y)), static_cast<double>(f.v(x, y))));
      }
    }
  }
  if (mags.empty()) throw ValidationError("displacement_stats: no valid pixels");

  DisplacementStats s;
  s.bin_edges.assign(bin_edges.begin(), bin_edges.end());
  s.counts.assign(bin_edges.size() - 1, 0);
  s.total = static_cast<std::int64_t>(mags.size());
  double sum = 0.0;
  for (double m : mags) {
    sum += m;
    if (m < bin_edges.front()) {
      ++s.below;
    } else if (m > bin_edges.back()) {
      ++s.above;
    } else {
      auto it = std::upper_bound(bin_edges.begin(), bin_edges.end(), m);
      auto bin = static_cast<std::size_t>(std::distance(bin_edges.begin(), it)) - 1;
      ++s.counts[std::min(bin, s.counts.size() - 1)];
    }
  }
  s.mean = sum / static_cast<double>(mags.size());

  std::sort(mags.begin(), mags.end());
  auto percentile = [&](double q) {
    const double pos = q * static_cast<double>(mags.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, mags.size() - 1);
    return mags[lo] + (pos - static_cast<double>(lo)) * (mags[hi] - mags[lo]);
  };
  s.median = percentile(0.5);
  s.p90 = percentile(0.9);
  s.max = mags.back();
  return s;
}

namespace {

// Relative lengths of the hue transitions, chosen for perceptual spacing:
// red-yellow, yellow-green, green-cyan, cyan-blue, blue-magenta, magenta-red.
constexpr int kRY = 15, kYG = 6, kGC = 4, kCB = 11, kBM = 13, kMR = 6;
constexpr int kWheelSize = kRY + kYG + kGC + kCB + kBM + kMR;

const std::array<Eigen::Vector3d, kWheelSize>& color_wheel() {
  static const auto wheel = [] {
    std::array<Eigen::Vector3d, kWheelSize> w;
    int k = 0;
    for (int i = 0; i < kRY; ++i) w[k++] = {255, std::floor(255.0 * i / kRY), 0};
    for (int i = 0; i < kYG; ++i) w[k++] = {255 - std::floor(255.0 * i / kYG), 255, 0};
    for (int i = 0; i < kGC; ++i) w[k++] = {0, 255, std::floor(255.0 * i / kGC)};
    for (int i = 0; i < kCB; ++i) w[k++] = {0, 255 - std::floor(255.0 * i / kCB), 255};
    for (int i = 0; i < kBM; ++i) w[k++] = {std::floor(255.0 * i / kBM), 0, 255};
    for (int i = 0; i < kMR; ++i) w[k++] = {255, 0, 255 - std::floor(255.0 * i / kMR)};
    for (auto& c : w) c /= 255.0;
    return w;
  }();
  return wheel;
}

}  // namespace

Eigen::Vector3f wheel_color(double u, double v) {
  const auto& wheel = color_wheel();
  const double rad = std::hypot(u, v);
  const double a = std::atan2(-v, -u) / std::numbers::pi;
  const double fk = (a + 1.0) / 2.0 * (kWheelSize - 1);
  const int k0 = std::clamp(static_cast<int>(std::floor(fk)), 0, kWheelSize - 1);
  const int k1 = (k0 + 1) % kWheelSize;
  const double f = fk - k0;
  Eigen::Vector3d col = (1.0 - f) * wheel[k0] + f * wheel[k1];
  if (rad <= 1.0) {
    col = Eigen::Vector3d::Ones() - rad * (Eigen::Vector3d::Ones() - col);
  } else {
    col *= 0.75;
  }
  return col.cwiseMax(0.0).cwiseMin(1.0).cast<float>();
}

Image flow_to_color(const FlowField& flow, std::optional<double> max_mag) {
  double scale = 0.0;
  if (max_mag) {
    if (!(*max_mag >= 0.0)) throw ValidationError("flow_to_color: max_mag must be >= 0");
    scale = *max_mag;
  } else {
    for (int y = 0; y < flow.height(); ++y) {
      for (int x = 0; x < flow.width(); ++x) {
        if (flow.valid(x, y)) {
          scale = std::max(scale, std::hypot(static_cast<double>(flow.u(x, y)),
                                             static_cast<double>(flow.v(x, y))));
        }
      }
    }
  }

  Plane<float> rgb = Plane<float>::Zero(flow.height(), std::int64_t{flow.width()} * 3);
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      if (!flow.valid(x, y)) continue;
      Eigen::Vector3f c = Eigen::Vector3f::Ones();
      if (scale > 0.0) c = wheel_color(flow.u(x, y) / scale, flow.v(x, y) / scale);
      for (int ch = 0; ch < 3; ++ch) rgb(y, x * 3 + ch) = c[ch];
    }
  }
  return Image(flow.width(), flow.height(), 3, std::move(rgb));
}

}  // namespace arapflow
