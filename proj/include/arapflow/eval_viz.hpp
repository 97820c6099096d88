#pragma once

#include "arapflow/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace arapflow {

// Middlebury .flo: float 202021.25 tag, int32 width, int32 height, then
// row-major interleaved (u, v) float32, all little-endian.
inline constexpr float kFloTag = 202021.25f;
// Components beyond this magnitude mark an invalid pixel on read.
inline constexpr float kFloInvalidThreshold = 1e9f;
inline constexpr float kFloInvalidValue = 1e10f;

FlowField read_flo(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_flo(const FlowField& flow);

FlowField read_flo_file(const std::filesystem::path& path);
void write_flo_file(const std::filesystem::path& path, const FlowField& flow);

struct EpeReport {
  double epe_full = 0.0;
  std::optional<double> epe_masked;
  std::optional<double> epe_occluded;
  std::int64_t count_full = 0;
  std::int64_t count_masked = 0;
  std::int64_t count_occluded = 0;
};

/// Mean end-point error over pixels valid in `gt` (and inside `region` when
/// given). Throws on dimension mismatch or an empty evaluation region.
double epe(const FlowField& pred, const FlowField& gt, const Mask* region = nullptr);

/// Full, region and occluded-region breakdown in one pass. Region EPEs are
/// left empty when their mask is absent or selects no valid pixel.
EpeReport evaluate(const FlowField& pred, const FlowField& gt, const Mask* region = nullptr,
                   const Mask* occluded = nullptr);

struct OcclusionMasks {
  Mask occ_src;     // source pixels overwritten or carried out of frame
  Mask disocc_tgt;  // object-footprint pixels left uncovered in frame 2
};

OcclusionMasks occlusion_mask(const FlowField& flow, const Mask& object_mask, Dims frame_dims);

struct DisplacementStats {
  std::vector<double> bin_edges;
  /// counts[i] holds magnitudes in [edges[i], edges[i+1]); the last bin is
  /// closed on the right.
  std::vector<std::int64_t> counts;
  std::int64_t below = 0;
  std::int64_t above = 0;
  std::int64_t total = 0;
  double mean = 0.0;
  double median = 0.0;
  double p90 = 0.0;
  double max = 0.0;
};

/// Histogram and summary of per-pixel flow magnitudes over valid pixels.
/// Percentiles interpolate linearly between order statistics.
DisplacementStats displacement_stats(std::span<const FlowField> flows,
                                     std::span<const double> bin_edges);

/// Middlebury color-wheel color for a flow vector normalized by the
/// saturation magnitude, as RGB in [0,1].
Eigen::Vector3f wheel_color(double u, double v);

/// Middlebury color coding. max_mag defaults to the field's largest valid
/// magnitude; a field whose max is 0 renders white. Invalid pixels are black.
Image flow_to_color(const FlowField& flow, std::optional<double> max_mag = std::nullopt);

}  // namespace arapflow
