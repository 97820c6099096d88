#pragma once

#include "arapflow/model.hpp"

#include <istream>
#include <string>
#include <string_view>

namespace arapflow {

struct MatcherConfig {
  int patch_radius = 7;
  int search_radius = 24;
  int grid_step = 8;
  double min_zncc = 0.6;
  double fb_threshold = 2.0;

  void validate() const;
};

/// Parses `x1 y1 x2 y2 [score [extra]]` lines. `#` starts a comment line.
/// Malformed lines and out-of-bounds coordinates raise ValidationError naming
/// the 1-based line number.
MatchSet parse_matches(std::istream& in, Dims src_dims, Dims dst_dims);
MatchSet parse_matches(std::string_view text, Dims src_dims, Dims dst_dims);

/// One `x1 y1 x2 y2 score` line per match, shortest round-tripping decimals.
std::string serialize_matches(const MatchSet& matches);

/// Keeps matches whose source lands on a true mask bit (nearest pixel).
MatchSet filter_to_mask(const MatchSet& matches, const Mask& mask);

/// 0.299 R + 0.587 G + 0.114 B.
Plane<double> luma(const Image& image);

/// Integer-pixel ZNCC block matcher with forward-backward consistency.
/// Grid points lie on multiples of `grid_step`; a point is used when it is
/// on the mask and its patch fits inside both images. Output is in
/// row-major source order.
MatchSet zncc_match(const Image& img1, const Image& img2, const Mask& mask,
                    const MatcherConfig& cfg);

}  // namespace arapflow
