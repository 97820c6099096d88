#include "arapflow/matching.hpp"

#include <charconv>
#include <cmath>
#include <optional>
#include <sstream>

namespace arapflow {

void MatcherConfig::validate() const {
  if (patch_radius <= 0 || search_radius <= 0 || grid_step <= 0) {
    throw ValidationError("matcher radii and grid step must be positive");
  }
  if (!(min_zncc >= -1.0 && min_zncc <= 1.0)) {
    throw ValidationError("min_zncc must lie in [-1,1]");
  }
  if (!(fb_threshold >= 0.0)) throw ValidationError("fb_threshold must be >= 0");
}

namespace {

bool parse_number(std::string_view token, double& out) {
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

std::string format_number(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

MatchSet parse_matches(std::istream& in, Dims src_dims, Dims dst_dims) {
  MatchSet set{{}, src_dims, dst_dims};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;

    std::istringstream fields(line);
    std::vector<double> values;
    std::string token;
    while (fields >> token) {
      double v = 0.0;
      if (!parse_number(token, v)) {
        throw ValidationError("matches line " + std::to_string(line_no) +
                              ": non-numeric token '" + token + "'");
      }
      values.push_back(v);
    }
    if (values.size() < 4 || values.size() > 6) {
      throw ValidationError("matches line " + std::to_string(line_no) + ": expected 4-6 fields, got " +
                            std::to_string(values.size()));
    }
    Match m{Vec2d(values[0], values[1]), Vec2d(values[2], values[3]),
            values.size() >= 5 ? values[4] : 1.0};
    if (m.score < 0.0) {
      throw ValidationError("matches line " + std::to_string(line_no) + ": negative score");
    }
    if (!src_dims.contains(m.src) || !dst_dims.contains(m.dst)) {
      throw ValidationError("matches line " + std::to_string(line_no) +
                            ": coordinate outside image bounds");
    }
    set.matches.push_back(m);
  }
  return set;
}

MatchSet parse_matches(std::string_view text, Dims src_dims, Dims dst_dims) {
  std::istringstream in{std::string(text)};
  return parse_matches(in, src_dims, dst_dims);
}

std::string serialize_matches(const MatchSet& matches) {
  std::string out;
  for (const Match& m : matches.matches) {
    out += format_number(m.src.x()) + ' ' + format_number(m.src.y()) + ' ' +
           format_number(m.dst.x()) + ' ' + format_number(m.dst.y()) + ' ' +
           format_number(m.score) + '\n';
  }
  return out;
}

MatchSet filter_to_mask(const MatchSet& matches, const Mask& mask) {
  if (mask.width() != matches.src_dims.width || mask.height() != matches.src_dims.height) {
    throw ValidationError("mask dimensions differ from match source dimensions");
  }
  MatchSet out{{}, matches.src_dims, matches.dst_dims};
  for (const Match& m : matches.matches) {
    const int x = static_cast<int>(std::lround(m.src.x()));
    const int y = static_cast<int>(std::lround(m.src.y()));
    if (mask.contains(x, y) && mask(x, y)) out.matches.push_back(m);
  }
  return out;
}

Plane<double> luma(const Image& image) {
  Plane<double> out(image.height(), image.width());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      out(y, x) = 0.299 * image.at(x, y, 0) + 0.587 * image.at(x, y, 1) +
                  0.114 * image.at(x, y, 2);
    }
  }
  return out;
}

namespace {

// Per-pixel variance below this counts as a flat patch.
constexpr double kMinVariance = 1e-10;
constexpr double kTieTolerance = 1e-9;

/// Summed-area tables of intensity and squared intensity, padded by one
/// leading row and column.
struct PatchStats {
  Plane<double> sum;
  Plane<double> sum_sq;

  explicit PatchStats(const Plane<double>& img)
      : sum(Plane<double>::Zero(img.rows() + 1, img.cols() + 1)),
        sum_sq(Plane<double>::Zero(img.rows() + 1, img.cols() + 1)) {
    for (Eigen::Index y = 0; y < img.rows(); ++y) {
      for (Eigen::Index x = 0; x < img.cols(); ++x) {
        const double v = img(y, x);
        sum(y + 1, x + 1) = v + sum(y, x + 1) + sum(y + 1, x) - sum(y, x);
        sum_sq(y + 1, x + 1) = v * v + sum_sq(y, x + 1) + sum_sq(y + 1, x) - sum_sq(y, x);
      }
    }
  }

  static double box(const Plane<double>& t, int x0, int y0, int x1, int y1) {
    return t(y1 + 1, x1 + 1) - t(y0, x1 + 1) - t(y1 + 1, x0) + t(y0, x0);
  }

  /// Centered L2 norm of the patch, or nullopt for a flat patch.
  std::optional<double> centered_norm(int cx, int cy, int r) const {
    const double n = (2.0 * r + 1) * (2.0 * r + 1);
    const double s = box(sum, cx - r, cy - r, cx + r, cy + r);
    const double ss = box(sum_sq, cx - r, cy - r, cx + r, cy + r);
    const double var_sum = ss - s * s / n;
    if (!(var_sum > kMinVariance * n)) return std::nullopt;
    return std::sqrt(var_sum);
  }
};

struct Matcher {
  const Plane<double>& from;
  const Plane<double>& to;
  const PatchStats& from_stats;
  const PatchStats& to_stats;
  const MatcherConfig& cfg;

  bool patch_fits(const Plane<double>& img, int x, int y) const {
    const int r = cfg.patch_radius;
    return x - r >= 0 && y - r >= 0 && x + r < img.cols() && y + r < img.rows();
  }

  struct Best {
    Vec2i pos;
    double score;
  };

  /// Best ZNCC position in `to` for the patch of `from` centered at (x, y).
  std::optional<Best> search(int x, int y) const {
    const int r = cfg.patch_radius;
    const auto ref_norm = from_stats.centered_norm(x, y, r);
    if (!ref_norm) return std::nullopt;
    const int side = 2 * r + 1;
    const double mean =
        PatchStats::box(from_stats.sum, x - r, y - r, x + r, y + r) / (side * side);
    const Plane<double> ref = (from.block(y - r, x - r, side, side) - mean) / *ref_norm;

    std::optional<Best> best;
    int best_mag = 0;
    const int R = cfg.search_radius;
    for (int dy = -R; dy <= R; ++dy) {
      for (int dx = -R; dx <= R; ++dx) {
        const int cx = x + dx;
        const int cy = y + dy;
        if (!patch_fits(to, cx, cy)) continue;
        const auto cand_norm = to_stats.centered_norm(cx, cy, r);
        if (!cand_norm) continue;
        // ref is zero-mean, so the candidate mean drops out of the product.
        const double score = (ref * to.block(cy - r, cx - r, side, side)).sum() / *cand_norm;
        const int mag = dx * dx + dy * dy;
        if (!best || score > best->score + kTieTolerance ||
            (score >= best->score - kTieTolerance && mag < best_mag)) {
          best = Best{Vec2i(cx, cy), score};
          best_mag = mag;
        }
      }
    }
    return best;
  }
};

}  // namespace

MatchSet zncc_match(const Image& img1, const Image& img2, const Mask& mask,
                    const MatcherConfig& cfg) {
  cfg.validate();
  if (img1.width() != img2.width() || img1.height() != img2.height()) {
    throw ValidationError("zncc_match: image dimensions differ");
  }
  if (mask.width() != img1.width() || mask.height() != img1.height()) {
    throw ValidationError("zncc_match: mask dimensions differ from image");
  }
  if (2 * cfg.patch_radius >= std::min(img1.width(), img1.height())) {
    throw ValidationError("zncc_match: patch_radius too large for image");
  }

  const Plane<double> l1 = luma(img1);
  const Plane<double> l2 = luma(img2);
  const PatchStats s1(l1);
  const PatchStats s2(l2);
  const Matcher forward{l1, l2, s1, s2, cfg};
  const Matcher backward{l2, l1, s2, s1, cfg};

  const Dims dims{img1.width(), img1.height()};
  MatchSet out{{}, dims, dims};
  for (int y = 0; y < img1.height(); y += cfg.grid_step) {
    for (int x = 0; x < img1.width(); x += cfg.grid_step) {
      if (!mask(x, y) || !forward.patch_fits(l1, x, y)) continue;
      const auto fwd = forward.search(x, y);
      if (!fwd || fwd->score < cfg.min_zncc) continue;
      const auto bwd = backward.search(fwd->pos.x(), fwd->pos.y());
      if (!bwd) continue;
      if ((bwd->pos - Vec2i(x, y)).cast<double>().norm() > cfg.fb_threshold) continue;
      out.matches.push_back(
          Match{Vec2d(x, y), fwd->pos.cast<double>(), fwd->score});
    }
  }
  return out;
}

}  // namespace arapflow
