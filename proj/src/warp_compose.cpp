#include "arapflow/warp_compose.hpp"

#include <array>
#include <cmath>
#include <random>

namespace arapflow {

std::string_view to_string(TextureMode mode) {
  switch (mode) {
    case TextureMode::Original: return "O";
    case TextureMode::Random: return "R";
    case TextureMode::Combined: return "C";
  }
  return "?";
}

TextureMode parse_texture_mode(std::string_view text) {
  if (text == "O") return TextureMode::Original;
  if (text == "R") return TextureMode::Random;
  if (text == "C") return TextureMode::Combined;
  throw ValidationError("texture mode must be O, R or C, got '" + std::string(text) + "'");
}

namespace {

void require_same_dims(const Mask& mask, const FlowField& flow) {
  if (mask.width() != flow.width() || mask.height() != flow.height()) {
    throw ValidationError("mask and flow dimensions differ");
  }
}

double cross(const Vec2d& a, const Vec2d& b) { return a.x() * b.y() - a.y() * b.x(); }

constexpr double kEdgeTolerance = 1e-9;
constexpr double kMinTriangleArea = 1e-12;

}  // namespace

MeshRaster rasterize_mesh(const Mask& mask, const FlowField& flow) {
  require_same_dims(mask, flow);
  const int w = mask.width();
  const int h = mask.height();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask(x, y) && !flow.valid(x, y)) {
        throw ValidationError("forward warp: flow invalid inside the mask");
      }
    }
  }

  // Corner (cx, cy) sits at (cx - 0.5, cy - 0.5); its flow averages the
  // masked pixels that share it, which replicates flow across the boundary.
  Plane<double> corner_u = Plane<double>::Zero(h + 1, w + 1);
  Plane<double> corner_v = Plane<double>::Zero(h + 1, w + 1);
  {
    Plane<int> hits = Plane<int>::Zero(h + 1, w + 1);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!mask(x, y)) continue;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            corner_u(y + dy, x + dx) += flow.u(x, y);
            corner_v(y + dy, x + dx) += flow.v(x, y);
            hits(y + dy, x + dx) += 1;
          }
        }
      }
    }
    const Plane<double> denom = hits.cast<double>().max(1.0);
    corner_u /= denom;
    corner_v /= denom;
  }

  MeshRaster out{Plane<std::int64_t>::Constant(h, w, -1), Plane<double>::Zero(h, w),
                 Plane<double>::Zero(h, w), Mask(w, h)};

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(x, y)) continue;
      const std::int64_t id = std::int64_t{y} * w + x;
      // TL, TR, BR, BL
      const std::array<Vec2i, 4> corners{Vec2i(x, y), Vec2i(x + 1, y), Vec2i(x + 1, y + 1),
                                         Vec2i(x, y + 1)};
      std::array<Vec2d, 4> src;
      std::array<Vec2d, 4> dst;
      for (int c = 0; c < 4; ++c) {
        src[c] = corners[c].cast<double>() - Vec2d(0.5, 0.5);
        dst[c] = src[c] + Vec2d(corner_u(corners[c].y(), corners[c].x()),
                                corner_v(corners[c].y(), corners[c].x()));
      }
      for (const auto& tri : {std::array{0, 1, 2}, std::array{0, 2, 3}}) {
        const Vec2d& a = dst[tri[0]];
        const Vec2d& b = dst[tri[1]];
        const Vec2d& c = dst[tri[2]];
        const double det = cross(b - a, c - a);
        if (std::abs(det) < kMinTriangleArea) continue;
        const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({a.x(), b.x(), c.x()}) - kEdgeTolerance)));
        const int x1 = std::min(w - 1, static_cast<int>(std::floor(std::max({a.x(), b.x(), c.x()}) + kEdgeTolerance)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({a.y(), b.y(), c.y()}) - kEdgeTolerance)));
        const int y1 = std::min(h - 1, static_cast<int>(std::floor(std::max({a.y(), b.y(), c.y()}) + kEdgeTolerance)));
        for (int qy = y0; qy <= y1; ++qy) {
          for (int qx = x0; qx <= x1; ++qx) {
            const Vec2d q(qx, qy);
            const double lb = cross(q - a, c - a) / det;
            const double lc = cross(b - a, q - a) / det;
            const double la = 1.0 - lb - lc;
            if (la < -kEdgeTolerance || lb < -kEdgeTolerance || lc < -kEdgeTolerance) continue;
            const Vec2d s = la * src[tri[0]] + lb * src[tri[1]] + lc * src[tri[2]];
            out.owner(qy, qx) = id;
            out.src_x(qy, qx) = s.x();
            out.src_y(qy, qx) = s.y();
          }
        }
      }
    }
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(x, y)) continue;
      const long tx = std::lround(x + static_cast<double>(flow.u(x, y)));
      const long ty = std::lround(y + static_cast<double>(flow.v(x, y)));
      if (tx < 0 || ty < 0 || tx >= w || ty >= h) continue;
      const std::int64_t owner = out.owner(ty, tx);
      if (owner >= 0 && owner != std::int64_t{y} * w + x) out.occluded_src(x, y) = true;
    }
  }
  return out;
}

std::optional<Eigen::Vector4f> sample_masked(const Image& image, const Mask& mask, double x,
                                             double y) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;
  Eigen::Vector4d acc = Eigen::Vector4d::Zero();
  double total = 0.0;
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
      const int px = x0 + dx;
      const int py = y0 + dy;
      if (wgt <= 0.0 || !mask.contains(px, py) || !mask(px, py)) continue;
      for (int c = 0; c < 3; ++c) acc[c] += wgt * image.at(px, py, c);
      acc[3] += wgt * (image.has_alpha() ? image.at(px, py, 3) : 1.0);
      total += wgt;
    }
  }
  if (total <= 0.0) return std::nullopt;
  if (total == 1.0) return acc.cast<float>();
  return (acc / total).cast<float>();
}

Eigen::Vector3f sample_bilinear(const Image& image, double x, double y) {
  x = std::clamp(x, 0.0, image.width() - 1.0);
  y = std::clamp(y, 0.0, image.height() - 1.0);
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, image.width() - 1);
  const int y1 = std::min(y0 + 1, image.height() - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  Eigen::Vector3f out;
  for (int c = 0; c < 3; ++c) {
    const double top = (1 - fx) * image.at(x0, y0, c) + fx * image.at(x1, y0, c);
    const double bottom = (1 - fx) * image.at(x0, y1, c) + fx * image.at(x1, y1, c);
    out[c] = static_cast<float>((1 - fy) * top + fy * bottom);
  }
  return out;
}

Image resize_bilinear(const Image& image, int width, int height) {
  if (width <= 0 || height <= 0) throw ValidationError("resize target must be nonempty");
  const int ch = image.channels();
  Plane<float> out(height, std::int64_t{width} * ch);
  const double sx = static_cast<double>(image.width()) / width;
  const double sy = static_cast<double>(image.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const double tx = fx - x0;
      for (int c = 0; c < ch; ++c) {
        const double top = (1 - tx) * image.at(x0, y0, c) + tx * image.at(x1, y0, c);
        const double bottom = (1 - tx) * image.at(x0, y1, c) + tx * image.at(x1, y1, c);
        out(y, x * ch + c) =
            std::clamp(static_cast<float>((1 - ty) * top + ty * bottom), 0.0f, 1.0f);
      }
    }
  }
  return Image(width, height, ch, std::move(out));
}

WarpResult forward_warp(const Image& obj, const Mask& mask, const FlowField& flow) {
  if (obj.width() != mask.width() || obj.height() != mask.height()) {
    throw ValidationError("forward_warp: image and mask dimensions differ");
  }
  MeshRaster raster = rasterize_mesh(mask, flow);
  const int w = obj.width();
  const int h = obj.height();
  Plane<float> rgba = Plane<float>::Zero(h, std::int64_t{w} * 4);
  Mask coverage(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (raster.owner(y, x) < 0) continue;
      const auto px = sample_masked(obj, mask, raster.src_x(y, x), raster.src_y(y, x));
      if (!px || (*px)[3] < 0.5f) continue;
      for (int c = 0; c < 3; ++c) rgba(y, x * 4 + c) = std::clamp((*px)[c], 0.0f, 1.0f);
      rgba(y, x * 4 + 3) = 1.0f;
      coverage(x, y) = true;
    }
  }
  return WarpResult{Image(w, h, 4, std::move(rgba)), std::move(coverage),
                    std::move(raster.occluded_src)};
}

Image replace_texture(const Image& obj, const Mask& mask, std::span<const Image> texture_pool,
                      std::uint64_t rng_seed) {
  if (texture_pool.empty()) throw ValidationError("replace_texture: empty texture pool");
  if (obj.width() != mask.width() || obj.height() != mask.height()) {
    throw ValidationError("replace_texture: image and mask dimensions differ");
  }
  std::mt19937_64 rng(rng_seed);
  const auto pick = static_cast<std::size_t>(rng() % texture_pool.size());
  const Box box = mask_bounding_box(mask);
  const Image tex = resize_bilinear(texture_pool[pick], box.width, box.height);

  Plane<float> data = obj.data();
  const int ch = obj.channels();
  for (int y = box.origin.y(); y < box.origin.y() + box.height; ++y) {
    for (int x = box.origin.x(); x < box.origin.x() + box.width; ++x) {
      if (!mask(x, y)) continue;
      for (int c = 0; c < 3; ++c) {
        data(y, x * ch + c) = tex.at(x - box.origin.x(), y - box.origin.y(), c);
      }
    }
  }
  return Image(obj.width(), obj.height(), ch, std::move(data));
}

Image composite(const Image& bg, const Image& fg, Vec2i top_left) {
  if (top_left.x() < 0 || top_left.y() < 0 || top_left.x() + fg.width() > bg.width() ||
      top_left.y() + fg.height() > bg.height()) {
    throw ValidationError("composite: foreground exceeds background bounds");
  }
  Plane<float> data = bg.data();
  const int ch = bg.channels();
  for (int y = 0; y < fg.height(); ++y) {
    for (int x = 0; x < fg.width(); ++x) {
      if (fg.has_alpha() && fg.at(x, y, 3) < 0.5f) continue;
      const int bx = top_left.x() + x;
      const int by = top_left.y() + y;
      for (int c = 0; c < 3; ++c) data(by, bx * ch + c) = fg.at(x, y, c);
      if (ch == 4) data(by, bx * ch + 3) = 1.0f;
    }
  }
  return Image(bg.width(), bg.height(), ch, std::move(data));
}

Image with_alpha(const Image& obj, const Mask& mask) {
  if (obj.width() != mask.width() || obj.height() != mask.height()) {
    throw ValidationError("with_alpha: image and mask dimensions differ");
  }
  Plane<float> data(obj.height(), std::int64_t{obj.width()} * 4);
  for (int y = 0; y < obj.height(); ++y) {
    for (int x = 0; x < obj.width(); ++x) {
      for (int c = 0; c < 3; ++c) data(y, x * 4 + c) = obj.at(x, y, c);
      const bool opaque = mask(x, y) && (!obj.has_alpha() || obj.at(x, y, 3) >= 0.5f);
      data(y, x * 4 + 3) = opaque ? 1.0f : 0.0f;
    }
  }
  return Image(obj.width(), obj.height(), 4, std::move(data));
}

Triple assemble_triple(const Image& bg, const Image& obj1, const Mask& mask1,
                       const WarpResult& warp, const FlowField& flow, Vec2i placement) {
  if (!mask1.any()) throw ValidationError("assemble_triple: empty object mask");
  require_same_dims(mask1, flow);
  if (warp.image.width() != mask1.width() || warp.image.height() != mask1.height()) {
    throw ValidationError("assemble_triple: warp and mask dimensions differ");
  }
  const Image base = bg.to_rgb();
  Triple t;
  t.frame1 = composite(base, with_alpha(obj1, mask1), placement);
  t.frame2 = composite(base, warp.image, placement);

  Plane<float> u = Plane<float>::Zero(base.height(), base.width());
  Plane<float> v = Plane<float>::Zero(base.height(), base.width());
  t.object_mask = Mask(base.width(), base.height());
  for (int y = 0; y < mask1.height(); ++y) {
    for (int x = 0; x < mask1.width(); ++x) {
      if (!mask1(x, y)) continue;
      const int bx = placement.x() + x;
      const int by = placement.y() + y;
      u(by, bx) = flow.u(x, y);
      v(by, bx) = flow.v(x, y);
      t.object_mask(bx, by) = true;
    }
  }
  t.flow = FlowField(std::move(u), std::move(v),
                     Plane<bool>::Constant(base.height(), base.width(), true));
  return t;
}

}  // namespace arapflow
