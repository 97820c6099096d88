#pragma once

#include "arapflow/model.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

namespace arapflow {

enum class TextureMode { Original, Random, Combined };

/// "O" / "R" / "C".
std::string_view to_string(TextureMode mode);
TextureMode parse_texture_mode(std::string_view text);

struct WarpResult {
  Image image;         // RGBA, alpha = coverage
  Mask coverage;       // target pixels written by at least one triangle
  Mask occluded_src;   // source pixels whose target cell ended up owned by another pixel
};

/// Geometry of the forward mesh map, shared by warping and occlusion analysis.
struct MeshRaster {
  /// Row-major index of the source pixel that last wrote each target pixel,
  /// or -1 where nothing landed.
  Plane<std::int64_t> owner;
  /// Source position (frame coordinates) sampled for each written target.
  Plane<double> src_x;
  Plane<double> src_y;
  Mask occluded_src;
};

/// Rasterizes the deformed pixel mesh. Each masked pixel contributes the
/// unit square centered on it, split into two triangles; square corners carry
/// the mean flow of the masked pixels sharing that corner.
MeshRaster rasterize_mesh(const Mask& mask, const FlowField& flow);

/// Bilinear sample at a subpixel position using only masked neighbors,
/// renormalizing their weights. Returns nullopt if no masked neighbor exists.
std::optional<Eigen::Vector4f> sample_masked(const Image& image, const Mask& mask, double x,
                                             double y);

/// Plain bilinear sample with edge clamping; returns the first 3 channels.
Eigen::Vector3f sample_bilinear(const Image& image, double x, double y);

Image resize_bilinear(const Image& image, int width, int height);

WarpResult forward_warp(const Image& obj, const Mask& mask, const FlowField& flow);

/// Picks a texture with the seeded generator, resizes it to the mask's
/// bounding box and pastes it onto the masked pixels.
Image replace_texture(const Image& obj, const Mask& mask, std::span<const Image> texture_pool,
                      std::uint64_t rng_seed);

/// Binary alpha-over: foreground pixels with alpha >= 0.5 replace `bg`.
/// A 3-channel foreground counts as fully opaque.
Image composite(const Image& bg, const Image& fg, Vec2i top_left);

/// Object-frame image and mask as RGBA with alpha = mask.
Image with_alpha(const Image& obj, const Mask& mask);

/// Both frames over the same background at the same placement; the flow is
/// moved into background coordinates and is zero (and valid) off the object.
Triple assemble_triple(const Image& bg, const Image& obj1, const Mask& mask1,
                       const WarpResult& warp, const FlowField& flow, Vec2i placement);

}  // namespace arapflow
