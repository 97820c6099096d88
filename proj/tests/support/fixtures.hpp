#pragma once

#include "arapflow/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace arapflow::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

using ColorFn = std::function<Eigen::Vector3f(double x, double y)>;

Image render(int width, int height, const ColorFn& color);

/// Deterministic value noise in [0.1, 0.9] per channel, smoothed over
/// `cell` pixels. Small cells give texture that ZNCC locks onto.
ColorFn value_noise(std::uint64_t seed, double cell);

/// Slowly varying sinusoidal texture; second derivatives stay tiny.
ColorFn smooth_texture(double phase = 0.0);

Image constant_image(int width, int height, float r, float g, float b);

/// Random field with u, v drawn from [-range, range]; `invalid_fraction`
/// of pixels marked invalid.
FlowField random_flow(int width, int height, std::uint64_t seed, double range,
                      double invalid_fraction = 0.0);

FlowField constant_flow(int width, int height, float u, float v);

/// Mask of pixels whose centers lie within the axis-aligned rectangle.
Mask rect_mask(int width, int height, int x0, int y0, int rw, int rh);
Mask disk_mask(int width, int height, double cx, double cy, double radius);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Textured object translating at constant velocity over a flat backdrop,
/// written as PNG frames plus masks, a manifest, and background and texture
/// pools.
struct ToySequenceSpec {
  std::string name = "toy";
  int width = 80;
  int height = 64;
  int frames = 2;
  Vec2d origin = Vec2d(16, 16);
  int side = 32;
  Vec2d velocity = Vec2d(3, 0);
  bool disk = false;
  bool empty_masks = false;
  ColorFn texture;
};

struct ToyDataset {
  std::filesystem::path root;
  std::filesystem::path manifest;
  std::filesystem::path backgrounds;
  std::filesystem::path textures;
};

/// Object mask of frame k of a toy sequence.
Mask toy_mask(const ToySequenceSpec& spec, int k);
Image toy_frame(const ToySequenceSpec& spec, int k);

ToyDataset write_toy_dataset(const std::filesystem::path& root, const std::vector<ToySequenceSpec>& seqs);

/// Config text pointing at the dataset's pools, followed by `extra` lines.
std::string toy_config(const ToyDataset& data, const std::filesystem::path& out, const std::string& extra);

/// Recursive listing of regular files with their bytes, for tree comparison.
std::string tree_digest(const std::filesystem::path& root);

}  // namespace arapflow::testing
