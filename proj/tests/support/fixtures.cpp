#include "fixtures.hpp"

#include "arapflow/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

namespace arapflow::testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  static int counter = 0;
  std::random_device rd;
  path_ = fs::temp_directory_path() /
          ("arapflow_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

Image render(int width, int height, const ColorFn& color) {
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Eigen::Vector3f c = color(x, y);
      for (int ch = 0; ch < 3; ++ch) data.push_back(std::clamp(c[ch], 0.0f, 1.0f));
    }
  }
  return Image(width, height, 3, std::move(data));
}

ColorFn value_noise(std::uint64_t seed, double cell) {
  constexpr int kLattice = 64;
  auto table = std::make_shared<std::vector<Eigen::Vector3f>>(kLattice * kLattice);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(0.1f, 0.9f);
  for (auto& v : *table) v = Eigen::Vector3f(dist(rng), dist(rng), dist(rng));
  return [table, cell](double x, double y) {
    const double gx = x / cell;
    const double gy = y / cell;
    const int ix = static_cast<int>(std::floor(gx));
    const int iy = static_cast<int>(std::floor(gy));
    const auto fx = static_cast<float>(gx - ix);
    const auto fy = static_cast<float>(gy - iy);
    auto at = [&](int i, int j) -> const Eigen::Vector3f& {
      const int a = ((i % kLattice) + kLattice) % kLattice;
      const int b = ((j % kLattice) + kLattice) % kLattice;
      return (*table)[static_cast<std::size_t>(b) * kLattice + a];
    };
    // Smoothstep weights keep the texture C1 across cells.
    const float sx = fx * fx * (3 - 2 * fx);
    const float sy = fy * fy * (3 - 2 * fy);
    const Eigen::Vector3f top = (1 - sx) * at(ix, iy) + sx * at(ix + 1, iy);
    const Eigen::Vector3f bottom = (1 - sx) * at(ix, iy + 1) + sx * at(ix + 1, iy + 1);
    return Eigen::Vector3f((1 - sy) * top + sy * bottom);
  };
}

ColorFn smooth_texture(double phase) {
  return [phase](double x, double y) {
    return Eigen::Vector3f(
        static_cast<float>(0.5 + 0.3 * std::sin(x / 13.0 + phase) * std::cos(y / 17.0)),
        static_cast<float>(0.5 + 0.3 * std::cos(x / 19.0 - y / 23.0 + phase)),
        static_cast<float>(0.5 + 0.25 * std::sin((x + y) / 21.0 + 2 * phase)));
  };
}

Image constant_image(int width, int height, float r, float g, float b) {
  return render(width, height, [=](double, double) { return Eigen::Vector3f(r, g, b); });
}

FlowField random_flow(int width, int height, std::uint64_t seed, double range,
                      double invalid_fraction) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(static_cast<float>(-range), static_cast<float>(range));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  Plane<float> u(height, width), v(height, width);
  Plane<bool> valid(height, width);
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    u(i) = dist(rng);
    v(i) = dist(rng);
    valid(i) = coin(rng) >= invalid_fraction;
  }
  return FlowField(std::move(u), std::move(v), std::move(valid));
}

FlowField constant_flow(int width, int height, float u, float v) {
  return FlowField(Plane<float>::Constant(height, width, u), Plane<float>::Constant(height, width, v),
                   Plane<bool>::Constant(height, width, true));
}

Mask rect_mask(int width, int height, int x0, int y0, int rw, int rh) {
  Mask m(width, height);
  for (int y = y0; y < y0 + rh; ++y) {
    for (int x = x0; x < x0 + rw; ++x) {
      if (m.contains(x, y)) m(x, y) = true;
    }
  }
  return m;
}

Mask disk_mask(int width, int height, double cx, double cy, double radius) {
  Mask m(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) m(x, y) = std::hypot(x - cx, y - cy) <= radius;
  }
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Mask toy_mask(const ToySequenceSpec& spec, int k) {
  if (spec.empty_masks) return Mask(spec.width, spec.height);
  const Vec2d o = spec.origin + k * spec.velocity;
  Mask m(spec.width, spec.height);
  const double r = spec.side / 2.0;
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      if (spec.disk) {
        m(x, y) = std::hypot(x - (o.x() + r), y - (o.y() + r)) <= r;
      } else {
        m(x, y) = x >= o.x() && x < o.x() + spec.side && y >= o.y() && y < o.y() + spec.side;
      }
    }
  }
  return m;
}

Image toy_frame(const ToySequenceSpec& spec, int k) {
  const ColorFn tex = spec.texture ? spec.texture : value_noise(17, 3.0);
  const Vec2d o = spec.origin + k * spec.velocity;
  const double r = spec.side / 2.0;
  return render(spec.width, spec.height, [&](double x, double y) {
    const bool inside = spec.disk ? std::hypot(x - (o.x() + r), y - (o.y() + r)) <= r
                                  : x >= o.x() && x < o.x() + spec.side && y >= o.y() && y < o.y() + spec.side;
    if (!inside) return Eigen::Vector3f(0.5f, 0.5f, 0.5f);
    return tex(x - k * spec.velocity.x(), y - k * spec.velocity.y());
  });
}

ToyDataset write_toy_dataset(const fs::path& root, const std::vector<ToySequenceSpec>& seqs) {
  ToyDataset data{root, root / "manifest.tsv", root / "backgrounds", root / "textures"};
  fs::create_directories(data.backgrounds);
  fs::create_directories(data.textures);
  std::string manifest = "# sequence\tindex\timage\tmask\n";
  for (const ToySequenceSpec& spec : seqs) {
    fs::create_directories(root / spec.name);
    for (int k = 0; k < spec.frames; ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "%05d", k);
      const fs::path frame = root / spec.name / (std::string(name) + ".png");
      const fs::path mask = root / spec.name / (std::string(name) + "_mask.png");
      write_png(frame, toy_frame(spec, k));
      write_mask_png(mask, toy_mask(spec, k));
      manifest += spec.name + "\t" + std::to_string(k) + "\t" + fs::relative(frame, root).string() + "\t" +
                  fs::relative(mask, root).string() + "\n";
    }
  }
  write_text(data.manifest, manifest);
  write_png(data.backgrounds / "bg0.png", render(120, 90, value_noise(1001, 6.0)));
  write_png(data.backgrounds / "bg1.png", render(40, 30, value_noise(1002, 5.0)));
  write_png(data.textures / "tex0.png", render(32, 32, value_noise(2001, 4.0)));
  write_png(data.textures / "tex1.png", render(50, 20, smooth_texture(1.0)));
  write_png(data.textures / "tex2.png", render(16, 16, value_noise(2003, 2.0)));
  return data;
}

std::string toy_config(const ToyDataset& data, const fs::path& out, const std::string& extra) {
  return "background_dir = " + data.backgrounds.string() + "\ntexture_dir = " + data.textures.string() +
         "\noutput_dir = " + out.string() + "\n" + extra;
}

std::string tree_digest(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  }
  std::sort(files.begin(), files.end());
  std::string digest;
  for (const auto& f : files) {
    digest += f.generic_string() + '\n' + read_text(root / f) + '\n';
  }
  return digest;
}

}  // namespace arapflow::testing
