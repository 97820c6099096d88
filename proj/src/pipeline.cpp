#include "arapflow/pipeline.hpp"

#include "arapflow/eval_viz.hpp"
#include "arapflow/image_io.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cinttypes>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_map>

namespace arapflow {

namespace fs = std::filesystem;

std::string_view to_string(SegmentSource source) {
  switch (source) {
    case SegmentSource::FullFrame: return "full";
    case SegmentSource::Box: return "box";
    case SegmentSource::MaskFile: return "mask";
  }
  return "?";
}

SegmentSource parse_segment_source(std::string_view text) {
  if (text == "full") return SegmentSource::FullFrame;
  if (text == "box") return SegmentSource::Box;
  if (text == "mask") return SegmentSource::MaskFile;
  throw ValidationError("segment_source must be full, box or mask, got '" + std::string(text) + "'");
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_value(std::string_view key, std::string_view text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ValidationError("invalid value for " + std::string(key) + ": '" + std::string(text) + "'");
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ValidationError("invalid boolean for " + std::string(key) + ": '" + std::string(text) + "'");
}

fs::path resolve(const fs::path& base, std::string_view text) {
  fs::path p{std::string(text)};
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal();
}

std::string fmt_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

void apply_setting(PipelineConfig& cfg, std::string_view key, std::string_view value,
                   const fs::path& base_dir) {
  if (key == "deltas") {
    cfg.deltas.clear();
    std::string_view rest = value;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      cfg.deltas.push_back(parse_value<int>(key, trim(rest.substr(0, comma))));
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
  } else if (key == "segment_source") {
    cfg.segment_source = parse_segment_source(value);
  } else if (key == "texture_mode") {
    cfg.texture_mode = parse_texture_mode(value);
  } else if (key == "min_matches") {
    cfg.min_matches = parse_value<int>(key, value);
  } else if (key == "background_dir") {
    cfg.background_dir = resolve(base_dir, value);
  } else if (key == "texture_dir") {
    cfg.texture_dir = resolve(base_dir, value);
  } else if (key == "seed") {
    cfg.seed = parse_value<std::uint64_t>(key, value);
  } else if (key == "output_dir") {
    cfg.output_dir = resolve(base_dir, value);
  } else if (key == "matcher") {
    if (value == "zncc") {
      cfg.match_dir.reset();
    } else if (value.starts_with("external:")) {
      cfg.match_dir = resolve(base_dir, value.substr(9));
    } else {
      throw ValidationError("matcher must be 'zncc' or 'external:<dir>'");
    }
  } else if (key == "arap.w_fit") {
    cfg.arap.w_fit = parse_value<double>(key, value);
  } else if (key == "arap.w_reg") {
    cfg.arap.w_reg = parse_value<double>(key, value);
  } else if (key == "arap.max_iters") {
    cfg.arap.max_iters = parse_value<int>(key, value);
  } else if (key == "arap.rel_tol") {
    cfg.arap.rel_tol = parse_value<double>(key, value);
  } else if (key == "arap.damping_init") {
    cfg.arap.damping_init = parse_value<double>(key, value);
  } else if (key == "arap.stride") {
    cfg.arap.stride = parse_value<int>(key, value);
  } else if (key == "arap.unmatched_fit") {
    cfg.arap.unmatched_fit = parse_bool(key, value);
  } else if (key == "zncc.patch_radius") {
    cfg.matcher.patch_radius = parse_value<int>(key, value);
  } else if (key == "zncc.search_radius") {
    cfg.matcher.search_radius = parse_value<int>(key, value);
  } else if (key == "zncc.grid_step") {
    cfg.matcher.grid_step = parse_value<int>(key, value);
  } else if (key == "zncc.min_zncc") {
    cfg.matcher.min_zncc = parse_value<double>(key, value);
  } else if (key == "zncc.fb_threshold") {
    cfg.matcher.fb_threshold = parse_value<double>(key, value);
  } else {
    throw ValidationError("unknown config key '" + std::string(key) + "'");
  }
}

void PipelineConfig::validate() const {
  if (deltas.empty()) throw ValidationError("deltas must not be empty");
  for (int d : deltas) {
    if (d < 1) throw ValidationError("every delta must be >= 1");
  }
  if (min_matches < 1) throw ValidationError("min_matches must be >= 1");
  if (output_dir.empty()) throw ValidationError("output_dir is required");
  if (background_dir.empty()) throw ValidationError("background_dir is required");
  if (texture_mode != TextureMode::Original && texture_dir.empty()) {
    throw ValidationError("texture_dir is required for texture modes R and C");
  }
  arap.validate();
  matcher.validate();
}

std::string PipelineConfig::canonical() const {
  std::ostringstream out;
  out << "deltas =";
  for (std::size_t i = 0; i < deltas.size(); ++i) out << (i ? "," : " ") << deltas[i];
  out << "\nsegment_source = " << to_string(segment_source)
      << "\ntexture_mode = " << to_string(texture_mode) << "\nmin_matches = " << min_matches
      << "\nbackground_dir = " << background_dir.generic_string()
      << "\ntexture_dir = " << texture_dir.generic_string() << "\nseed = " << seed
      << "\nmatcher = " << (match_dir ? "external:" + match_dir->generic_string() : "zncc")
      << "\narap.w_fit = " << fmt_double(arap.w_fit) << "\narap.w_reg = " << fmt_double(arap.w_reg)
      << "\narap.max_iters = " << arap.max_iters << "\narap.rel_tol = " << fmt_double(arap.rel_tol)
      << "\narap.damping_init = " << fmt_double(arap.damping_init)
      << "\narap.stride = " << arap.stride
      << "\narap.unmatched_fit = " << (arap.unmatched_fit ? "true" : "false")
      << "\nzncc.patch_radius = " << matcher.patch_radius
      << "\nzncc.search_radius = " << matcher.search_radius
      << "\nzncc.grid_step = " << matcher.grid_step
      << "\nzncc.min_zncc = " << fmt_double(matcher.min_zncc)
      << "\nzncc.fb_threshold = " << fmt_double(matcher.fb_threshold) << "\n";
  return out.str();
}

PipelineConfig parse_config(std::istream& in, const fs::path& base_dir) {
  PipelineConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view content = trim(line);
    if (content.empty() || content.front() == '#') continue;
    const auto eq = content.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    apply_setting(cfg, trim(content.substr(0, eq)), trim(content.substr(eq + 1)), base_dir);
  }
  return cfg;
}

PipelineConfig read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse_config(in, path.parent_path());
}

SequenceManifest parse_manifest(std::istream& in, const fs::path& base_dir) {
  struct Row {
    int index;
    fs::path frame;
    std::optional<fs::path> mask;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<Row>> rows;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || trim(line).front() == '#') continue;
    std::vector<std::string_view> fields;
    std::string_view rest = line;
    while (true) {
      const auto tab = rest.find('\t');
      fields.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest = rest.substr(tab + 1);
    }
    if (fields.size() < 3 || fields.size() > 4) {
      throw ValidationError("manifest line " + std::to_string(line_no) +
                            ": expected 3 or 4 tab-separated fields");
    }
    const std::string name{trim(fields[0])};
    if (name.empty()) throw ValidationError("manifest line " + std::to_string(line_no) + ": empty sequence name");
    Row row{parse_value<int>("frame_index", trim(fields[1])), resolve(base_dir, trim(fields[2])), {}};
    if (fields.size() == 4 && !trim(fields[3]).empty()) row.mask = resolve(base_dir, trim(fields[3]));
    if (!rows.contains(name)) order.push_back(name);
    rows[name].push_back(std::move(row));
  }

  SequenceManifest manifest;
  for (const std::string& name : order) {
    auto& seq_rows = rows[name];
    std::stable_sort(seq_rows.begin(), seq_rows.end(),
                     [](const Row& a, const Row& b) { return a.index < b.index; });
    Sequence seq;
    seq.name = name;
    const bool with_masks = seq_rows.front().mask.has_value();
    for (std::size_t i = 0; i < seq_rows.size(); ++i) {
      if (i > 0 && seq_rows[i].index == seq_rows[i - 1].index) {
        throw ValidationError("manifest: duplicate frame index in sequence " + name);
      }
      if (seq_rows[i].mask.has_value() != with_masks) {
        throw ValidationError("manifest: sequence " + name + " mixes frames with and without masks");
      }
      seq.frame_indices.push_back(seq_rows[i].index);
      seq.frames.push_back(seq_rows[i].frame);
      if (with_masks) seq.masks.push_back(*seq_rows[i].mask);
    }
    if (seq.frames.size() < 2) {
      throw ValidationError("manifest: sequence " + name + " needs at least 2 frames");
    }
    manifest.sequences.push_back(std::move(seq));
  }
  return manifest;
}

SequenceManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

std::vector<FramePair> sample_pairs(const SequenceManifest& manifest, const std::vector<int>& deltas) {
  std::vector<FramePair> pairs;
  for (std::size_t s = 0; s < manifest.sequences.size(); ++s) {
    const std::size_t n = manifest.sequences[s].frames.size();
    for (std::size_t t = 0; t < n; ++t) {
      for (int d : deltas) {
        if (d >= 1 && t + static_cast<std::size_t>(d) < n) {
          pairs.push_back(FramePair{s, t, t + static_cast<std::size_t>(d), d});
        }
      }
    }
  }
  return pairs;
}

Mask derive_segment(const Mask* mask, SegmentSource source, Dims dims) {
  if (source == SegmentSource::FullFrame) return Mask(dims.width, dims.height, true);
  if (!mask) throw ValidationError("segment source requires a mask file");
  if (mask->width() != dims.width || mask->height() != dims.height) {
    throw ValidationError("mask dimensions differ from frame");
  }
  if (source == SegmentSource::MaskFile || !mask->any()) return *mask;
  const Box box = mask_bounding_box(*mask);
  Mask out(dims.width, dims.height);
  for (int y = box.origin.y(); y < box.origin.y() + box.height; ++y) {
    for (int x = box.origin.x(); x < box.origin.x() + box.width; ++x) out(x, y) = true;
  }
  return out;
}

std::string DatasetSummary::to_text() const {
  std::ostringstream out;
  out << "pairs_seen = " << pairs_seen << "\nskipped_no_match = " << skipped_no_match
      << "\nsolver_failures = " << solver_failures << "\ntriples_written = " << triples_written
      << "\n";
  for (const auto& [delta, s] : per_delta) {
    out << "delta " << delta << ": pairs = " << s.pairs << ", pixels = " << s.pixels
        << ", mean_magnitude = " << fmt_double(s.mean_magnitude)
        << ", max_magnitude = " << fmt_double(s.max_magnitude) << "\n";
  }
  return out.str();
}

namespace {

std::vector<fs::path> list_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no .png images in " + dir.string());
  return out;
}

/// Background-sized window of `bg` at a random offset, upscaling first when
/// `bg` is smaller than the frame.
Image background_window(const Image& bg, Dims frame, std::mt19937_64& rng) {
  Image src = bg.to_rgb();
  if (src.width() < frame.width || src.height() < frame.height) {
    const double scale = std::max(static_cast<double>(frame.width) / src.width(),
                                  static_cast<double>(frame.height) / src.height());
    src = resize_bilinear(src, std::max(frame.width, static_cast<int>(std::ceil(src.width() * scale))),
                          std::max(frame.height, static_cast<int>(std::ceil(src.height() * scale))));
  }
  const auto ox = static_cast<int>(rng() % static_cast<std::uint64_t>(src.width() - frame.width + 1));
  const auto oy = static_cast<int>(rng() % static_cast<std::uint64_t>(src.height() - frame.height + 1));
  return Image(frame.width, frame.height, 3,
               Plane<float>(src.data().block(oy, std::int64_t{ox} * 3, frame.height,
                                             std::int64_t{frame.width} * 3)));
}

struct PairOutcome {
  bool skipped_no_match = false;
  bool solver_failure = false;
  int triples = 0;
  std::int64_t pixels = 0;
  double magnitude_sum = 0.0;
  double magnitude_max = 0.0;
};

class Generator {
 public:
  Generator(const PipelineConfig& cfg, const SequenceManifest& manifest)
      : cfg_(cfg),
        manifest_(manifest),
        config_hash_(fnv1a(cfg.canonical())),
        backgrounds_(list_pngs(cfg.background_dir)) {
    if (cfg.texture_mode != TextureMode::Original) {
      for (const fs::path& p : list_pngs(cfg.texture_dir)) textures_.push_back(read_png(p));
    }
  }

  PairOutcome run(const FramePair& pair) const {
    const Sequence& seq = manifest_.sequences[pair.sequence];
    const int t_index = seq.frame_indices[pair.t];
    const int next_index = seq.frame_indices[pair.t_next];
    PairOutcome outcome;

    const Image frame1 = read_png(seq.frames[pair.t]);
    const Image frame2 = read_png(seq.frames[pair.t_next]);
    if (frame1.width() != frame2.width() || frame1.height() != frame2.height()) {
      throw ValidationError("frames of sequence " + seq.name + " differ in size");
    }
    const Dims dims{frame1.width(), frame1.height()};
    std::optional<Mask> file_mask;
    if (cfg_.segment_source != SegmentSource::FullFrame) {
      if (seq.masks.empty()) {
        throw ValidationError("sequence " + seq.name + " has no mask files for segment_source " +
                              std::string(to_string(cfg_.segment_source)));
      }
      file_mask = read_mask_png(seq.masks[pair.t]);
    }
    const Mask segment = derive_segment(file_mask ? &*file_mask : nullptr, cfg_.segment_source, dims);

    MatchSet matches;
    if (segment.any()) matches = find_matches(seq.name, t_index, next_index, frame1, frame2, segment);
    if (!segment.any() || matches.size() < static_cast<std::size_t>(cfg_.min_matches)) {
      outcome.skipped_no_match = true;
      return outcome;
    }

    SolveResult solved;
    try {
      solved = solve(build_lattice(segment, matches, cfg_.arap.stride), cfg_.arap);
    } catch (const DegenerateSystem&) {
      outcome.solver_failure = true;
      return outcome;
    }
    const FlowField flow = lattice_to_flow(solved.lattice, segment);
    for (int y = 0; y < dims.height; ++y) {
      for (int x = 0; x < dims.width; ++x) {
        if (!segment(x, y)) continue;
        const double m = std::hypot(static_cast<double>(flow.u(x, y)), static_cast<double>(flow.v(x, y)));
        outcome.magnitude_sum += m;
        outcome.magnitude_max = std::max(outcome.magnitude_max, m);
        ++outcome.pixels;
      }
    }

    std::seed_seq seq_seed{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                           static_cast<std::uint32_t>(fnv1a(seq.name)),
                           static_cast<std::uint32_t>(fnv1a(seq.name) >> 32),
                           static_cast<std::uint32_t>(t_index), static_cast<std::uint32_t>(pair.delta)};
    std::mt19937_64 rng(seq_seed);

    std::vector<TextureMode> samples;
    if (cfg_.texture_mode != TextureMode::Random) samples.push_back(TextureMode::Original);
    if (cfg_.texture_mode != TextureMode::Original) samples.push_back(TextureMode::Random);

    const auto flo_bytes = write_flo(flow);
    for (TextureMode mode : samples) {
      const Image obj = mode == TextureMode::Original
                            ? frame1
                            : replace_texture(frame1, segment, textures_, rng());
      const WarpResult warp = forward_warp(obj, segment, flow);
      const Image& bg_source = load_background(rng);
      const Image bg = background_window(bg_source, dims, rng);
      const Triple triple = assemble_triple(bg, obj, segment, warp, flow, Vec2i::Zero());

      const fs::path dir = cfg_.output_dir / seq.name /
                           (std::to_string(t_index) + "_" + std::to_string(next_index) + "_" +
                            std::string(to_string(mode)));
      fs::create_directories(dir);
      write_png(dir / "frame1.png", triple.frame1);
      write_png(dir / "frame2.png", triple.frame2);
      write_flo_file(dir / "flow.flo", triple.flow);
      write_mask_png(dir / "mask.png", triple.object_mask);
      write_meta(dir / "meta.txt", seq.name, t_index, next_index, pair.delta, mode, matches, solved);
      ++outcome.triples;
    }
    return outcome;
  }

 private:
  MatchSet find_matches(const std::string& seq_name, int t_index, int next_index, const Image& frame1,
                        const Image& frame2, const Mask& segment) const {
    const Dims dims{frame1.width(), frame1.height()};
    if (!cfg_.match_dir) return zncc_match(frame1, frame2, segment, cfg_.matcher);
    const fs::path file = *cfg_.match_dir / (seq_name + "_" + std::to_string(t_index) + "_" +
                                             std::to_string(next_index) + ".txt");
    if (!fs::exists(file)) return MatchSet{{}, dims, dims};
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    try {
      return filter_to_mask(parse_matches(in, dims, dims), segment);
    } catch (const ValidationError& e) {
      throw ValidationError(file.string() + ": " + e.what());
    }
  }

  const Image& load_background(std::mt19937_64& rng) const {
    const std::size_t pick = rng() % backgrounds_.size();
    std::lock_guard lock(bg_mutex_);
    auto it = bg_cache_.find(pick);
    if (it == bg_cache_.end()) it = bg_cache_.emplace(pick, read_png(backgrounds_[pick])).first;
    return it->second;
  }

  void write_meta(const fs::path& path, const std::string& seq_name, int t_index, int next_index,
                  int delta, TextureMode mode, const MatchSet& matches, const SolveResult& solved) const {
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016" PRIx64, config_hash_);
    std::ofstream out(path);
    out << "config_hash = " << hash << "\nsequence = " << seq_name << "\nframe_t = " << t_index
        << "\nframe_t_delta = " << next_index << "\ndelta = " << delta << "\nmode = " << to_string(mode)
        << "\nmatches = " << matches.size() << "\nsolver_iterations = " << solved.report.iterations
        << "\nconverged = " << (solved.report.converged ? "true" : "false")
        << "\nenergy_initial = " << fmt_double(solved.report.energy_trace.front())
        << "\nenergy = " << fmt_double(solved.report.energy_trace.back())
        << "\ntheta = " << fmt_double(solved.report.final_theta) << "\n";
    if (!out) throw IoError("failed writing " + path.string());
  }

  const PipelineConfig& cfg_;
  const SequenceManifest& manifest_;
  std::uint64_t config_hash_;
  std::vector<fs::path> backgrounds_;
  std::vector<Image> textures_;
  // std::map nodes are stable, so references survive later insertions.
  mutable std::map<std::size_t, Image> bg_cache_;
  mutable std::mutex bg_mutex_;
};

}  // namespace

DatasetSummary generate(const PipelineConfig& config, const SequenceManifest& manifest, unsigned jobs) {
  config.validate();
  const std::vector<FramePair> pairs = sample_pairs(manifest, config.deltas);
  const Generator generator(config, manifest);
  fs::create_directories(config.output_dir);

  std::vector<PairOutcome> outcomes(pairs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < pairs.size(); i = next++) {
      try {
        outcomes[i] = generator.run(pairs[i]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = pairs.size();
      }
    }
  };
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, std::max<std::size_t>(pairs.size(), 1)));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  DatasetSummary summary;
  std::map<int, double> sums;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const PairOutcome& o = outcomes[i];
    ++summary.pairs_seen;
    summary.skipped_no_match += o.skipped_no_match;
    summary.solver_failures += o.solver_failure;
    summary.triples_written += o.triples;
    if (o.pixels == 0) continue;
    DeltaStats& d = summary.per_delta[pairs[i].delta];
    ++d.pairs;
    d.pixels += o.pixels;
    d.max_magnitude = std::max(d.max_magnitude, o.magnitude_max);
    sums[pairs[i].delta] += o.magnitude_sum;
  }
  for (auto& [delta, d] : summary.per_delta) d.mean_magnitude = sums[delta] / static_cast<double>(d.pixels);

  std::ofstream out(config.output_dir / "summary.txt");
  out << summary.to_text();
  if (!out) throw IoError("failed writing " + (config.output_dir / "summary.txt").string());
  return summary;
}

}  // namespace arapflow
