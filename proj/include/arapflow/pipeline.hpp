#pragma once

#include "arapflow/arap.hpp"
#include "arapflow/matching.hpp"
#include "arapflow/model.hpp"
#include "arapflow/warp_compose.hpp"

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace arapflow {

enum class SegmentSource { FullFrame, Box, MaskFile };

std::string_view to_string(SegmentSource source);
SegmentSource parse_segment_source(std::string_view text);

struct PipelineConfig {
  std::vector<int> deltas{1, 2, 3, 4, 5};
  SegmentSource segment_source = SegmentSource::MaskFile;
  TextureMode texture_mode = TextureMode::Combined;
  int min_matches = 1;
  std::filesystem::path background_dir;
  std::filesystem::path texture_dir;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  ArapConfig arap;
  MatcherConfig matcher;
  /// When set, matches are read from `<match_dir>/<sequence>_<t>_<t+delta>.txt`
  /// instead of running the ZNCC matcher.
  std::optional<std::filesystem::path> match_dir;

  void validate() const;
  /// Canonical `key = value` text of every setting that affects outputs
  /// (the output directory is excluded).
  std::string canonical() const;
};

/// Flat `key = value` text; `#` starts a comment. Relative paths resolve
/// against `base_dir`. Unknown keys are rejected.
PipelineConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {});
PipelineConfig read_config(const std::filesystem::path& path);

/// Applies a single `key = value` setting; shared by the config reader and
/// command-line overrides.
void apply_setting(PipelineConfig& cfg, std::string_view key, std::string_view value,
                   const std::filesystem::path& base_dir = {});

struct Sequence {
  std::string name;
  std::vector<int> frame_indices;
  std::vector<std::filesystem::path> frames;
  std::vector<std::filesystem::path> masks;  // empty, or 1:1 with frames
};

struct SequenceManifest {
  std::vector<Sequence> sequences;
};

/// Tab-separated `sequence  frame_index  image_path  [mask_path]` lines.
/// Sequences keep first-appearance order; frames are sorted by index.
SequenceManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {});
SequenceManifest read_manifest(const std::filesystem::path& path);

struct FramePair {
  std::size_t sequence = 0;
  std::size_t t = 0;  // position within the sequence
  std::size_t t_next = 0;
  int delta = 0;

  friend bool operator==(const FramePair&, const FramePair&) = default;
};

/// All in-range (t, t+delta) pairs, ordered by sequence, then t, then delta.
std::vector<FramePair> sample_pairs(const SequenceManifest& manifest, const std::vector<int>& deltas);

/// FullFrame ignores `mask` and returns all-true of `dims`; Box fills the
/// mask's bounding box; MaskFile returns the mask as is.
Mask derive_segment(const Mask* mask, SegmentSource source, Dims dims);

struct DeltaStats {
  std::int64_t pairs = 0;
  std::int64_t pixels = 0;
  double mean_magnitude = 0.0;
  double max_magnitude = 0.0;
};

struct DatasetSummary {
  std::int64_t pairs_seen = 0;
  std::int64_t skipped_no_match = 0;
  std::int64_t solver_failures = 0;
  std::int64_t triples_written = 0;
  std::map<int, DeltaStats> per_delta;

  std::string to_text() const;
};

/// Runs the generation loop over every sampled pair and writes
/// `<output>/<seq>/<t>_<t+delta>_<mode>/{frame1.png, frame2.png, flow.flo, mask.png, meta.txt}`
/// plus `<output>/summary.txt`. `jobs` = 0 uses the hardware concurrency.
DatasetSummary generate(const PipelineConfig& config, const SequenceManifest& manifest,
                        unsigned jobs = 1);

}  // namespace arapflow
