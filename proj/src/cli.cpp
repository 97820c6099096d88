#include "arapflow/cli.hpp"

#include "arapflow/arap.hpp"
#include "arapflow/eval_viz.hpp"
#include "arapflow/image_io.hpp"
#include "arapflow/matching.hpp"
#include "arapflow/pipeline.hpp"

#include <CLI11.hpp>
#include <glob.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>

namespace arapflow {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int digits = 9) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<double> parse_edges(const std::string& text) {
  std::vector<double> edges;
  std::stringstream in(text);
  std::string token;
  while (std::getline(in, token, ',')) {
    try {
      std::size_t used = 0;
      edges.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ValidationError("invalid bin edge '" + token + "'");
    }
  }
  return edges;
}

std::vector<fs::path> expand_glob(const std::string& pattern) {
  glob_t g{};
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<fs::path> out;
  if (rc == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  }
  ::globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) throw IoError("glob failed for " + pattern);
  std::sort(out.begin(), out.end());
  return out;
}

/// (relative name, pred path, gt path) for file or directory inputs.
std::vector<std::pair<fs::path, fs::path>> pair_flow_files(const fs::path& pred, const fs::path& gt) {
  std::vector<std::pair<fs::path, fs::path>> pairs;
  if (fs::is_directory(gt)) {
    if (!fs::is_directory(pred)) throw ValidationError("--gt is a directory but --pred is not");
    for (const auto& e : fs::recursive_directory_iterator(gt)) {
      if (!e.is_regular_file() || e.path().extension() != ".flo") continue;
      const fs::path rel = fs::relative(e.path(), gt);
      if (!fs::exists(pred / rel)) throw ValidationError("missing prediction for " + rel.string());
      pairs.emplace_back(pred / rel, e.path());
    }
    std::sort(pairs.begin(), pairs.end());
    if (pairs.empty()) throw ValidationError("no .flo files under " + gt.string());
  } else {
    if (!fs::exists(gt)) throw IoError("cannot open " + gt.string());
    pairs.emplace_back(pred, gt);
  }
  return pairs;
}

/// Object region used for occlusion analysis: the sibling mask.png written
/// by `generate`, else every valid pixel with nonzero ground-truth flow.
Mask object_region(const fs::path& gt_file, const FlowField& gt) {
  const fs::path sibling = gt_file.parent_path() / "mask.png";
  if (fs::exists(sibling)) {
    Mask m = read_mask_png(sibling);
    if (m.width() == gt.width() && m.height() == gt.height()) return m;
  }
  Mask m(gt.width(), gt.height());
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      m(x, y) = gt.valid(x, y) && (gt.u(x, y) != 0.0f || gt.v(x, y) != 0.0f);
    }
  }
  return m;
}

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
  bool verbose = false;
};

int cmd_generate(const std::string& config_path, const std::string& manifest_path,
                 const std::string& output, const GlobalOptions& g, std::ostream& out,
                 std::ostream& err) {
  PipelineConfig cfg = read_config(config_path);
  if (g.seed) cfg.seed = *g.seed;
  if (!output.empty()) cfg.output_dir = output;
  const SequenceManifest manifest = read_manifest(manifest_path);
  if (g.verbose) {
    err << "generate: " << manifest.sequences.size() << " sequences, "
        << sample_pairs(manifest, cfg.deltas).size() << " pairs\n";
  }
  const DatasetSummary summary = generate(cfg, manifest, g.jobs.value_or(0));
  out << summary.to_text();
  return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt, const std::string& region_path, bool occ,
             const GlobalOptions& g, std::ostream& out, std::ostream& err) {
  const auto files = pair_flow_files(pred, gt);
  std::optional<Mask> region;
  if (!region_path.empty()) region = read_mask_png(region_path);

  double sum_full = 0.0, sum_region = 0.0, sum_occ = 0.0;
  std::int64_t n_full = 0, n_region = 0, n_occ = 0;
  for (const auto& [pred_file, gt_file] : files) {
    const FlowField p = read_flo_file(pred_file);
    const FlowField t = read_flo_file(gt_file);
    std::optional<Mask> occluded;
    if (occ) {
      const Mask object = object_region(gt_file, t);
      occluded = occlusion_mask(t, object, Dims{t.width(), t.height()}).occ_src;
    }
    const EpeReport r = evaluate(p, t, region ? &*region : nullptr, occluded ? &*occluded : nullptr);
    if (g.verbose) err << gt_file.string() << ": epe " << fixed(r.epe_full) << "\n";
    sum_full += r.epe_full * static_cast<double>(r.count_full);
    n_full += r.count_full;
    if (r.epe_masked) sum_region += *r.epe_masked * static_cast<double>(r.count_masked);
    n_region += r.count_masked;
    if (r.epe_occluded) sum_occ += *r.epe_occluded * static_cast<double>(r.count_occluded);
    n_occ += r.count_occluded;
  }
  if (region && n_region == 0) throw ValidationError("eval: region selects no valid pixel");

  out << "files: " << files.size() << "\n";
  out << "pixels_full: " << n_full << "\n";
  out << "epe_full: " << fixed(sum_full / static_cast<double>(n_full)) << "\n";
  if (region) {
    out << "pixels_region: " << n_region << "\n";
    out << "epe_region: " << fixed(sum_region / static_cast<double>(n_region)) << "\n";
  }
  if (occ) {
    out << "pixels_occluded: " << n_occ << "\n";
    out << "epe_occluded: " << (n_occ ? fixed(sum_occ / static_cast<double>(n_occ)) : "n/a") << "\n";
  }
  return 0;
}

int cmd_stats(const std::string& pattern, const std::string& bins, std::ostream& out) {
  const auto paths = expand_glob(pattern);
  if (paths.empty()) throw ValidationError("no flow files match " + pattern);
  std::vector<FlowField> flows;
  for (const fs::path& p : paths) flows.push_back(read_flo_file(p));
  const std::vector<double> edges = parse_edges(bins);
  const DisplacementStats s = displacement_stats(flows, edges);
  out << "files: " << paths.size() << "\n";
  out << "pixels: " << s.total << "\n";
  out << "mean: " << fixed(s.mean) << "\n";
  out << "median: " << fixed(s.median) << "\n";
  out << "p90: " << fixed(s.p90) << "\n";
  out << "max: " << fixed(s.max) << "\n";
  out << "below " << fixed(edges.front(), 3) << ": " << s.below << "\n";
  for (std::size_t i = 0; i < s.counts.size(); ++i) {
    out << "bin [" << fixed(edges[i], 3) << ", " << fixed(edges[i + 1], 3)
        << (i + 1 == s.counts.size() ? "]" : ")") << ": " << s.counts[i] << "\n";
  }
  out << "above " << fixed(edges.back(), 3) << ": " << s.above << "\n";
  return 0;
}

int cmd_viz(const std::string& flow_path, const std::string& out_path, std::optional<double> max_mag) {
  write_png(out_path, flow_to_color(read_flo_file(flow_path), max_mag));
  return 0;
}

int cmd_match(const std::string& img1_path, const std::string& img2_path, const std::string& mask_path,
              const std::string& out_path, const MatcherConfig& cfg, std::ostream& out) {
  const Image img1 = read_png(img1_path);
  const Image img2 = read_png(img2_path);
  const Mask mask =
      mask_path.empty() ? Mask(img1.width(), img1.height(), true) : read_mask_png(mask_path);
  const MatchSet matches = zncc_match(img1, img2, mask, cfg);
  const std::string text = serialize_matches(matches);
  if (out_path.empty()) {
    out << text;
  } else {
    std::ofstream f(out_path);
    f << text;
    if (!f) throw IoError("failed writing " + out_path);
    out << "matches: " << matches.size() << "\n";
  }
  return 0;
}

int cmd_solve(const std::string& matches_path, const std::string& mask_path, const std::string& size,
              const std::string& out_dir, const ArapConfig& arap, std::ostream& out) {
  Mask mask;
  if (!mask_path.empty()) {
    mask = read_mask_png(mask_path);
  } else {
    int w = 0, h = 0;
    char tail = 0;
    if (std::sscanf(size.c_str(), "%dx%d%c", &w, &h, &tail) != 2) {
      throw ValidationError("--size must look like WIDTHxHEIGHT");
    }
    mask = Mask(w, h, true);
  }
  std::ifstream in(matches_path);
  if (!in) throw IoError("cannot open " + matches_path);
  const Dims dims{mask.width(), mask.height()};
  const MatchSet matches = parse_matches(in, dims, dims);
  const SolveResult result = solve(build_lattice(mask, matches, arap.stride), arap);

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  {
    std::ofstream csv(dir / "energy.csv");
    csv << "iteration,energy,theta\n";
    char line[128];
    for (std::size_t i = 0; i < result.report.energy_trace.size(); ++i) {
      std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", i, result.report.energy_trace[i],
                    result.report.theta_trace[i]);
      csv << line;
    }
    if (!csv) throw IoError("failed writing energy.csv");
  }
  {
    std::ofstream csv(dir / "lattice.csv");
    csv << "rest_x,rest_y,deformed_x,deformed_y,constrained\n";
    char line[160];
    const Lattice& lat = result.lattice;
    for (Eigen::Index k = 0; k < lat.vertex_count(); ++k) {
      std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g,%d\n", lat.rest(0, k), lat.rest(1, k),
                    lat.deformed(0, k), lat.deformed(1, k), lat.targets[k] ? 1 : 0);
      csv << line;
    }
    if (!csv) throw IoError("failed writing lattice.csv");
  }
  write_flo_file(dir / "flow.flo", lattice_to_flow(result.lattice, mask));
  out << "iterations: " << result.report.iterations << "\n";
  out << "converged: " << (result.report.converged ? "true" : "false") << "\n";
  out << "energy: " << result.report.energy_trace.back() << "\n";
  out << "theta_deg: " << fixed(result.report.final_theta * 180.0 / std::numbers::pi, 6) << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dense non-rigid optical flow ground truth from real image pairs", "arapflow"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions global;
  std::uint64_t seed = 0;
  unsigned jobs = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every randomized choice");
  auto* jobs_opt = app.add_option("--jobs", jobs, "Worker threads (default: all cores)")
                       ->check(CLI::PositiveNumber);
  app.add_flag("--verbose", global.verbose, "Progress messages on stderr");

  std::string config_path, manifest_path, output_dir;
  auto* gen = app.add_subcommand("generate", "Generate (frame1, frame2, flow) triples from a manifest");
  gen->add_option("--config", config_path, "Pipeline config file (key = value)")->required();
  gen->add_option("--manifest", manifest_path, "Tab-separated frame manifest")->required();
  gen->add_option("--output", output_dir, "Override the config's output_dir");

  std::string pred, gt, region;
  bool occ = false;
  auto* ev = app.add_subcommand("eval", "Average end-point error of predicted flow against ground truth");
  ev->add_option("--pred", pred, "Predicted .flo file or directory")->required();
  ev->add_option("--gt", gt, "Ground-truth .flo file or directory")->required();
  ev->add_option("--region", region, "Mask PNG restricting a second EPE figure");
  ev->add_flag("--occ", occ, "Also report EPE on occluded source pixels");

  std::string flows_glob, bins;
  auto* st = app.add_subcommand("stats", "Displacement statistics of flow files");
  st->add_option("--flows", flows_glob, "Glob pattern of .flo files")->required();
  st->add_option("--bins", bins, "Comma-separated increasing bin edges in pixels")->required();

  std::string viz_flow, viz_out;
  std::optional<double> max_mag;
  auto* vz = app.add_subcommand("viz", "Render a .flo file with the Middlebury color wheel");
  vz->add_option("--flow", viz_flow, "Input .flo file")->required();
  vz->add_option("--out", viz_out, "Output PNG")->required();
  vz->add_option("--max-mag", max_mag, "Magnitude at full saturation (default: field maximum)");

  std::string img1, img2, match_mask, match_out;
  MatcherConfig mcfg;
  auto* mt = app.add_subcommand("match", "Run the built-in ZNCC matcher on an image pair");
  mt->add_option("--img1", img1, "Source frame PNG")->required();
  mt->add_option("--img2", img2, "Target frame PNG")->required();
  mt->add_option("--mask", match_mask, "Source segment mask PNG (default: full frame)");
  mt->add_option("--out", match_out, "Write matches here instead of stdout");
  mt->add_option("--patch-radius", mcfg.patch_radius, "Patch radius in pixels")->capture_default_str();
  mt->add_option("--search-radius", mcfg.search_radius, "Search radius in pixels")->capture_default_str();
  mt->add_option("--grid-step", mcfg.grid_step, "Grid step in pixels")->capture_default_str();
  mt->add_option("--min-zncc", mcfg.min_zncc, "Minimum correlation")->capture_default_str();
  mt->add_option("--fb-threshold", mcfg.fb_threshold, "Forward-backward tolerance in pixels")
      ->capture_default_str();

  std::string solve_matches, solve_mask, solve_size, solve_out;
  ArapConfig acfg;
  auto* sv = app.add_subcommand("solve", "Single-pair lattice deformation with an energy trace");
  sv->add_option("--matches", solve_matches, "Match file (x1 y1 x2 y2 [score])")->required();
  auto* mask_opt = sv->add_option("--mask", solve_mask, "Object mask PNG");
  auto* size_opt = sv->add_option("--size", solve_size, "Full-frame object of WIDTHxHEIGHT");
  mask_opt->excludes(size_opt);
  sv->add_option("--out", solve_out, "Output directory (energy.csv, lattice.csv, flow.flo)")->required();
  sv->add_option("--w-fit", acfg.w_fit, "Data term weight")->capture_default_str();
  sv->add_option("--w-reg", acfg.w_reg, "Regularizer weight")->capture_default_str();
  sv->add_option("--max-iters", acfg.max_iters, "Gauss-Newton iteration cap")->capture_default_str();
  sv->add_option("--rel-tol", acfg.rel_tol, "Relative energy decrease to stop")->capture_default_str();
  sv->add_option("--stride", acfg.stride, "Lattice vertex spacing")->capture_default_str();
  sv->add_option("--unmatched-fit", acfg.unmatched_fit, "Pull unmatched vertices to rest")
      ->capture_default_str();

  std::vector<std::string> argv_storage{"arapflow"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "arapflow: error: " << e.what() << "\n";
    const CLI::App* failing = &app;
    for (const CLI::App* sub : app.get_subcommands()) failing = sub;
    err << failing->help();
    return 2;
  }
  if (*seed_opt) global.seed = seed;
  if (*jobs_opt) global.jobs = jobs;

  try {
    if (*gen) return cmd_generate(config_path, manifest_path, output_dir, global, out, err);
    if (*ev) return cmd_eval(pred, gt, region, occ, global, out, err);
    if (*st) return cmd_stats(flows_glob, bins, out);
    if (*vz) return cmd_viz(viz_flow, viz_out, max_mag);
    if (*mt) return cmd_match(img1, img2, match_mask, match_out, mcfg, out);
    if (*sv) {
      if (solve_mask.empty() && solve_size.empty()) {
        throw ValidationError("solve needs --mask or --size");
      }
      return cmd_solve(solve_matches, solve_mask, solve_size, solve_out, acfg, out);
    }
  } catch (const ValidationError& e) {
    err << "arapflow: error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "arapflow: failure: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace arapflow
