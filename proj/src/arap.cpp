#include "arapflow/arap.hpp"

#include <Eigen/IterativeLinearSolvers>

#include <array>
#include <cmath>
#include <numbers>

namespace arapflow {

void ArapConfig::validate() const {
  if (!(w_fit > 0.0) || !(w_reg > 0.0)) throw ValidationError("ARAP weights must be positive");
  if (max_iters < 1) throw ValidationError("max_iters must be >= 1");
  if (!(rel_tol > 0.0)) throw ValidationError("rel_tol must be positive");
  if (!(damping_init > 0.0)) throw ValidationError("damping_init must be positive");
  if (stride < 1) throw ValidationError("stride must be >= 1");
}

std::size_t Lattice::constraint_count() const {
  std::size_t n = 0;
  for (const auto& t : targets) n += t.has_value();
  return n;
}

namespace {

constexpr double kDampingCeiling = 1e8;
constexpr double kCgTolerance = 1e-8;
// A first-attempt step below this (in pixels / radians) means the iterate
// sits at the floating-point floor of the energy.
constexpr double kStagnationStep = 1e-10;

int axis_vertices(int extent, int stride) { return (extent - 1 + stride - 1) / stride + 1; }

int axis_coord(int index, int extent, int stride) { return std::min(index * stride, extent - 1); }

int nearest_axis_vertex(double local, int extent, int stride, int count) {
  const double t = std::clamp(local, 0.0, static_cast<double>(extent - 1));
  const int lo = std::min(static_cast<int>(std::floor(t / stride)), count - 1);
  const int hi = std::min(lo + 1, count - 1);
  const double d_lo = std::abs(t - axis_coord(lo, extent, stride));
  const double d_hi = std::abs(t - axis_coord(hi, extent, stride));
  return d_hi < d_lo ? hi : lo;
}

/// Existing 4-neighbors of vertex (i, j), in -x, +x, -y, +y order.
struct Neighbors {
  std::array<Eigen::Index, 4> idx{};
  int count = 0;
};

Neighbors neighbors(const Lattice& lat, int i, int j) {
  Neighbors n;
  if (i > 0) n.idx[n.count++] = lat.index(i - 1, j);
  if (i + 1 < lat.cols) n.idx[n.count++] = lat.index(i + 1, j);
  if (j > 0) n.idx[n.count++] = lat.index(i, j - 1);
  if (j + 1 < lat.rows) n.idx[n.count++] = lat.index(i, j + 1);
  return n;
}

std::optional<Vec2d> fit_target(const Lattice& lat, Eigen::Index k, const ArapConfig& cfg) {
  if (lat.targets[k]) return lat.targets[k];
  if (cfg.unmatched_fit) return Vec2d(lat.rest.col(k));
  return std::nullopt;
}

Eigen::Index residual_count(const Lattice& lat, const ArapConfig& cfg) {
  Eigen::Index n = 0;
  for (Eigen::Index k = 0; k < lat.vertex_count(); ++k) n += fit_target(lat, k, cfg) ? 2 : 0;
  for (int j = 0; j < lat.rows; ++j) {
    for (int i = 0; i < lat.cols; ++i) n += 2 * neighbors(lat, i, j).count;
  }
  return n;
}

void check_finite(const Lattice& lat, double theta) {
  if (!std::isfinite(theta) || !lat.rest.allFinite() || !lat.deformed.allFinite()) {
    throw ValidationError("lattice energy: non-finite coordinates");
  }
}

Eigen::VectorXd residuals_at(const Lattice& lat, const Eigen::Matrix2Xd& d, double theta,
                             const ArapConfig& cfg) {
  Eigen::VectorXd r(residual_count(lat, cfg));
  Eigen::Index row = 0;
  const double s_fit = std::sqrt(cfg.w_fit);
  for (Eigen::Index k = 0; k < lat.vertex_count(); ++k) {
    if (const auto t = fit_target(lat, k, cfg)) {
      r.segment<2>(row) = s_fit * (d.col(k) - *t);
      row += 2;
    }
  }
  const Eigen::Matrix2d rot = rotation(theta);
  for (int j = 0; j < lat.rows; ++j) {
    for (int i = 0; i < lat.cols; ++i) {
      const Eigen::Index k = lat.index(i, j);
      const Neighbors nb = neighbors(lat, i, j);
      const double s = std::sqrt(cfg.w_reg / nb.count);
      for (int n = 0; n < nb.count; ++n) {
        const Eigen::Index kj = nb.idx[n];
        r.segment<2>(row) =
            s * (rot * (lat.rest.col(kj) - lat.rest.col(k)) - (d.col(kj) - d.col(k)));
        row += 2;
      }
    }
  }
  return r;
}

Eigen::SparseMatrix<double> jacobian_at(const Lattice& lat, double theta, const ArapConfig& cfg) {
  const Eigen::Index n_vars = 2 * lat.vertex_count() + 1;
  const Eigen::Index theta_col = n_vars - 1;
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(lat.vertex_count()) * 30);

  Eigen::Index row = 0;
  const double s_fit = std::sqrt(cfg.w_fit);
  for (Eigen::Index k = 0; k < lat.vertex_count(); ++k) {
    if (!fit_target(lat, k, cfg)) continue;
    entries.emplace_back(row, 2 * k, s_fit);
    entries.emplace_back(row + 1, 2 * k + 1, s_fit);
    row += 2;
  }
  Eigen::Matrix2d drot;
  drot << -std::sin(theta), -std::cos(theta), std::cos(theta), -std::sin(theta);
  for (int j = 0; j < lat.rows; ++j) {
    for (int i = 0; i < lat.cols; ++i) {
      const Eigen::Index k = lat.index(i, j);
      const Neighbors nb = neighbors(lat, i, j);
      const double s = std::sqrt(cfg.w_reg / nb.count);
      for (int n = 0; n < nb.count; ++n) {
        const Eigen::Index kj = nb.idx[n];
        const Vec2d dtheta = s * drot * (lat.rest.col(kj) - lat.rest.col(k));
        for (int c = 0; c < 2; ++c) {
          entries.emplace_back(row + c, 2 * k + c, s);
          entries.emplace_back(row + c, 2 * kj + c, -s);
          entries.emplace_back(row + c, theta_col, dtheta[c]);
        }
        row += 2;
      }
    }
  }
  Eigen::SparseMatrix<double> jac(row, n_vars);
  jac.setFromTriplets(entries.begin(), entries.end());
  return jac;
}

double wrap_angle(double theta) {
  double w = std::remainder(theta, 2.0 * std::numbers::pi);
  if (w <= -std::numbers::pi) w += 2.0 * std::numbers::pi;
  return w;
}

}  // namespace

Lattice make_lattice(const Box& box, int stride) {
  if (stride < 1) throw ValidationError("stride must be >= 1");
  if (box.width < 1 || box.height < 1) throw ValidationError("lattice box must be nonempty");
  Lattice lat;
  lat.box = box;
  lat.stride = stride;
  lat.cols = axis_vertices(box.width, stride);
  lat.rows = axis_vertices(box.height, stride);
  lat.rest.resize(2, Eigen::Index{lat.cols} * lat.rows);
  for (int j = 0; j < lat.rows; ++j) {
    for (int i = 0; i < lat.cols; ++i) {
      lat.rest.col(lat.index(i, j)) =
          Vec2d(box.origin.x() + axis_coord(i, box.width, stride),
                box.origin.y() + axis_coord(j, box.height, stride));
    }
  }
  lat.deformed = lat.rest;
  lat.targets.assign(lat.rest.cols(), std::nullopt);
  return lat;
}

Lattice build_lattice(const Mask& mask, const MatchSet& matches, int stride) {
  Lattice lat = make_lattice(mask_bounding_box(mask), stride);

  const auto n = static_cast<std::size_t>(lat.vertex_count());
  std::vector<Vec2d> weighted(n, Vec2d::Zero());
  std::vector<Vec2d> plain(n, Vec2d::Zero());
  std::vector<double> weight(n, 0.0);
  std::vector<int> hits(n, 0);
  for (const Match& m : matches.matches) {
    if (!m.src.allFinite() || !m.dst.allFinite()) {
      throw ValidationError("build_lattice: non-finite match coordinate");
    }
    const Vec2d local = m.src - lat.box.origin.cast<double>();
    const int i = nearest_axis_vertex(local.x(), lat.box.width, stride, lat.cols);
    const int j = nearest_axis_vertex(local.y(), lat.box.height, stride, lat.rows);
    const auto k = static_cast<std::size_t>(lat.index(i, j));
    weighted[k] += m.score * m.dst;
    weight[k] += m.score;
    plain[k] += m.dst;
    ++hits[k];
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (hits[k] == 0) continue;
    lat.targets[k] = weight[k] > 0.0 ? Vec2d(weighted[k] / weight[k]) : Vec2d(plain[k] / hits[k]);
  }
  return lat;
}

double energy(const Lattice& lat, double theta, const ArapConfig& cfg) {
  check_finite(lat, theta);
  const Eigen::Matrix2d rot = rotation(theta);
  double fit = 0.0;
  double reg = 0.0;
  for (int j = 0; j < lat.rows; ++j) {
    for (int i = 0; i < lat.cols; ++i) {
      const Eigen::Index k = lat.index(i, j);
      if (const auto t = fit_target(lat, k, cfg)) {
        fit += (lat.deformed.col(k) - *t).squaredNorm();
      }
      const Neighbors nb = neighbors(lat, i, j);
      double local = 0.0;
      for (int n = 0; n < nb.count; ++n) {
        const Eigen::Index kj = nb.idx[n];
        local += (rot * (lat.rest.col(kj) - lat.rest.col(k)) -
                  (lat.deformed.col(kj) - lat.deformed.col(k)))
                     .squaredNorm();
      }
      if (nb.count > 0) reg += local / nb.count;
    }
  }
  return cfg.w_fit * fit + cfg.w_reg * reg;
}

Eigen::VectorXd residuals(const Lattice& lat, double theta, const ArapConfig& cfg) {
  check_finite(lat, theta);
  return residuals_at(lat, lat.deformed, theta, cfg);
}

Eigen::SparseMatrix<double> jacobian(const Lattice& lat, double theta, const ArapConfig& cfg) {
  check_finite(lat, theta);
  return jacobian_at(lat, theta, cfg);
}

SolveResult solve(const Lattice& lat, const ArapConfig& cfg) {
  cfg.validate();
  SolveResult result{lat, RotationState{}, SolveReport{}};
  Lattice& cur = result.lattice;
  cur.deformed = cur.rest;
  double theta = 0.0;
  check_finite(cur, theta);

  const Eigen::Index n_vars = 2 * cur.vertex_count() + 1;
  Eigen::SparseMatrix<double> identity(n_vars, n_vars);
  identity.setIdentity();

  Eigen::VectorXd r = residuals_at(cur, cur.deformed, theta, cfg);
  double e = r.squaredNorm();
  SolveReport& report = result.report;
  report.energy_trace.push_back(e);
  report.theta_trace.push_back(theta);

  double damping = cfg.damping_init;
  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                           Eigen::DiagonalPreconditioner<double>>
      cg;
  cg.setTolerance(kCgTolerance);

  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    report.iterations = iter;
    const Eigen::SparseMatrix<double> jac = jacobian_at(cur, theta, cfg);
    const Eigen::VectorXd grad = jac.transpose() * r;
    if (e == 0.0 || grad.lpNorm<Eigen::Infinity>() == 0.0) {
      report.converged = true;
      break;
    }
    const Eigen::SparseMatrix<double> normal = jac.transpose() * jac;

    bool accepted = false;
    bool stagnated = false;
    bool first_attempt = true;
    Eigen::VectorXd r_new;
    Eigen::Matrix2Xd d_new;
    double theta_new = theta;
    double e_new = e;
    while (!accepted) {
      cg.compute(normal + damping * identity);
      const Eigen::VectorXd step = cg.solve(-grad);
      const bool usable = cg.info() == Eigen::Success && step.allFinite();
      if (usable && first_attempt && step.lpNorm<Eigen::Infinity>() < kStagnationStep) {
        stagnated = true;
        break;
      }
      first_attempt = false;
      if (usable) {
        d_new = cur.deformed +
                Eigen::Map<const Eigen::Matrix2Xd>(step.data(), 2, cur.vertex_count());
        theta_new = theta + step[n_vars - 1];
        r_new = residuals_at(cur, d_new, theta_new, cfg);
        e_new = r_new.squaredNorm();
        if (e_new < e) {
          accepted = true;
          damping *= 0.5;
          break;
        }
      }
      damping *= 10.0;
      if (damping > kDampingCeiling) {
        throw DegenerateSystem("ARAP solve: no descent step before damping exceeded 1e8");
      }
    }
    if (stagnated) {
      report.converged = true;
      break;
    }

    const double rel_decrease = (e - e_new) / e;
    cur.deformed = std::move(d_new);
    theta = theta_new;
    r = std::move(r_new);
    e = e_new;
    report.energy_trace.push_back(e);
    report.theta_trace.push_back(wrap_angle(theta));
    if (rel_decrease < cfg.rel_tol) {
      report.converged = true;
      break;
    }
  }

  report.final_theta = wrap_angle(theta);
  result.rotation.theta = report.final_theta;
  return result;
}

FlowField lattice_to_flow(const Lattice& lat, const Mask& mask) {
  Plane<float> u = Plane<float>::Zero(mask.height(), mask.width());
  Plane<float> v = Plane<float>::Zero(mask.height(), mask.width());
  Plane<bool> valid = Plane<bool>::Constant(mask.height(), mask.width(), false);
  const Eigen::Matrix2Xd disp = lat.deformed - lat.rest;

  // Cell index and interpolation weight of a local coordinate along one axis.
  auto locate = [&](int local, int extent, int count) {
    const int lo = std::min(local / lat.stride, count - 1);
    const int lo_coord = axis_coord(lo, extent, lat.stride);
    if (lo + 1 >= count || local == lo_coord) return std::pair{lo, 0.0};
    const int hi_coord = axis_coord(lo + 1, extent, lat.stride);
    return std::pair{lo, static_cast<double>(local - lo_coord) / (hi_coord - lo_coord)};
  };

  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask(x, y)) continue;
      const int lx = x - lat.box.origin.x();
      const int ly = y - lat.box.origin.y();
      if (lx < 0 || ly < 0 || lx >= lat.box.width || ly >= lat.box.height) {
        throw ValidationError("lattice_to_flow: mask pixel outside the lattice box");
      }
      const auto [i, tx] = locate(lx, lat.box.width, lat.cols);
      const auto [j, ty] = locate(ly, lat.box.height, lat.rows);
      const int i1 = std::min(i + 1, lat.cols - 1);
      const int j1 = std::min(j + 1, lat.rows - 1);
      const Vec2d f = (1 - tx) * (1 - ty) * disp.col(lat.index(i, j)) +
                      tx * (1 - ty) * disp.col(lat.index(i1, j)) +
                      (1 - tx) * ty * disp.col(lat.index(i, j1)) +
                      tx * ty * disp.col(lat.index(i1, j1));
      u(y, x) = static_cast<float>(f.x());
      v(y, x) = static_cast<float>(f.y());
      valid(y, x) = true;
    }
  }
  return FlowField(std::move(u), std::move(v), std::move(valid));
}

}  // namespace arapflow
