#pragma once

#include "arapflow/model.hpp"

#include <Eigen/SparseCore>

#include <optional>
#include <vector>

namespace arapflow {

/// Weights and solver controls for the lattice energy
///
///   E(d, theta) = sum_k  w_fit |d_k - m_k|^2
///               + w_reg / |N(k)| sum_{j in N(k)} |R(theta)(x_j - x_k) - (d_j - d_k)|^2
///
/// where m_k is the vertex's match target (or its rest position when it has
/// none and `unmatched_fit` is set) and N(k) are the existing 4-neighbors.
struct ArapConfig {
  double w_fit = 10.0;
  double w_reg = 0.1;
  int max_iters = 50;
  double rel_tol = 1e-6;
  double damping_init = 1e-4;
  int stride = 1;
  bool unmatched_fit = true;

  void validate() const;
};

/// Regular vertex grid over an object's bounding box. Vertex (i, j) sits at
/// origin + (min(i*stride, width-1), min(j*stride, height-1)).
struct Lattice {
  Box box;
  int stride = 1;
  int cols = 0;
  int rows = 0;
  Eigen::Matrix2Xd rest;
  Eigen::Matrix2Xd deformed;
  std::vector<std::optional<Vec2d>> targets;

  Eigen::Index vertex_count() const { return rest.cols(); }
  Eigen::Index index(int i, int j) const { return Eigen::Index{j} * cols + i; }
  std::size_t constraint_count() const;
};

/// Vertex lattice over `box` with deformed = rest and no constraints.
Lattice make_lattice(const Box& box, int stride);

/// Lattice over the mask's bounding box; each match is snapped to its
/// nearest vertex and coincident matches are merged by score-weighted mean.
Lattice build_lattice(const Mask& mask, const MatchSet& matches, int stride);

/// Energy at the lattice's current deformed coordinates and `theta`.
double energy(const Lattice& lat, double theta, const ArapConfig& cfg);

/// Stacked least-squares residuals; energy() == residuals().squaredNorm().
/// Unknowns are ordered [d0x, d0y, d1x, d1y, ..., theta].
Eigen::VectorXd residuals(const Lattice& lat, double theta, const ArapConfig& cfg);

/// Analytic Jacobian of residuals() with respect to the unknowns.
Eigen::SparseMatrix<double> jacobian(const Lattice& lat, double theta,
                                     const ArapConfig& cfg);

struct SolveReport {
  int iterations = 0;
  std::vector<double> energy_trace;
  std::vector<double> theta_trace;
  double final_theta = 0.0;
  bool converged = false;
};

struct SolveResult {
  Lattice lattice;
  RotationState rotation;
  SolveReport report;
};

/// Raised when damping exceeds its ceiling without finding a descent step.
class DegenerateSystem : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Damped Gauss-Newton over all deformed vertices and the global angle,
/// starting from d = rest, theta = 0.
SolveResult solve(const Lattice& lat, const ArapConfig& cfg);

/// Dense flow on the mask: bilinear interpolation of (deformed - rest) over
/// the enclosing lattice cell. Pixels off the mask are invalid with zero flow.
FlowField lattice_to_flow(const Lattice& lat, const Mask& mask);

}  // namespace arapflow
