#pragma once

// Forward solver: per step an elasticity solve from phi^n, an implicit nutrient
// step and a convex-split Cahn-Hilliard step solved by Newton's method.

#include "tumopt/constitutive.hpp"
#include "tumopt/field_io.hpp"
#include "tumopt/grid_fem.hpp"

#include <Eigen/SparseLU>

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

namespace tumopt {

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TimeGrid {
  double final_time = 1.0;
  int steps = 64;

  double tau() const { return final_time / steps; }
  double time(int n) const { return n == steps ? final_time : n * tau(); }
};

// ---------------------------------------------------------------------------
// Controls

/// Controls on the time levels 1..N; column / entry n-1 belongs to level n.
struct ControlTriple {
  Eigen::MatrixXd w1;  // boundary node x level
  Vector w2;
  Vector w3;

  static ControlTriple zeros(int boundary_nodes, int steps) {
    return {Eigen::MatrixXd::Zero(boundary_nodes, steps), Vector::Zero(steps), Vector::Zero(steps)};
  }
  static ControlTriple constant(int boundary_nodes, int steps, double c1, double c2, double c3) {
    return {Eigen::MatrixXd::Constant(boundary_nodes, steps, c1), Vector::Constant(steps, c2),
            Vector::Constant(steps, c3)};
  }

  int steps() const { return static_cast<int>(w2.size()); }
  bool same_shape(const ControlTriple& o) const {
    return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && w2.size() == o.w2.size() &&
           w3.size() == o.w3.size();
  }
  bool finite() const { return w1.allFinite() && w2.allFinite() && w3.allFinite(); }

  ControlTriple& operator+=(const ControlTriple& o) {
    w1 += o.w1;
    w2 += o.w2;
    w3 += o.w3;
    return *this;
  }
  ControlTriple& operator-=(const ControlTriple& o) {
    w1 -= o.w1;
    w2 -= o.w2;
    w3 -= o.w3;
    return *this;
  }
  ControlTriple& operator*=(double a) {
    w1 *= a;
    w2 *= a;
    w3 *= a;
    return *this;
  }
};

inline ControlTriple operator+(ControlTriple a, const ControlTriple& b) { return a += b; }
inline ControlTriple operator-(ControlTriple a, const ControlTriple& b) { return a -= b; }
inline ControlTriple operator*(double s, ControlTriple a) { return a *= s; }

/// Perturbation direction in control space.
using Direction = ControlTriple;

struct ControlBounds {
  ControlTriple lower;
  ControlTriple upper;

  static ControlBounds uniform(int boundary_nodes, int steps, std::array<double, 2> b1,
                               std::array<double, 2> b2, std::array<double, 2> b3) {
    ControlBounds b;
    b.lower = ControlTriple::constant(boundary_nodes, steps, b1[0], b2[0], b3[0]);
    b.upper = ControlTriple::constant(boundary_nodes, steps, b1[1], b2[1], b3[1]);
    if ((b.lower.w1.array() > b.upper.w1.array()).any() || (b.lower.w2.array() > b.upper.w2.array()).any() ||
        (b.lower.w3.array() > b.upper.w3.array()).any())
      throw ConfigError("control lower bound exceeds upper bound");
    return b;
  }

  bool admissible(const ControlTriple& w) const {
    return w.same_shape(lower) && (w.w1.array() >= lower.w1.array()).all() &&
           (w.w1.array() <= upper.w1.array()).all() && (w.w2.array() >= lower.w2.array()).all() &&
           (w.w2.array() <= upper.w2.array()).all() && (w.w3.array() >= lower.w3.array()).all() &&
           (w.w3.array() <= upper.w3.array()).all();
  }

  ControlTriple clamp(ControlTriple w) const {
    w.w1 = w.w1.cwiseMax(lower.w1).cwiseMin(upper.w1);
    w.w2 = w.w2.cwiseMax(lower.w2).cwiseMin(upper.w2);
    w.w3 = w.w3.cwiseMax(lower.w3).cwiseMin(upper.w3);
    return w;
  }
};

/// Discrete control space with inner product
/// tau sum_n [ sum_b m_b w1 v1 + w2 v2 + w3 v3 ], m_b the lumped boundary weights.
class ControlSpace {
 public:
  ControlSpace() = default;
  ControlSpace(Vector boundary_weights, double tau) : weights_(std::move(boundary_weights)), tau_(tau) {}

  double inner(const ControlTriple& a, const ControlTriple& b) const {
    return tau_ * ((a.w1.array() * b.w1.array()).matrix().transpose() * weights_).sum() +
           tau_ * a.w2.dot(b.w2) + tau_ * a.w3.dot(b.w3);
  }
  double norm(const ControlTriple& a) const { return std::sqrt(std::max(0.0, inner(a, a))); }
  double l1(const Vector& w) const { return tau_ * w.cwiseAbs().sum(); }
  const Vector& boundary_weights() const { return weights_; }
  double tau() const { return tau_; }

 private:
  Vector weights_;
  double tau_ = 1.0;
};

// ---------------------------------------------------------------------------

/// Fixed discrete operators of one grid / parameter / time-grid combination.
class Problem {
 public:
  Grid grid;
  ModelParams params;
  TimeGrid time;

  Operator mass;
  Operator stiffness;
  Operator boundary_mass;
  Vector mass_lumped;
  Vector boundary_lumped;   // full length, zero off the boundary
  Vector boundary_weights;  // one entry per boundary node
  ElasticityOperator elasticity;
  Operator coupling;  // (C(phi E*), E(eta))
  Vector elastic_load;  // (C Ebar, E(eta)) + (g, eta)_N
  Vector traction_load;
  double misfit_stiffness = 0.0;

  Problem(Grid g, ModelParams p, TimeGrid t) : grid(std::move(g)), params(std::move(p)), time(t) {
    params.validate();
    if (time.steps < 1 || !(time.final_time > 0.0)) throw ConfigError("time grid needs T > 0 and steps >= 1");
    mass = assemble_mass(grid);
    stiffness = assemble_stiffness(grid);
    boundary_mass = assemble_boundary_mass(grid, BoundaryPortion::whole);
    mass_lumped = lumped(mass);
    boundary_lumped = lumped(boundary_mass);
    boundary_weights.resize(static_cast<Eigen::Index>(grid.boundary_nodes.size()));
    for (std::size_t b = 0; b < grid.boundary_nodes.size(); ++b)
      boundary_weights[b] = boundary_lumped[grid.boundary_nodes[b]];
    elasticity = ElasticityOperator(grid, params.elasticity);
    coupling = assemble_coupling_phi_to_strain(grid, params.elasticity, params.e_star_eng());
    traction_load = assemble_traction_load(grid, params.traction);
    elastic_load = assemble_constant_stress_load(grid, params.elasticity.voigt * params.e_bar_eng()) + traction_load;
    misfit_stiffness = params.misfit_stiffness();
  }

  int nodes() const { return grid.node_count(); }
  int boundary_count() const { return static_cast<int>(grid.boundary_nodes.size()); }
  double tau() const { return time.tau(); }
  ControlSpace control_space() const { return {boundary_weights, tau()}; }

  Vector boundary_to_full(const Vector& wb) const {
    Vector f = Vector::Zero(nodes());
    for (int b = 0; b < boundary_count(); ++b) f[grid.boundary_nodes[b]] = wb[b];
    return f;
  }
  Vector full_to_boundary(const Vector& f) const {
    Vector wb(boundary_count());
    for (int b = 0; b < boundary_count(); ++b) wb[b] = f[grid.boundary_nodes[b]];
    return wb;
  }
};

// ---------------------------------------------------------------------------
// Quadrature-point helpers

/// Values at every quadrature point, index 4 * cell + q.
inline std::vector<double> values_at_points(const Grid& g, const Vector& f) {
  std::vector<double> out(4 * static_cast<std::size_t>(g.cell_count()));
  for (int c = 0; c < g.cell_count(); ++c) {
    const auto nodes = g.cell_nodes(c);
    for (int q = 0; q < 4; ++q) out[4 * c + q] = value_at(g, f, nodes, q);
  }
  return out;
}

inline std::vector<Eigen::Vector3d> strains_at_points(const Grid& g, const Vector& u) {
  std::vector<Eigen::Vector3d> out(4 * static_cast<std::size_t>(g.cell_count()));
  for (int c = 0; c < g.cell_count(); ++c) {
    const auto nodes = g.cell_nodes(c);
    for (int q = 0; q < 4; ++q) out[4 * c + q] = strain_at(g, u, nodes, q);
  }
  return out;
}

/// Load vector (v, zeta_i) for v given at quadrature points.
inline Vector assemble_point_load(const Grid& g, const std::vector<double>& v) {
  Vector f = Vector::Zero(g.node_count());
  for (int c = 0; c < g.cell_count(); ++c) {
    const auto nodes = g.cell_nodes(c);
    for (int q = 0; q < 4; ++q) {
      const double w = g.quad.weight[q] * v[4 * c + q];
      for (int a = 0; a < 4; ++a) f[nodes[a]] += w * g.quad.shape[q][a];
    }
  }
  return f;
}

/// Vector load (s, E(eta)) for an engineering-paired stress s at quadrature points.
inline Vector assemble_point_strain_load(const Grid& g, const std::vector<Eigen::Vector3d>& s) {
  Vector f = Vector::Zero(2 * g.node_count());
  std::array<Eigen::Matrix<double, 3, 8>, 4> b;
  for (int q = 0; q < 4; ++q) b[q] = strain_matrix(g, q);
  for (int c = 0; c < g.cell_count(); ++c) {
    const auto nodes = g.cell_nodes(c);
    for (int q = 0; q < 4; ++q) {
      const Eigen::Matrix<double, 8, 1> l = g.quad.weight[q] * b[q].transpose() * s[4 * c + q];
      for (int a = 0; a < 8; ++a) f[2 * nodes[a / 2] + a % 2] += l[a];
    }
  }
  return f;
}

/// Matrix G(i, dof) = (zeta_i s . E(e_dof)) for s at quadrature points.
inline SparseMatrix assemble_point_strain_coupling(const Grid& g, const std::vector<Eigen::Vector3d>& s) {
  Triplets t;
  t.reserve(32 * static_cast<std::size_t>(g.cell_count()));
  std::array<Eigen::Matrix<double, 3, 8>, 4> b;
  for (int q = 0; q < 4; ++q) b[q] = strain_matrix(g, q);
  for (int c = 0; c < g.cell_count(); ++c) {
    const auto nodes = g.cell_nodes(c);
    Eigen::Matrix<double, 4, 8> local = Eigen::Matrix<double, 4, 8>::Zero();
    for (int q = 0; q < 4; ++q) {
      const Eigen::Matrix<double, 1, 8> row = g.quad.weight[q] * s[4 * c + q].transpose() * b[q];
      for (int a = 0; a < 4; ++a) local.row(a) += g.quad.shape[q][a] * row;
    }
    for (int a = 0; a < 4; ++a)
      for (int d = 0; d < 8; ++d) t.emplace_back(nodes[a], 2 * nodes[d / 2] + d % 2, local(a, d));
  }
  SparseMatrix m(g.node_count(), 2 * g.node_count());
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

// ---------------------------------------------------------------------------

struct StateSnapshot {
  ScalarField phi;
  ScalarField mu;
  ScalarField sigma;
  VectorField u;
  double t = 0.0;
};

struct InitialData {
  ScalarField phi;
  ScalarField sigma;
};

struct InitialSpec {
  double center_x = -1.0;  // negative: domain centre
  double center_y = -1.0;
  double radius = 1.5;
  double width = 1.0;  // tanh length scale
  double sigma0 = -1.0;  // negative: sigma_c
};

/// tanh profile of a circular tumour and a constant nutrient clipped to [0, M].
inline InitialData make_initial_data(const Problem& pb, const InitialSpec& spec, double nutrient_cap_value) {
  const Grid& g = pb.grid;
  const double cx = spec.center_x < 0.0 ? 0.5 * g.lx : spec.center_x;
  const double cy = spec.center_y < 0.0 ? 0.5 * g.ly : spec.center_y;
  if (!(spec.width > 0.0)) throw ConfigError("initial interface width must be positive");
  InitialData ic;
  ic.phi.resize(g.node_count());
  for (int n = 0; n < g.node_count(); ++n) {
    const double r = std::hypot(g.x(n) - cx, g.y(n) - cy);
    ic.phi[n] = std::tanh((spec.radius - r) / spec.width);
  }
  const double s0 = spec.sigma0 < 0.0 ? pb.params.sigma_c : spec.sigma0;
  ic.sigma = Vector::Constant(g.node_count(), std::clamp(s0, 0.0, nutrient_cap_value));
  return ic;
}

// ---------------------------------------------------------------------------

struct StoragePolicy {
  /// Keep every interval-th level (and the last); 1 keeps everything.
  int interval = 1;
  /// Write the kept levels to this directory instead of holding them in memory.
  std::string directory;
};

struct StepStats {
  int newton_iterations = 0;
  double newton_residual = 0.0;
  double nutrient_residual = 0.0;
};

class StateTrajectory {
 public:
  TimeGrid time;
  StoragePolicy policy;
  ControlTriple controls;
  std::vector<std::optional<StateSnapshot>> memory;  // size N + 1
  std::vector<std::string> files;                    // size N + 1 when stored on disk
  std::vector<StepStats> stats;
  double sigma_min = 0.0;
  double sigma_max = 0.0;

  int steps() const { return time.steps; }
  int snapshot_count() const { return time.steps + 1; }
  bool kept(int n) const { return n == time.steps || n % policy.interval == 0; }
  bool complete() const {
    for (int n = 0; n <= time.steps; ++n)
      if (!memory[n] && (files.empty() || files[n].empty())) return false;
    return true;
  }
  /// Snapshot n if it is held in memory.
  const StateSnapshot& operator[](int n) const {
    if (!memory.at(n)) throw SolverError("snapshot " + std::to_string(n) + " is not held in memory");
    return *memory[n];
  }
};

inline FieldRecord snapshot_record(const Grid& g, const StateSnapshot& s) {
  FieldRecord rec;
  rec.nx = static_cast<std::uint32_t>(g.nx);
  rec.ny = static_cast<std::uint32_t>(g.ny);
  rec.time = s.t;
  rec.names = {"phi", "mu", "sigma", "u"};
  rec.components = {s.phi, s.mu, s.sigma, s.u};
  return rec;
}

inline StateSnapshot snapshot_from_record(const Grid& g, const FieldRecord& rec, const std::string& path) {
  check_record_shape(rec, g, path);
  if (rec.components.size() != 4) throw IoError("snapshot file " + path + " must hold phi, mu, sigma, u");
  StateSnapshot s{rec.components[0], rec.components[1], rec.components[2], rec.components[3], rec.time};
  if (s.phi.size() != g.node_count() || s.u.size() != 2 * g.node_count())
    throw IoError("snapshot file " + path + " has wrong field lengths");
  return s;
}

// ---------------------------------------------------------------------------

struct NewtonOptions {
  int max_iterations = 50;
  double residual_tol = 1e-9;
  double step_tol = 1e-10;
};

class StateSolver {
 public:
  explicit StateSolver(std::shared_ptr<const Problem> problem, NewtonOptions newton = {})
      : pb_(std::move(problem)), newton_(newton) {}

  const Problem& problem() const { return *pb_; }
  std::shared_ptr<const Problem> problem_ptr() const { return pb_; }
  const NewtonOptions& newton_options() const { return newton_; }

  /// Displacement solving (C(E(u) - Ebar - phi E*), E(eta)) = (g, eta)_N.
  VectorField solve_elasticity(const ScalarField& phi) const {
    const Vector load = pb_->coupling.matrix * phi + pb_->elastic_load;
    VectorField u = pb_->elasticity.solve(load);
    const double res = pb_->elasticity.relative_residual(u, load);
    if (!(res <= 1e-10) && pb_->elasticity.restrict(load).norm() > 0.0) {
      std::ostringstream msg;
      msg << "elasticity solve residual " << res << " exceeds 1e-10";
      throw SolverError(msg.str());
    }
    return u;
  }

  /// Nutrient system matrix for a given phi^n.
  SparseMatrix nutrient_matrix(const ScalarField& phi_n) const {
    const Problem& pb = *pb_;
    const ModelParams& p = pb.params;
    Vector diag = pb.params.kappa * pb.boundary_lumped;
    for (int i = 0; i < pb.nodes(); ++i)
      diag[i] += pb.mass_lumped[i] * (p.beta / pb.tau() + p.lambda_c * p.h(phi_n[i]) + p.nutrient_supply);
    SparseMatrix a = pb.stiffness.matrix;
    for (int i = 0; i < pb.nodes(); ++i) a.coeffRef(i, i) += diag[i];
    return a;
  }

  /// Implicit nutrient step with lumped reaction, capacity and Robin terms.
  /// w1 holds one value per boundary node.
  ScalarField step_nutrient(const ScalarField& sigma_prev, const ScalarField& phi_n, const Vector& w1, double w3,
                            double* residual = nullptr) const {
    const Problem& pb = *pb_;
    const ModelParams& p = pb.params;
    const SparseMatrix a = nutrient_matrix(phi_n);
    Vector rhs = p.kappa * pb.boundary_lumped.cwiseProduct(pb.boundary_to_full(w1));
    for (int i = 0; i < pb.nodes(); ++i)
      rhs[i] += pb.mass_lumped[i] * (p.beta / pb.tau() * sigma_prev[i] + p.h(phi_n[i]) * w3 +
                                     p.nutrient_supply * p.sigma_c);
    Eigen::SimplicialLDLT<SparseMatrix> solver(a);
    if (solver.info() != Eigen::Success) throw ConfigError("nutrient system is singular (assumption A1)");
    ScalarField sigma = solver.solve(rhs);
    const double res = (a * sigma - rhs).norm() / std::max(1e-300, rhs.norm());
    if (residual) *residual = res;
    if (rhs.norm() > 0.0 && !(res <= 1e-10)) {
      std::ostringstream msg;
      msg << "nutrient solve residual " << res << " exceeds 1e-10";
      throw SolverError(msg.str());
    }
    return sigma;
  }

  /// Lagged data of one Cahn-Hilliard step. Residuals:
  ///   R1 = M phi + tau K mu + c1,  c1 = -M phi^n - tau (U, zeta)
  ///   R2 = M mu - K phi - (Psi1'(phi), zeta) + c2,  c2 = M phi^n + chi M sigma + (C(..):E*, zeta)
  struct ChStepData {
    Vector c1;
    Vector c2;
  };

  ChStepData cahn_hilliard_data(const ScalarField& phi_n, const ScalarField& sigma_new, const VectorField& u_n,
                                double m) const {
    const Problem& pb = *pb_;
    const Grid& g = pb.grid;
    const ModelParams& p = pb.params;
    const auto phi_q = values_at_points(g, phi_n);
    const auto sig_q = values_at_points(g, sigma_new);
    const auto eps_q = strains_at_points(g, u_n);
    const Eigen::Vector3d e_star = p.e_star_eng();
    std::vector<double> growth(phi_q.size());
    std::vector<double> misfit(phi_q.size());
    for (std::size_t k = 0; k < phi_q.size(); ++k) {
      const Eigen::Vector3d s = stress_voigt(p, phi_q[k], eps_q[k]);
      const double a2 = frobenius_sq(s);
      growth[k] = p.lambda_p * sig_q[k] * p.f(phi_q[k]) * p.g.of_norm_sq(a2) - (p.lambda_a + m) * p.k(phi_q[k]);
      misfit[k] = s.dot(e_star);
    }
    ChStepData d;
    const Vector m_phi = pb.mass.matrix * phi_n;
    d.c1 = -m_phi - pb.tau() * assemble_point_load(g, growth);
    d.c2 = m_phi + p.chi * (pb.mass.matrix * sigma_new) + assemble_point_load(g, misfit);
    return d;
  }

  /// Nonlinear residual [R1; R2] of a Cahn-Hilliard step.
  Vector cahn_hilliard_residual(const ChStepData& d, const ScalarField& phi, const ScalarField& mu) const {
    const Problem& pb = *pb_;
    const int n = pb.nodes();
    auto cube = values_at_points(pb.grid, phi);
    for (double& v : cube) v = psi::convex_prime(v);
    Vector r(2 * n);
    r.head(n) = pb.mass.matrix * phi + pb.tau() * (pb.stiffness.matrix * mu) + d.c1;
    r.tail(n) = pb.mass.matrix * mu - pb.stiffness.matrix * phi - assemble_point_load(pb.grid, cube) + d.c2;
    return r;
  }

  /// Jacobian [[M, tau K], [-(K + D(phi)), M]] with D the Psi1'' weighted mass.
  SparseMatrix cahn_hilliard_jacobian(const ScalarField& phi) const {
    const Problem& pb = *pb_;
    const int n = pb.nodes();
    auto w = values_at_points(pb.grid, phi);
    for (double& v : w) v = psi::convex_second(v);
    const SparseMatrix d = assemble_weighted_mass(pb.grid, w);
    Triplets t;
    t.reserve(static_cast<std::size_t>(4 * pb.mass.matrix.nonZeros() + d.nonZeros()));
    const double tau = pb.tau();
    for (int k = 0; k < pb.mass.matrix.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(pb.mass.matrix, k); it; ++it) {
        t.emplace_back(it.row(), it.col(), it.value());
        t.emplace_back(n + it.row(), n + it.col(), it.value());
      }
    for (int k = 0; k < pb.stiffness.matrix.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(pb.stiffness.matrix, k); it; ++it) {
        t.emplace_back(it.row(), n + it.col(), tau * it.value());
        t.emplace_back(n + it.row(), it.col(), -it.value());
      }
    for (int k = 0; k < d.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(d, k); it; ++it) t.emplace_back(n + it.row(), it.col(), -it.value());
    SparseMatrix j(2 * n, 2 * n);
    j.setFromTriplets(t.begin(), t.end());
    return j;
  }

  /// One convex-split Cahn-Hilliard step from prev with sigma^{n+1}, u^n and drug level m.
  std::pair<ScalarField, ScalarField> step_cahn_hilliard(const StateSnapshot& prev, const ScalarField& sigma_new,
                                                         const VectorField& u_prev, double m,
                                                         StepStats* stats = nullptr) const {
    const int n = pb_->nodes();
    const ChStepData d = cahn_hilliard_data(prev.phi, sigma_new, u_prev, m);
    ScalarField phi = prev.phi;
    ScalarField mu = prev.mu;
    Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
    bool analysed = false;
    double scale = 1.0 + d.c1.cwiseAbs().maxCoeff() + d.c2.cwiseAbs().maxCoeff();
    for (int it = 1; it <= newton_.max_iterations; ++it) {
      const Vector r = cahn_hilliard_residual(d, phi, mu);
      const SparseMatrix j = cahn_hilliard_jacobian(phi);
      if (!analysed) {
        lu.analyzePattern(j);
        analysed = true;
      }
      lu.factorize(j);
      if (lu.info() != Eigen::Success) throw SolverError("Cahn-Hilliard Jacobian factorization failed");
      const Vector dx = lu.solve(-r);
      phi += dx.head(n);
      mu += dx.tail(n);
      if (!dx.allFinite() || !phi.allFinite()) break;
      const double step = dx.cwiseAbs().maxCoeff();
      if (step <= newton_.step_tol * (1.0 + phi.cwiseAbs().maxCoeff())) {
        const double res = cahn_hilliard_residual(d, phi, mu).cwiseAbs().maxCoeff();
        if (res <= newton_.residual_tol * scale) {
          if (stats) {
            stats->newton_iterations = it;
            stats->newton_residual = res;
          }
          return {phi, mu};
        }
      }
    }
    throw SolverError("Newton iteration for the Cahn-Hilliard step did not converge in " +
                      std::to_string(newton_.max_iterations) + " iterations: timestep too large");
  }

  /// mu^0 from the chemical-potential equation at the initial state.
  ScalarField initial_mu(const ScalarField& phi, const ScalarField& sigma, const VectorField& u) const {
    const Problem& pb = *pb_;
    const ModelParams& p = pb.params;
    const auto phi_q = values_at_points(pb.grid, phi);
    const auto eps_q = strains_at_points(pb.grid, u);
    std::vector<double> v(phi_q.size());
    for (std::size_t k = 0; k < v.size(); ++k)
      v[k] = psi::prime(phi_q[k]) - stress_voigt(p, phi_q[k], eps_q[k]).dot(p.e_star_eng());
    const Vector rhs = pb.stiffness.matrix * phi + assemble_point_load(pb.grid, v) - p.chi * (pb.mass.matrix * sigma);
    Eigen::SimplicialLDLT<SparseMatrix> m(pb.mass.matrix);
    return m.solve(rhs);
  }

  StateSnapshot initial_snapshot(const InitialData& ic) const {
    const Problem& pb = *pb_;
    if (ic.phi.size() != pb.nodes() || ic.sigma.size() != pb.nodes())
      throw ConfigError("initial data does not match the grid");
    StateSnapshot s;
    s.phi = ic.phi;
    s.sigma = ic.sigma;
    s.u = solve_elasticity(s.phi);
    s.mu = initial_mu(s.phi, s.sigma, s.u);
    s.t = 0.0;
    return s;
  }

  /// Advances snapshot n to n + 1 with the controls of level n + 1.
  StateSnapshot advance(const StateSnapshot& prev, const ControlTriple& w, int n, StepStats* stats = nullptr) const {
    StepStats local;
    StateSnapshot next;
    next.sigma = step_nutrient(prev.sigma, prev.phi, w.w1.col(n), w.w3[n], &local.nutrient_residual);
    auto [phi, mu] = step_cahn_hilliard(prev, next.sigma, prev.u, w.w2[n], &local);
    next.phi = std::move(phi);
    next.mu = std::move(mu);
    next.u = solve_elasticity(next.phi);
    next.t = pb_->time.time(n + 1);
    if (!next.phi.allFinite() || !next.mu.allFinite() || !next.sigma.allFinite() || !next.u.allFinite())
      throw SolverError("non-finite state at step " + std::to_string(n + 1));
    if (stats) *stats = local;
    return next;
  }

  void check_controls(const ControlTriple& w) const {
    const Problem& pb = *pb_;
    if (w.w1.rows() != pb.boundary_count() || w.w1.cols() != pb.time.steps || w.w2.size() != pb.time.steps ||
        w.w3.size() != pb.time.steps)
      throw ConfigError("control arrays do not match the grid and time steps");
    if (!w.finite()) throw ConfigError("controls contain non-finite values");
  }

  StateTrajectory solve_state(const ControlTriple& w, const InitialData& ic, const StoragePolicy& policy = {}) const {
    check_controls(w);
    if (policy.interval < 1) throw ConfigError("checkpoint interval must be >= 1");
    const int steps = pb_->time.steps;
    StateTrajectory traj;
    traj.time = pb_->time;
    traj.policy = policy;
    traj.controls = w;
    traj.memory.resize(steps + 1);
    traj.stats.resize(steps);
    const bool disk = !policy.directory.empty();
    std::vector<IndexEntry> index;
    if (disk) {
      std::filesystem::create_directories(policy.directory);
      traj.files.assign(steps + 1, std::string());
    }
    auto keep = [&](int n, const StateSnapshot& s) {
      if (!traj.kept(n)) return;
      if (disk) {
        char name[32];
        std::snprintf(name, sizeof name, "state_%05d.fld", n);
        const std::string path = (std::filesystem::path(policy.directory) / name).string();
        write_field_record(path, snapshot_record(pb_->grid, s));
        traj.files[n] = path;
        index.push_back({n, s.t, name});
      } else {
        traj.memory[n] = s;
      }
    };
    StateSnapshot cur = initial_snapshot(ic);
    traj.sigma_min = cur.sigma.minCoeff();
    traj.sigma_max = cur.sigma.maxCoeff();
    keep(0, cur);
    for (int n = 0; n < steps; ++n) {
      StateSnapshot next;
      try {
        next = advance(cur, w, n, &traj.stats[n]);
      } catch (const SolverError& e) {
        throw SolverError(std::string(e.what()) + " (step " + std::to_string(n + 1) + ")");
      }
      traj.sigma_min = std::min(traj.sigma_min, next.sigma.minCoeff());
      traj.sigma_max = std::max(traj.sigma_max, next.sigma.maxCoeff());
      keep(n + 1, next);
      cur = std::move(next);
    }
    if (disk) write_index((std::filesystem::path(policy.directory) / "index.txt").string(), index);
    return traj;
  }

  /// Discrete Ginzburg-Landau plus elastic energy
  /// 1/2 |grad phi|^2 + Psi(phi) + W(phi, E(u)) - (g, u)_N.
  double energy(const StateSnapshot& s) const {
    const Problem& pb = *pb_;
    const ModelParams& p = pb.params;
    const Grid& g = pb.grid;
    double e = 0.5 * s.phi.dot(pb.stiffness.matrix * s.phi);
    for (int c = 0; c < g.cell_count(); ++c) {
      const auto nodes = g.cell_nodes(c);
      for (int q = 0; q < 4; ++q) {
        const double ph = value_at(g, s.phi, nodes, q);
        const Eigen::Vector3d d = strain_at(g, s.u, nodes, q) - p.e_bar_eng() - ph * p.e_star_eng();
        e += g.quad.weight[q] * (psi::value(ph) + 0.5 * d.dot(p.elasticity.voigt * d));
      }
    }
    return e - pb.traction_load.dot(s.u);
  }

 private:
  std::shared_ptr<const Problem> pb_;
  NewtonOptions newton_;
};

/// Random access to snapshots of a possibly checkpointed trajectory. Missing
/// levels are recomputed from the nearest kept level below and cached per segment.
class SnapshotReader {
 public:
  SnapshotReader(const StateSolver& solver, const StateTrajectory& traj) : solver_(solver), traj_(traj) {}

  /// Returned by value; later calls may evict cached segments.
  StateSnapshot operator()(int n) {
    if (n < 0 || n > traj_.steps()) throw SolverError("snapshot index out of range");
    if (traj_.memory[n]) return *traj_.memory[n];
    if (auto it = cache_.find(n); it != cache_.end()) return it->second;
    if (traj_.kept(n)) return load(n);
    const int start = (n / traj_.policy.interval) * traj_.policy.interval;
    const int stop = std::min(traj_.steps(), start + traj_.policy.interval);
    StateSnapshot cur = stored(start);
    std::map<int, StateSnapshot> segment;
    for (int k = start; k < stop - 1; ++k) {
      cur = solver_.advance(cur, traj_.controls, k);
      segment[k + 1] = cur;
    }
    cache_ = std::move(segment);
    return cache_.at(n);
  }

 private:
  StateSnapshot stored(int n) {
    if (traj_.memory[n]) return *traj_.memory[n];
    return load(n);
  }
  const StateSnapshot& load(int n) {
    if (traj_.files.empty() || traj_.files[n].empty())
      throw SolverError("missing checkpoint for snapshot " + std::to_string(n));
    const std::string& path = traj_.files[n];
    if (!std::filesystem::exists(path)) throw SolverError("missing checkpoint file " + path);
    disk_.insert_or_assign(n, snapshot_from_record(solver_.problem().grid,
                                               read_field_record(path), path));
    if (disk_.size() > 4) {
      for (auto k = disk_.begin(); k != disk_.end();) k = (k->first != n) ? disk_.erase(k) : std::next(k);
    }
    return disk_.at(n);
  }

  const StateSolver& solver_;
  const StateTrajectory& traj_;
  std::map<int, StateSnapshot> cache_;
  std::map<int, StateSnapshot> disk_;
};

}  // namespace tumopt
