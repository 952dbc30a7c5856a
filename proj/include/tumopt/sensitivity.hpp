#pragma once

// Linearisation of the discrete state scheme around a trajectory and the
// Frechet remainder check of the control-to-state map.

#include "tumopt/state_solver.hpp"

#include <Eigen/SparseLU>

#include <cstdio>
#include <fstream>

namespace tumopt {

struct LinearisedSnapshot {
  ScalarField xi;
  ScalarField eta;
  ScalarField psi;
  VectorField v;
  double t = 0.0;
};

/// Derivatives of step n -> n + 1 with respect to (phi^n, sigma^{n+1}, u^n) and the controls.
struct StepLinearisation {
  SparseMatrix g_phi;    // d(U, zeta)/d phi^n
  SparseMatrix g_sigma;  // d(U, zeta)/d sigma^{n+1}
  SparseMatrix g_u;      // d(U, zeta)/d u^n
  Vector g_w2;           // d(U, zeta)/d w2 = -(k(phi^n), zeta)
  Vector diag_phi;       // lumped h'(phi^n)(w3 - lambda_c sigma^{n+1})
  Vector h_load;         // lumped h(phi^n)
  SparseMatrix nutrient;
  SparseMatrix jacobian;  // Cahn-Hilliard Jacobian at phi^{n+1}
};

inline StepLinearisation linearise_step(const StateSolver& solver, const StateSnapshot& prev,
                                        const StateSnapshot& next, double w2, double w3,
                                        bool with_jacobian = true) {
  const Problem& pb = solver.problem();
  const Grid& g = pb.grid;
  const ModelParams& p = pb.params;
  const auto phi_q = values_at_points(g, prev.phi);
  const auto sig_q = values_at_points(g, next.sigma);
  const auto eps_q = strains_at_points(g, prev.u);
  std::vector<double> dphi(phi_q.size()), dsig(phi_q.size()), dm(phi_q.size());
  std::vector<Eigen::Vector3d> dstrain(phi_q.size());
  for (std::size_t k = 0; k < phi_q.size(); ++k) {
    const auto d = source_U_partials(p, phi_q[k], sig_q[k], eps_q[k], w2);
    dphi[k] = d.d_phi;
    dsig[k] = d.d_sigma;
    dm[k] = d.d_m;
    dstrain[k] = d.d_strain;
  }
  StepLinearisation l;
  l.g_phi = assemble_weighted_mass(g, dphi);
  l.g_sigma = assemble_weighted_mass(g, dsig);
  l.g_u = assemble_point_strain_coupling(g, dstrain);
  l.g_w2 = assemble_point_load(g, dm);
  l.diag_phi.resize(pb.nodes());
  l.h_load.resize(pb.nodes());
  for (int i = 0; i < pb.nodes(); ++i) {
    l.diag_phi[i] = pb.mass_lumped[i] * p.h.prime(prev.phi[i]) * (w3 - p.lambda_c * next.sigma[i]);
    l.h_load[i] = pb.mass_lumped[i] * p.h(prev.phi[i]);
  }
  l.nutrient = solver.nutrient_matrix(prev.phi);
  if (with_jacobian) l.jacobian = solver.cahn_hilliard_jacobian(next.phi);
  return l;
}

class LinearisationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Forward sweep of the linearised scheme for direction h.
inline std::vector<LinearisedSnapshot> solve_linearised(const StateSolver& solver, const StateTrajectory& traj,
                                                        const Direction& h) {
  const Problem& pb = solver.problem();
  if (traj.steps() != pb.time.steps || traj.time.final_time != pb.time.final_time)
    throw LinearisationError("trajectory does not match the problem time grid");
  if (!traj.complete()) throw LinearisationError("trajectory is incomplete");
  if (!h.same_shape(traj.controls)) throw LinearisationError("direction does not match the control shape");
  const int n_nodes = pb.nodes();
  const double tau = pb.tau();
  const ModelParams& p = pb.params;
  const SparseMatrix& m = pb.mass.matrix;
  const SparseMatrix& b = pb.coupling.matrix;
  SnapshotReader read(solver, traj);

  std::vector<LinearisedSnapshot> out(traj.snapshot_count());
  out[0] = {Vector::Zero(n_nodes), Vector::Zero(n_nodes), Vector::Zero(n_nodes), Vector::Zero(2 * n_nodes), 0.0};
  StateSnapshot cur = read(0);
  for (int n = 0; n < pb.time.steps; ++n) {
    const StateSnapshot next = read(n + 1);
    const StepLinearisation l = linearise_step(solver, cur, next, traj.controls.w2[n], traj.controls.w3[n]);
    LinearisedSnapshot& lo = out[n];
    lo.v = pb.elasticity.solve(b * lo.xi);

    const Vector rhs_sigma = p.beta / tau * pb.mass_lumped.cwiseProduct(lo.psi) +
                             p.kappa * pb.boundary_lumped.cwiseProduct(pb.boundary_to_full(h.w1.col(n))) +
                             l.diag_phi.cwiseProduct(lo.xi) + h.w3[n] * l.h_load;
    Eigen::SimplicialLDLT<SparseMatrix> ns(l.nutrient);
    LinearisedSnapshot& hi = out[n + 1];
    hi.psi = ns.solve(rhs_sigma);

    Vector rhs(2 * n_nodes);
    rhs.head(n_nodes) = m * lo.xi + tau * (l.g_phi * lo.xi + l.g_sigma * hi.psi + l.g_u * lo.v + h.w2[n] * l.g_w2);
    rhs.tail(n_nodes) = (pb.misfit_stiffness - 1.0) * (m * lo.xi) - p.chi * (m * hi.psi) - b.transpose() * lo.v;
    Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu(l.jacobian);
    if (lu.info() != Eigen::Success) throw LinearisationError("linearised Cahn-Hilliard system is singular");
    const Vector x = lu.solve(rhs);
    hi.xi = x.head(n_nodes);
    hi.eta = x.tail(n_nodes);
    hi.t = next.t;
    cur = next;
  }
  out.back().v = pb.elasticity.solve(b * out.back().xi);
  return out;
}

// ---------------------------------------------------------------------------

inline double vector_h1_sq(const Problem& pb, const VectorField& u) {
  double s = 0.0;
  for (int c = 0; c < 2; ++c) {
    const Vector uc = Eigen::Map<const Vector, 0, Eigen::InnerStride<2>>(u.data() + c, pb.nodes());
    s += h1_norm_sq(pb.mass, pb.stiffness, uc);
  }
  return s;
}

/// Components of the trajectory norm L-inf(L2) x L2(L2) x L2(H1) x L2(H1).
struct TrajectoryNorm {
  double phi = 0.0;
  double mu = 0.0;
  double sigma = 0.0;
  double u = 0.0;
  double total() const { return phi + mu + sigma + u; }
};

/// Norm of a difference given per level as (phi, mu, sigma, u); time sums run over levels 1..N.
template <class Getter>
TrajectoryNorm trajectory_norm(const Problem& pb, int levels, Getter get) {
  TrajectoryNorm r;
  const double tau = pb.tau();
  for (int n = 0; n < levels; ++n) {
    const auto [dphi, dmu, dsig, du] = get(n);
    r.phi = std::max(r.phi, std::sqrt(std::max(0.0, dphi.dot(pb.mass.matrix * dphi))));
    if (n == 0) continue;
    r.mu += tau * dmu.dot(pb.mass.matrix * dmu);
    r.sigma += tau * h1_norm_sq(pb.mass, pb.stiffness, dsig);
    r.u += tau * vector_h1_sq(pb, du);
  }
  r.mu = std::sqrt(r.mu);
  r.sigma = std::sqrt(r.sigma);
  r.u = std::sqrt(r.u);
  return r;
}

/// Scales h so that w + eps_max h stays inside the bounds; components pushing
/// out of an active bound are zeroed first.
inline Direction feasible_direction(const ControlTriple& w, Direction h, const ControlBounds& bounds, double eps_max) {
  double t = eps_max;
  auto visit = [&](Eigen::Ref<Eigen::MatrixXd> d, const Eigen::MatrixXd& x, const Eigen::MatrixXd& lo,
                   const Eigen::MatrixXd& hi) {
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      double& di = d.data()[i];
      const double room = di > 0 ? hi.data()[i] - x.data()[i] : x.data()[i] - lo.data()[i];
      if (di == 0.0) continue;
      if (room <= 1e-14 * (1.0 + std::abs(x.data()[i]))) {
        di = 0.0;
        continue;
      }
      t = std::min(t, room / std::abs(di));
    }
  };
  visit(h.w1, w.w1, bounds.lower.w1, bounds.upper.w1);
  visit(h.w2, w.w2, bounds.lower.w2, bounds.upper.w2);
  visit(h.w3, w.w3, bounds.lower.w3, bounds.upper.w3);
  if (t < eps_max) h *= t / eps_max;
  return h;
}

struct FrechetRow {
  double eps = 0.0;
  TrajectoryNorm remainder;
};

struct FrechetReport {
  std::vector<FrechetRow> rows;
  double slope = 0.0;

  void write_csv(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + path);
    os << "eps,remainder,phi,mu,sigma,u,slope\n";
    char buf[256];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.eps, r.remainder.total(),
                    r.remainder.phi, r.remainder.mu, r.remainder.sigma, r.remainder.u, slope);
      os << buf;
    }
  }
};

/// Least-squares slope of log y against log x over the positive entries.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) continue;
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  if (n < 2) return 0.0;
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// R(eps) = || S(w + eps h) - S(w) - eps DS(w)[h] || for each eps.
inline FrechetReport frechet_check(const StateSolver& solver, const InitialData& ic, const ControlTriple& w,
                                   const Direction& h, const std::vector<double>& eps_list) {
  const Problem& pb = solver.problem();
  const StateTrajectory base = solver.solve_state(w, ic);
  const auto lin = solve_linearised(solver, base, h);
  FrechetReport rep;
  std::vector<double> xs, ys;
  for (double eps : eps_list) {
    const StateTrajectory pert = solver.solve_state(w + eps * h, ic);
    FrechetRow row;
    row.eps = eps;
    row.remainder = trajectory_norm(pb, base.snapshot_count(), [&](int n) {
      return std::make_tuple(Vector(pert[n].phi - base[n].phi - eps * lin[n].xi),
                             Vector(pert[n].mu - base[n].mu - eps * lin[n].eta),
                             Vector(pert[n].sigma - base[n].sigma - eps * lin[n].psi),
                             Vector(pert[n].u - base[n].u - eps * lin[n].v));
    });
    rep.rows.push_back(row);
    xs.push_back(eps);
    ys.push_back(row.remainder.total());
  }
  rep.slope = loglog_slope(xs, ys);
  return rep;
}

}  // namespace tumopt
