#pragma once

// Backward adjoint sweeps and the reduced gradient.
//
// Two modes are offered. The transpose mode is the exact transpose of the
// linearised scheme, so its gradient is the derivative of the discrete cost.
// The continuous mode discretises the adjoint equations directly with
// backward Euler and monolithic per-level solves; its gradient agrees with the
// transpose one up to the time discretisation error.

#include "tumopt/cost.hpp"
#include "tumopt/sensitivity.hpp"

namespace tumopt {

enum class AdjointMode { transpose, continuous };

inline const char* to_string(AdjointMode m) { return m == AdjointMode::transpose ? "transpose" : "continuous"; }

struct AdjointSnapshot {
  ScalarField p;
  ScalarField q;
  ScalarField r;
  VectorField s;
  double t = 0.0;
};

struct AdjointTrajectory {
  AdjointMode mode = AdjointMode::transpose;
  std::vector<AdjointSnapshot> levels;  // 0..N
  /// Exact terminal values p(T) = alpha_Omega (phi(T) - phi_Omega), r(T) = 0.
  ScalarField terminal_p;
  ScalarField terminal_r;
  // Per control index n = 0..N-1:
  Eigen::MatrixXd kappa_r;  // kappa r on the boundary nodes
  Vector ik;                // (k(phi), p)
  Vector ih;                // (h(phi), r), lumped
};

namespace detail {

inline void add_block(Triplets& t, const SparseMatrix& a, int r0, int c0, double scale = 1.0, bool transpose = false) {
  for (int k = 0; k < a.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(a, k); it; ++it) {
      const int r = static_cast<int>(transpose ? it.col() : it.row());
      const int c = static_cast<int>(transpose ? it.row() : it.col());
      t.emplace_back(r0 + r, c0 + c, scale * it.value());
    }
}

inline void add_diag(Triplets& t, const Vector& d, int r0, int c0, double scale = 1.0) {
  for (int i = 0; i < d.size(); ++i)
    if (d[i] != 0.0) t.emplace_back(r0 + i, c0 + i, scale * d[i]);
}

/// Rows of a full-length vector operator restricted to the free displacement dofs.
inline SparseMatrix free_rows(const ElasticityOperator& e, const SparseMatrix& a) {
  const auto& free = e.free_dofs();
  Triplets t;
  std::vector<int> map(static_cast<std::size_t>(a.rows()), -1);
  for (std::size_t i = 0; i < free.size(); ++i) map[free[i]] = static_cast<int>(i);
  for (int k = 0; k < a.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(a, k); it; ++it)
      if (map[it.row()] >= 0) t.emplace_back(map[it.row()], it.col(), it.value());
  SparseMatrix out(static_cast<Eigen::Index>(free.size()), a.cols());
  out.setFromTriplets(t.begin(), t.end());
  return out;
}

inline void record_integrals(const Problem& pb, AdjointTrajectory& adj, int index, const ScalarField& phi,
                             const Vector& g_w2, const ScalarField& p, const ScalarField& r) {
  const ModelParams& prm = pb.params;
  adj.kappa_r.col(index) = prm.kappa * pb.full_to_boundary(r);
  adj.ik[index] = -g_w2.dot(p);
  double s = 0.0;
  for (int i = 0; i < pb.nodes(); ++i) s += pb.mass_lumped[i] * prm.h(phi[i]) * r[i];
  adj.ih[index] = s;
}

}  // namespace detail

inline void check_sources(const Problem& pb, const StateTrajectory& traj, const AdjointSources& src) {
  if (static_cast<int>(src.f1.size()) != traj.snapshot_count() || static_cast<int>(src.f2.size()) != traj.snapshot_count())
    throw LinearisationError("adjoint sources do not match the trajectory");
  if (src.terminal.size() != pb.nodes()) throw LinearisationError("terminal adjoint value does not match the grid");
}

/// Transpose of the linearised scheme. The functional it differentiates is
/// sum_{n>=1} tau (f1^n . xi^n + f2^n . v^n) + (M terminal) . xi^N.
inline AdjointTrajectory solve_adjoint_transpose(const StateSolver& solver, const StateTrajectory& traj,
                                                 const AdjointSources& src) {
  const Problem& pb = solver.problem();
  check_sources(pb, traj, src);
  const int nn = pb.nodes();
  const int steps = pb.time.steps;
  const double tau = pb.tau();
  const ModelParams& prm = pb.params;
  const SparseMatrix& m = pb.mass.matrix;
  const SparseMatrix& b = pb.coupling.matrix;
  SnapshotReader read(solver, traj);

  AdjointTrajectory adj;
  adj.mode = AdjointMode::transpose;
  adj.levels.resize(traj.snapshot_count());
  adj.kappa_r = Eigen::MatrixXd::Zero(pb.boundary_count(), steps);
  adj.ik = Vector::Zero(steps);
  adj.ih = Vector::Zero(steps);
  adj.terminal_p = src.terminal;
  adj.terminal_r = Vector::Zero(nn);

  auto a_xi = [&](int n) { return Vector(tau * src.f1[n]); };
  Vector a_v = tau * src.f2[steps];
  Vector xi_bar = a_xi(steps) + m * src.terminal + b.transpose() * pb.elasticity.solve(a_v);
  adj.levels[steps].s = pb.elasticity.solve(a_v) / tau;
  Vector psi_bar = Vector::Zero(nn);

  StateSnapshot next = read(steps);
  for (int n = steps - 1; n >= 0; --n) {
    const StateSnapshot cur = read(n);
    const StepLinearisation l = linearise_step(solver, cur, next, traj.controls.w2[n], traj.controls.w3[n]);
    const SparseMatrix jt = l.jacobian.transpose();
    Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu(jt);
    if (lu.info() != Eigen::Success) throw LinearisationError("transposed Cahn-Hilliard system is singular");
    Vector rhs = Vector::Zero(2 * nn);
    rhs.head(nn) = xi_bar;
    const Vector x = lu.solve(rhs);
    const Vector xh = x.head(nn), eh = x.tail(nn);

    const Vector psi_tot = psi_bar + tau * (l.g_sigma.transpose() * xh) - prm.chi * (m * eh);
    Eigen::SimplicialLDLT<SparseMatrix> ns(l.nutrient);
    const Vector rho = ns.solve(psi_tot);
    Vector v_bar = tau * (l.g_u.transpose() * xh) - b * eh;
    if (n > 0) v_bar += tau * src.f2[n];
    const Vector a_inv_v = pb.elasticity.solve(v_bar);

    AdjointSnapshot& hi = adj.levels[n + 1];
    hi.p = xh;
    hi.q = -eh / tau;
    hi.r = rho / tau;
    hi.t = next.t;
    adj.levels[n].s = a_inv_v / tau;
    detail::record_integrals(pb, adj, n, cur.phi, l.g_w2, hi.p, hi.r);

    xi_bar = m * xh + tau * (l.g_phi.transpose() * xh) + (pb.misfit_stiffness - 1.0) * (m * eh) +
             l.diag_phi.cwiseProduct(rho) + b.transpose() * a_inv_v;
    if (n > 0) xi_bar += a_xi(n);
    psi_bar = prm.beta / tau * pb.mass_lumped.cwiseProduct(rho);
    next = cur;
  }
  AdjointSnapshot& lo = adj.levels[0];
  lo.p = Vector::Zero(nn);
  lo.q = Vector::Zero(nn);
  lo.r = Vector::Zero(nn);
  lo.t = 0.0;
  return adj;
}

/// Backward Euler discretisation of the adjoint system, one monolithic solve in
/// (p, q, r, s) per level, with terminal data p(T) = alpha_Omega (phi(T) - phi_Omega)
/// and r(T) = 0 (for beta = 0, r(T) solves the quasi-static nutrient adjoint).
inline AdjointTrajectory solve_adjoint_continuous(const StateSolver& solver, const StateTrajectory& traj,
                                                  const AdjointSources& src) {
  const Problem& pb = solver.problem();
  check_sources(pb, traj, src);
  const int nn = pb.nodes();
  const int steps = pb.time.steps;
  const double tau = pb.tau();
  const ModelParams& prm = pb.params;
  const SparseMatrix& m = pb.mass.matrix;
  const SparseMatrix& k = pb.stiffness.matrix;
  const SparseMatrix bf = detail::free_rows(pb.elasticity, pb.coupling.matrix);
  const SparseMatrix& a_red = pb.elasticity.reduced().matrix;
  const int nf = static_cast<int>(a_red.rows());
  const double c_e = pb.misfit_stiffness;
  SnapshotReader read(solver, traj);

  AdjointTrajectory adj;
  adj.mode = AdjointMode::continuous;
  adj.levels.resize(traj.snapshot_count());
  adj.kappa_r = Eigen::MatrixXd::Zero(pb.boundary_count(), steps);
  adj.ik = Vector::Zero(steps);
  adj.ih = Vector::Zero(steps);
  adj.terminal_p = src.terminal;
  adj.terminal_r = Vector::Zero(nn);

  // Terminal level.
  {
    const StateSnapshot s = read(steps);
    const double w2 = traj.controls.w2[steps - 1], w3 = traj.controls.w3[steps - 1];
    const StepLinearisation l = linearise_step(solver, s, s, w2, w3, false);
    AdjointSnapshot& a = adj.levels[steps];
    a.p = src.terminal;
    Eigen::SimplicialLDLT<SparseMatrix> ml(m);
    a.q = ml.solve(k * a.p);
    if (prm.beta > 0.0) {
      a.r = Vector::Zero(nn);
    } else {
      Eigen::SimplicialLDLT<SparseMatrix> ns(l.nutrient);
      a.r = ns.solve(l.g_sigma.transpose() * a.p + prm.chi * (m * a.q));
    }
    a.s = pb.elasticity.solve(src.f2[steps] + l.g_u.transpose() * a.p + pb.coupling.matrix * a.q);
    a.t = s.t;
    detail::record_integrals(pb, adj, steps - 1, s.phi, l.g_w2, a.p, a.r);
    adj.terminal_r = a.r;
  }

  const int dim = 3 * nn + nf;
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
  bool analysed = false;
  for (int n = steps - 1; n >= 1; --n) {
    const StateSnapshot s = read(n);
    const double w2 = traj.controls.w2[n - 1], w3 = traj.controls.w3[n - 1];
    const StepLinearisation l = linearise_step(solver, s, s, w2, w3, false);
    auto dw = values_at_points(pb.grid, s.phi);
    for (double& v : dw) v = psi::second(v);
    const SparseMatrix d = assemble_weighted_mass(pb.grid, dw);
    const SparseMatrix gu_f = detail::free_rows(pb.elasticity, SparseMatrix(l.g_u.transpose()));

    Triplets t;
    // p-row
    detail::add_block(t, m, 0, 0, 1.0 / tau);
    detail::add_block(t, l.g_phi, 0, 0, -1.0, true);
    detail::add_block(t, k, 0, nn);
    detail::add_block(t, d, 0, nn);
    detail::add_block(t, m, 0, nn, c_e);
    detail::add_diag(t, l.diag_phi, 0, 2 * nn, -1.0);
    detail::add_block(t, bf, 0, 3 * nn, -1.0, true);
    // q-row
    detail::add_block(t, k, nn, 0, -1.0);
    detail::add_block(t, m, nn, nn);
    // r-row
    detail::add_block(t, l.g_sigma, 2 * nn, 0, -1.0, true);
    detail::add_block(t, m, 2 * nn, nn, -prm.chi);
    detail::add_block(t, l.nutrient, 2 * nn, 2 * nn);
    // s-row
    detail::add_block(t, gu_f, 3 * nn, 0, -1.0);
    detail::add_block(t, bf, 3 * nn, nn, -1.0);
    detail::add_block(t, a_red, 3 * nn, 3 * nn);
    SparseMatrix sys(dim, dim);
    sys.setFromTriplets(t.begin(), t.end());
    if (!analysed) {
      lu.analyzePattern(sys);
      analysed = true;
    }
    lu.factorize(sys);
    if (lu.info() != Eigen::Success) throw LinearisationError("continuous adjoint system is singular");

    const AdjointSnapshot& up = adj.levels[n + 1];
    Vector rhs = Vector::Zero(dim);
    rhs.segment(0, nn) = src.f1[n] + m * up.p / tau;
    rhs.segment(2 * nn, nn) = prm.beta / tau * pb.mass_lumped.cwiseProduct(up.r);
    rhs.segment(3 * nn, nf) = pb.elasticity.restrict(src.f2[n]);
    const Vector x = lu.solve(rhs);

    AdjointSnapshot& a = adj.levels[n];
    a.p = x.segment(0, nn);
    a.q = x.segment(nn, nn);
    a.r = x.segment(2 * nn, nn);
    a.s = pb.elasticity.prolong(x.segment(3 * nn, nf));
    a.t = s.t;
    detail::record_integrals(pb, adj, n - 1, s.phi, l.g_w2, a.p, a.r);
  }
  AdjointSnapshot& lo = adj.levels[0];
  lo.p = Vector::Zero(nn);
  lo.q = Vector::Zero(nn);
  lo.r = Vector::Zero(nn);
  lo.s = Vector::Zero(2 * nn);
  return adj;
}

inline AdjointTrajectory solve_adjoint(const StateSolver& solver, const StateTrajectory& traj, const CostWeights& cw,
                                       AdjointMode mode = AdjointMode::transpose) {
  const AdjointSources src = adjoint_sources(solver, traj, cw);
  return mode == AdjointMode::transpose ? solve_adjoint_transpose(solver, traj, src)
                                        : solve_adjoint_continuous(solver, traj, src);
}

/// Smooth part of the gradient in the control inner product; without gamma
/// terms this is the representer of DJ_1 restricted to the state dependence.
inline ControlTriple state_gradient(const AdjointTrajectory& adj) {
  ControlTriple g;
  g.w1 = adj.kappa_r;
  g.w2 = -adj.ik;
  g.w3 = adj.ih;
  return g;
}

/// Riesz representer of the derivative of the smooth cost part:
/// (kappa r + gamma_1 w1, -(k(phi), p) + gamma_2 w2, (h(phi), r) + gamma_3 w3).
inline ControlTriple reduced_gradient(const AdjointTrajectory& adj, const ControlTriple& w, const CostWeights& cw) {
  if (adj.kappa_r.rows() != w.w1.rows() || adj.kappa_r.cols() != w.w1.cols())
    throw LinearisationError("adjoint does not match the control shape");
  ControlTriple g = state_gradient(adj);
  g.w1 += cw.g(1) * w.w1;
  g.w2 += cw.g(2) * w.w2;
  g.w3 += cw.g(3) * w.w3;
  return g;
}

}  // namespace tumopt
