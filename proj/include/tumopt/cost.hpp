#pragma once

// Tracking-type cost with stress penalty, quadratic and L1 control costs, and
// the derivative loads that drive the adjoint.

#include "tumopt/state_solver.hpp"

namespace tumopt {

struct CostWeights {
  double alpha_q = 0.0;
  double alpha_omega = 1.0;
  double alpha_e = 0.0;
  std::array<double, 5> gamma{1e-2, 1e-2, 1e-2, 0.0, 0.0};  // gamma_1 .. gamma_5
  /// phi_Q per level 0..N, or a single field used at every level; empty means zero.
  std::vector<ScalarField> phi_q;
  /// Empty means zero.
  ScalarField phi_omega;
  WeightFunction n;

  double g(int i) const { return gamma.at(i - 1); }

  void validate() const {
    const double a[] = {alpha_q, alpha_omega, alpha_e};
    bool any = false;
    for (double v : a) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("cost weights must be non-negative (assumption A7)");
      any = any || v > 0.0;
    }
    for (double v : gamma) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("cost weights must be non-negative (assumption A7)");
      any = any || v > 0.0;
    }
    if (!any) throw ConfigError("cost weights are all zero (assumption A7)");
    if (g(4) > 0.0 && !(g(2) > 0.0)) throw ConfigError("gamma_2 must be positive if gamma_4 is positive (assumption A7)");
    if (g(5) > 0.0 && !(g(3) > 0.0)) throw ConfigError("gamma_3 must be positive if gamma_5 is positive (assumption A7)");
  }

  void check_targets(const Problem& pb) const {
    if (!phi_q.empty()) {
      if (phi_q.size() != 1 && static_cast<int>(phi_q.size()) != pb.time.steps + 1)
        throw ConfigError("phi_Q must hold one field or one field per time level");
      for (const auto& f : phi_q)
        if (f.size() != pb.nodes()) throw ConfigError("phi_Q does not match the grid");
    }
    if (phi_omega.size() != 0 && phi_omega.size() != pb.nodes()) throw ConfigError("phi_Omega does not match the grid");
  }

  ScalarField target_q(const Problem& pb, int level) const {
    if (phi_q.empty()) return ScalarField::Zero(pb.nodes());
    return phi_q.size() == 1 ? phi_q[0] : phi_q[level];
  }
  ScalarField target_omega(const Problem& pb) const {
    return phi_omega.size() == 0 ? ScalarField::Zero(pb.nodes()) : phi_omega;
  }
};

struct CostValue {
  double j = 0.0;
  double j1 = 0.0;
  double j2 = 0.0;
  double tracking_q = 0.0;
  double tracking_omega = 0.0;
  double stress = 0.0;
  double control_l2 = 0.0;
};

/// Integral of n(x, phi) |W_E|^2 over the domain for one level.
inline double stress_penalty_integral(const Problem& pb, const WeightFunction& weight, const StateSnapshot& s) {
  const Grid& g = pb.grid;
  double total = 0.0;
  for (int c = 0; c < g.cell_count(); ++c) {
    const auto nodes = g.cell_nodes(c);
    for (int q = 0; q < 4; ++q) {
      const double ph = value_at(g, s.phi, nodes, q);
      const auto x = g.quad_point(c, q);
      const Eigen::Vector3d t = stress_voigt(pb.params, ph, strain_at(g, s.u, nodes, q));
      total += g.quad.weight[q] * weight(x[0], x[1], ph) * frobenius_sq(t);
    }
  }
  return total;
}

/// Quadratic and L1 control costs.
inline void add_control_cost(const Problem& pb, const ControlTriple& w, const CostWeights& cw, CostValue& v) {
  const ControlSpace u = pb.control_space();
  const double tau = pb.tau();
  const double r1 = tau * (w.w1.array().square().matrix().transpose() * pb.boundary_weights).sum();
  v.control_l2 = 0.5 * (cw.g(1) * r1 + cw.g(2) * tau * w.w2.squaredNorm() + cw.g(3) * tau * w.w3.squaredNorm());
  v.j2 = cw.g(4) * u.l1(w.w2) + cw.g(5) * u.l1(w.w3);
}

/// Discrete cost; time integrals use the right-endpoint rule over levels 1..N.
inline CostValue eval_cost(const StateSolver& solver, const StateTrajectory& traj, const CostWeights& cw) {
  const Problem& pb = solver.problem();
  cw.check_targets(pb);
  SnapshotReader read(solver, traj);
  const double tau = pb.tau();
  CostValue v;
  for (int n = 1; n <= traj.steps(); ++n) {
    const StateSnapshot s = read(n);
    if (cw.alpha_q > 0.0) {
      const Vector d = s.phi - cw.target_q(pb, n);
      v.tracking_q += 0.5 * cw.alpha_q * tau * d.dot(pb.mass.matrix * d);
    }
    if (cw.alpha_e > 0.0) v.stress += 0.5 * cw.alpha_e * tau * stress_penalty_integral(pb, cw.n, s);
    if (n == traj.steps() && cw.alpha_omega > 0.0) {
      const Vector d = s.phi - cw.target_omega(pb);
      v.tracking_omega = 0.5 * cw.alpha_omega * d.dot(pb.mass.matrix * d);
    }
  }
  add_control_cost(pb, traj.controls, cw, v);
  v.j1 = v.tracking_q + v.tracking_omega + v.stress + v.control_l2;
  v.j = v.j1 + v.j2;
  return v;
}

// ---------------------------------------------------------------------------

/// Adjoint sources per level: f1 = (f_1, zeta) with
/// f_1 = alpha_Q (phi - phi_Q) + alpha_E / 2 n'(phi) |W_E|^2 - alpha_E n(phi) W_E : C E*,
/// f2 = (alpha_E n(phi) C W_E, E(eta)), and the terminal value alpha_Omega (phi(T) - phi_Omega).
struct AdjointSources {
  std::vector<Vector> f1;  // levels 0..N, level 0 unused
  std::vector<Vector> f2;
  ScalarField terminal;
};

inline void level_sources(const Problem& pb, const CostWeights& cw, const StateSnapshot& s, int level, Vector& f1,
                          Vector& f2) {
  const Grid& g = pb.grid;
  const ModelParams& p = pb.params;
  f1 = Vector::Zero(pb.nodes());
  f2 = Vector::Zero(2 * pb.nodes());
  if (cw.alpha_q > 0.0) f1 += cw.alpha_q * (pb.mass.matrix * (s.phi - cw.target_q(pb, level)));
  if (cw.alpha_e > 0.0) {
    const Eigen::Vector3d e_star = p.e_star_eng();
    std::vector<double> a(4 * static_cast<std::size_t>(g.cell_count()));
    std::vector<Eigen::Vector3d> b(a.size());
    for (int c = 0; c < g.cell_count(); ++c) {
      const auto nodes = g.cell_nodes(c);
      for (int q = 0; q < 4; ++q) {
        const double ph = value_at(g, s.phi, nodes, q);
        const auto x = g.quad_point(c, q);
        const Eigen::Vector3d t = stress_voigt(p, ph, strain_at(g, s.u, nodes, q));
        const Eigen::Vector3d ct = p.elasticity.voigt * voigt_to_engineering(t);  // C W_E, engineering pairing
        const double nv = cw.n(x[0], x[1], ph);
        a[4 * c + q] = cw.alpha_e * (0.5 * cw.n.prime(x[0], x[1], ph) * frobenius_sq(t) - nv * ct.dot(e_star));
        b[4 * c + q] = cw.alpha_e * nv * ct;
      }
    }
    f1 += assemble_point_load(g, a);
    f2 += assemble_point_strain_load(g, b);
  }
}

inline AdjointSources adjoint_sources(const StateSolver& solver, const StateTrajectory& traj, const CostWeights& cw) {
  const Problem& pb = solver.problem();
  cw.check_targets(pb);
  SnapshotReader read(solver, traj);
  AdjointSources src;
  src.f1.resize(traj.snapshot_count());
  src.f2.resize(traj.snapshot_count());
  src.f1[0] = Vector::Zero(pb.nodes());
  src.f2[0] = Vector::Zero(2 * pb.nodes());
  StateSnapshot last;
  for (int n = 1; n <= traj.steps(); ++n) {
    const StateSnapshot s = read(n);
    level_sources(pb, cw, s, n, src.f1[n], src.f2[n]);
    if (n == traj.steps()) last = s;
  }
  src.terminal = cw.alpha_omega * (last.phi - cw.target_omega(pb));
  return src;
}

}  // namespace tumopt
