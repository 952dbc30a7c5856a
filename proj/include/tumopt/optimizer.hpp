#pragma once

// Proximal projected gradient on the reduced cost, first-order diagnostics,
// subgradient recovery and sparsity reports.

#include "tumopt/adjoint.hpp"

#include <array>
#include <functional>
#include <optional>
#include <random>

namespace tumopt {

class OptimizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Soft-threshold by t, then clamp to [lo, hi].
inline double prox_scalar(double x, double t, double lo, double hi) {
  const double s = x > t ? x - t : (x < -t ? x + t : 0.0);
  return std::min(hi, std::max(lo, s));
}

/// w1 <- P(w1 - s g1); w2 <- P(prox_{s gamma_4 |.|}(w2 - s g2)); w3 likewise with gamma_5.
inline ControlTriple prox_project(const ControlTriple& w, const ControlTriple& g, double step,
                                  const CostWeights& cw, const ControlBounds& b) {
  if (!(step > 0.0)) throw OptimizationError("proximal step must be positive");
  ControlTriple out = w;
  for (Eigen::Index i = 0; i < w.w1.size(); ++i)
    out.w1.data()[i] = prox_scalar(w.w1.data()[i] - step * g.w1.data()[i], 0.0, b.lower.w1.data()[i],
                                   b.upper.w1.data()[i]);
  for (Eigen::Index n = 0; n < w.w2.size(); ++n) {
    out.w2[n] = prox_scalar(w.w2[n] - step * g.w2[n], step * cw.g(4), b.lower.w2[n], b.upper.w2[n]);
    out.w3[n] = prox_scalar(w.w3[n] - step * g.w3[n], step * cw.g(5), b.lower.w3[n], b.upper.w3[n]);
  }
  return out;
}

/// Fixed-point gap of the unit-step proximal map in the control norm.
inline double stationarity_residual(const ControlSpace& u, const ControlTriple& w, const ControlTriple& g,
                                    const CostWeights& cw, const ControlBounds& b) {
  return u.norm(w - prox_project(w, g, 1.0, cw, b));
}

// ---------------------------------------------------------------------------

/// Control-to-cost map with its gradient, for one fixed problem setup.
class ReducedProblem {
 public:
  struct Evaluation {
    StateTrajectory traj;
    CostValue cost;
  };

  ReducedProblem(const StateSolver& solver, InitialData ic, CostWeights cw, ControlBounds bounds)
      : solver_(solver), ic_(std::move(ic)), cw_(std::move(cw)), bounds_(std::move(bounds)) {
    cw_.validate();
    cw_.check_targets(solver_.problem());
  }

  const StateSolver& solver() const { return solver_; }
  const Problem& problem() const { return solver_.problem(); }
  const CostWeights& weights() const { return cw_; }
  const ControlBounds& bounds() const { return bounds_; }
  const InitialData& initial() const { return ic_; }
  ControlSpace space() const { return problem().control_space(); }

  Evaluation evaluate(const ControlTriple& w) const {
    Evaluation e{solver_.solve_state(w, ic_), {}};
    e.cost = eval_cost(solver_, e.traj, cw_);
    return e;
  }

  AdjointTrajectory adjoint(const StateTrajectory& traj, AdjointMode mode = AdjointMode::transpose) const {
    return solve_adjoint(solver_, traj, cw_, mode);
  }

  /// Gradient of the smooth part J_1.
  ControlTriple gradient(const StateTrajectory& traj, AdjointMode mode = AdjointMode::transpose) const {
    return reduced_gradient(adjoint(traj, mode), traj.controls, cw_);
  }

 private:
  const StateSolver& solver_;
  InitialData ic_;
  CostWeights cw_;
  ControlBounds bounds_;
};

struct GradientCheckRow {
  double directional = 0.0;  // <g, h>
  double finite_difference = 0.0;
  double relative_error = 0.0;
};

/// Adjoint directional derivatives of J_1 against central differences.
inline std::vector<GradientCheckRow> gradient_check(const ReducedProblem& rp, const ControlTriple& w, int directions,
                                                    double eps, unsigned seed,
                                                    AdjointMode mode = AdjointMode::transpose) {
  const auto base = rp.evaluate(w);
  const ControlTriple g = rp.gradient(base.traj, mode);
  const ControlSpace u = rp.space();
  std::mt19937 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<GradientCheckRow> rows;
  for (int d = 0; d < directions; ++d) {
    ControlTriple h = ControlTriple::zeros(static_cast<int>(w.w1.rows()), w.steps());
    for (Eigen::Index i = 0; i < h.w1.size(); ++i) h.w1.data()[i] = nd(rng);
    for (int n = 0; n < w.steps(); ++n) {
      h.w2[n] = nd(rng);
      h.w3[n] = nd(rng);
    }
    h *= 1.0 / u.norm(h);
    GradientCheckRow r;
    r.directional = u.inner(g, h);
    r.finite_difference = (rp.evaluate(w + eps * h).cost.j1 - rp.evaluate(w - eps * h).cost.j1) / (2.0 * eps);
    r.relative_error = std::abs(r.directional - r.finite_difference) /
                       std::max({std::abs(r.finite_difference), std::abs(r.directional), 1e-300});
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------

struct OptimizerOptions {
  int max_iterations = 500;
  double tolerance = 1e-8;
  bool relative_tolerance = true;  // scale the tolerance by max(1, initial residual)
  double armijo = 1e-4;
  int max_halvings = 40;
  double initial_step = 10.0;
  double min_step = 1e-10;
  double max_step = 1e6;
  bool gradient_gate = true;
  int gate_directions = 3;
  double gate_eps = 1e-5;
  double gate_tolerance = 1e-6;
  unsigned seed = 1;
};

struct IterateRecord {
  int iteration = 0;
  double j = 0.0;
  double j1 = 0.0;
  double j2 = 0.0;
  double step = 0.0;
  double residual = 0.0;
  int halvings = 0;
};

struct SubgradientReport {
  Vector lambda2, lambda3;
  std::vector<std::string> case2, case3;  // "positive", "zero", "upper"
};

struct SparsityRow {
  double w = 0.0;
  double integral = 0.0;  // (k(phi), p) for w2, (h(phi), r) for w3
  bool zero = false;
  bool condition = false;
  bool boundary = false;
  bool agree = false;
};

struct SparsityTable {
  std::vector<SparsityRow> rows;
  std::vector<std::pair<int, int>> zero_intervals;  // inclusive control index ranges
  int counted = 0;
  int agreeing = 0;
  double agreement() const { return counted ? static_cast<double>(agreeing) / counted : 1.0; }
};

struct SparsityReport {
  SparsityTable w2, w3;
};

struct OptimizationReport {
  enum class Status { converged, max_iterations, stagnation };
  Status status = Status::max_iterations;
  std::string message;
  std::vector<IterateRecord> history;
  std::vector<GradientCheckRow> gate;
  ControlTriple w;
  ControlTriple gradient;
  CostValue cost;
  double residual = 0.0;
  double initial_residual = 0.0;
  int forward_solves = 0;
  std::optional<SparsityReport> sparsity;
  std::optional<SubgradientReport> subgradients;
  std::array<double, 3> projection_deviation{-1.0, -1.0, -1.0};

  bool converged() const { return status == Status::converged; }

  void write_history_csv(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + path);
    os << "iteration,j,j1,j2,step,residual,halvings\n";
    char buf[256];
    for (const auto& r : history) {
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", r.iteration, r.j, r.j1, r.j2, r.step,
                    r.residual, r.halvings);
      os << buf;
    }
  }
};

inline const char* to_string(OptimizationReport::Status s) {
  switch (s) {
    case OptimizationReport::Status::converged:
      return "converged";
    case OptimizationReport::Status::max_iterations:
      return "max_iterations";
    case OptimizationReport::Status::stagnation:
      return "stagnation";
  }
  return "?";
}

/// Recovers lambda_2, lambda_3 from the case rule. Needs gamma_4, gamma_5 > 0.
inline SubgradientReport recover_subgradients(const ControlTriple& w, const AdjointTrajectory& adj,
                                              const CostWeights& cw, const ControlBounds& b,
                                              double zero_tol = 1e-10) {
  if (!(cw.g(4) > 0.0) || !(cw.g(5) > 0.0))
    throw OptimizationError("subgradient is undefined without positive gamma_4 and gamma_5");
  SubgradientReport s;
  const int n = w.steps();
  s.lambda2.resize(n);
  s.lambda3.resize(n);
  s.case2.resize(n);
  s.case3.resize(n);
  for (int i = 0; i < n; ++i) {
    if (w.w2[i] > zero_tol) {
      s.lambda2[i] = 1.0;
      s.case2[i] = w.w2[i] >= b.upper.w2[i] - zero_tol ? "upper" : "positive";
    } else {
      s.lambda2[i] = std::clamp(adj.ik[i] / cw.g(4), -1.0, 1.0);
      s.case2[i] = "zero";
    }
    if (w.w3[i] > zero_tol) {
      s.lambda3[i] = 1.0;
      s.case3[i] = w.w3[i] >= b.upper.w3[i] - zero_tol ? "upper" : "positive";
    } else {
      s.lambda3[i] = std::clamp(-adj.ih[i] / cw.g(5), -1.0, 1.0);
      s.case3[i] = "zero";
    }
  }
  return s;
}

/// Maximal runs of indices where zero[i] holds.
inline std::vector<std::pair<int, int>> zero_intervals(const std::vector<bool>& zero) {
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < static_cast<int>(zero.size());) {
    if (!zero[i]) {
      ++i;
      continue;
    }
    int j = i;
    while (j + 1 < static_cast<int>(zero.size()) && zero[j + 1]) ++j;
    out.emplace_back(i, j);
    i = j + 1;
  }
  return out;
}

namespace detail {
/// One equivalence w == 0 <=> cond(integral); entries within the band around
/// the tie value are boundary cases and are not counted.
template <class Cond>
SparsityTable sparsity_table(const Vector& w, const Vector& integral, double tie, Cond cond, double zero_tol,
                             double band) {
  SparsityTable t;
  const double scale = std::max({1.0, std::abs(tie), integral.size() ? integral.cwiseAbs().maxCoeff() : 0.0});
  std::vector<bool> zero(static_cast<std::size_t>(w.size()));
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    SparsityRow r;
    r.w = w[i];
    r.integral = integral[i];
    r.zero = std::abs(w[i]) <= zero_tol;
    r.condition = cond(integral[i]);
    r.boundary = std::abs(integral[i] - tie) <= band * scale;
    r.agree = r.zero == r.condition;
    if (!r.boundary) {
      ++t.counted;
      if (r.agree) ++t.agreeing;
    }
    zero[static_cast<std::size_t>(i)] = r.zero;
    t.rows.push_back(r);
  }
  t.zero_intervals = zero_intervals(zero);
  return t;
}
}  // namespace detail

/// w2 = 0 <=> (k(phi), p) <= gamma_4 and w3 = 0 <=> (h(phi), r) >= -gamma_5, per control step.
inline SparsityReport sparsity_report(const ControlTriple& w, const AdjointTrajectory& adj, const CostWeights& cw,
                                      double zero_tol = 1e-10, double band = 1e-8) {
  const double g4 = cw.g(4), g5 = cw.g(5);
  SparsityReport r;
  r.w2 = detail::sparsity_table(
      w.w2, adj.ik, g4, [g4](double v) { return v <= g4; }, zero_tol, band);
  r.w3 = detail::sparsity_table(
      w.w3, adj.ih, -g5, [g5](double v) { return v >= -g5; }, zero_tol, band);
  return r;
}

/// Max pointwise deviation of w from the representation formulas
/// w1 = P(-kappa r / gamma_1), w2 = P(((k(phi), p) - gamma_4 lambda_2) / gamma_2),
/// w3 = P((-(h(phi), r) - gamma_5 lambda_3) / gamma_3).
/// Entries whose weight is zero report -1.
inline std::array<double, 3> projection_formula_check(const ControlTriple& w, const AdjointTrajectory& adj,
                                                      const CostWeights& cw, const ControlBounds& b) {
  std::array<double, 3> dev{-1.0, -1.0, -1.0};
  if (cw.g(1) > 0.0) {
    double m = 0.0;
    for (Eigen::Index i = 0; i < w.w1.size(); ++i) {
      const double f = std::clamp(-adj.kappa_r.data()[i] / cw.g(1), b.lower.w1.data()[i], b.upper.w1.data()[i]);
      m = std::max(m, std::abs(w.w1.data()[i] - f));
    }
    dev[0] = m;
  }
  // case rule of the subgradient; lambda = 1 where the control is positive
  auto lambda = [](double wv, double ratio) { return wv > 1e-10 ? 1.0 : std::clamp(ratio, -1.0, 1.0); };
  if (cw.g(2) > 0.0) {
    double m = 0.0;
    for (int n = 0; n < w.steps(); ++n) {
      const double l = cw.g(4) > 0.0 ? lambda(w.w2[n], adj.ik[n] / cw.g(4)) : 0.0;
      const double f = std::clamp((adj.ik[n] - cw.g(4) * l) / cw.g(2), b.lower.w2[n], b.upper.w2[n]);
      m = std::max(m, std::abs(w.w2[n] - f));
    }
    dev[1] = m;
  }
  if (cw.g(3) > 0.0) {
    double m = 0.0;
    for (int n = 0; n < w.steps(); ++n) {
      const double l = cw.g(5) > 0.0 ? lambda(w.w3[n], -adj.ih[n] / cw.g(5)) : 0.0;
      const double f = std::clamp((-adj.ih[n] - cw.g(5) * l) / cw.g(3), b.lower.w3[n], b.upper.w3[n]);
      m = std::max(m, std::abs(w.w3[n] - f));
    }
    dev[2] = m;
  }
  return dev;
}

// ---------------------------------------------------------------------------

using IterationCallback = std::function<void(const IterateRecord&)>;

/// Proximal projected gradient with Barzilai-Borwein trial steps and Armijo
/// backtracking on the full cost J = J_1 + J_2.
inline OptimizationReport optimize(const ReducedProblem& rp, const ControlTriple& w0, const OptimizerOptions& opt = {},
                                   const IterationCallback& on_iterate = {}) {
  const ControlBounds& b = rp.bounds();
  const CostWeights& cw = rp.weights();
  const ControlSpace u = rp.space();
  if (!rp.bounds().admissible(w0)) throw OptimizationError("initial controls are not admissible");
  OptimizationReport rep;

  if (opt.gradient_gate) {
    rep.gate = gradient_check(rp, w0, opt.gate_directions, opt.gate_eps, opt.seed);
    for (const auto& r : rep.gate)
      if (!(r.relative_error <= opt.gate_tolerance)) {
        std::ostringstream msg;
        msg << "gradient gate failed: relative error " << r.relative_error << " exceeds " << opt.gate_tolerance;
        throw OptimizationError(msg.str());
      }
  }

  ControlTriple w = w0;
  auto cur = rp.evaluate(w);
  ++rep.forward_solves;
  ControlTriple g = rp.gradient(cur.traj);
  double res = stationarity_residual(u, w, g, cw, b);
  rep.initial_residual = res;
  const double target = opt.tolerance * (opt.relative_tolerance ? std::max(1.0, res) : 1.0);
  double step = opt.initial_step;
  int halvings = 0;

  for (int k = 0;; ++k) {
    IterateRecord rec{k, cur.cost.j, cur.cost.j1, cur.cost.j2, k ? step : 0.0, res, halvings};
    rep.history.push_back(rec);
    if (on_iterate) on_iterate(rec);
    if (res <= target) {
      rep.status = OptimizationReport::Status::converged;
      break;
    }
    if (k >= opt.max_iterations) {
      rep.status = OptimizationReport::Status::max_iterations;
      break;
    }
    bool accepted = false;
    ControlTriple w_new, d;
    std::optional<ReducedProblem::Evaluation> trial;
    halvings = 0;
    for (; halvings <= opt.max_halvings; ++halvings, step *= 0.5) {
      w_new = prox_project(w, g, step, cw, b);
      d = w_new - w;
      const double dn2 = u.inner(d, d);
      try {
        trial = rp.evaluate(w_new);
        ++rep.forward_solves;
      } catch (const SolverError&) {
        continue;
      }
      const double required = opt.armijo / step * dn2;
      const double fj = trial->cost.j, f0 = cur.cost.j;
      // A decrease below the rounding level of J cannot be certified; any
      // non-increasing step is then accepted.
      if (fj <= f0 - required || (fj <= f0 && required <= 1e-14 * std::max(1.0, std::abs(f0)))) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      rep.status = OptimizationReport::Status::stagnation;
      std::ostringstream msg;
      msg << "line search failed after " << opt.max_halvings << " halvings at residual " << res;
      rep.message = msg.str();
      break;
    }
    const ControlTriple g_new = rp.gradient(trial->traj);
    const ControlTriple y = g_new - g;
    const double sy = u.inner(d, y), ss = u.inner(d, d);
    step = sy > 0.0 ? ss / sy : 4.0 * step;
    step = std::clamp(step, opt.min_step, opt.max_step);
    w = std::move(w_new);
    cur = std::move(*trial);
    g = g_new;
    res = stationarity_residual(u, w, g, cw, b);
  }
  rep.w = w;
  rep.gradient = g;
  rep.cost = cur.cost;
  rep.residual = res;
  if (rep.message.empty()) rep.message = to_string(rep.status);

  const AdjointTrajectory adj = rp.adjoint(cur.traj);
  if (cw.g(4) > 0.0 && cw.g(5) > 0.0) {
    rep.sparsity = sparsity_report(w, adj, cw);
    rep.subgradients = recover_subgradients(w, adj, cw, b);
  }
  rep.projection_deviation = projection_formula_check(w, adj, cw, b);
  return rep;
}

/// Warm start: w1 = sigma_c clipped, w2 and w3 from drug schedules.
inline ControlTriple default_initial_controls(const Problem& pb, const ControlBounds& b, const DrugSchedule& cytotoxic,
                                              const DrugSchedule& antiangiogenic) {
  ControlTriple w = ControlTriple::constant(pb.boundary_count(), pb.time.steps, pb.params.sigma_c, 0.0, 0.0);
  for (int n = 0; n < pb.time.steps; ++n) {
    const double t = pb.time.time(n + 1);
    w.w2[n] = drug_schedule_eval(cytotoxic, t);
    w.w3[n] = drug_schedule_eval(antiangiogenic, t);
  }
  return b.clamp(w);
}

}  // namespace tumopt
