#include "tumopt/optimizer.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace tumopt;
using namespace testing_support;

namespace {

ControlBounds unit_bounds(const Problem& pb) {
  return ControlBounds::uniform(pb.boundary_count(), pb.time.steps, {0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0});
}

// Three-entry control living in w2 only, with a single boundary node of zero weight.
struct Tiny {
  ControlTriple w = ControlTriple::zeros(1, 3);
  ControlBounds b = ControlBounds::uniform(1, 3, {0.0, 0.0}, {0.0, 1.0}, {0.0, 0.0});
  ControlSpace u{Vector::Zero(1), 1.0};
  CostWeights cw;
  Tiny() { cw.gamma = {1.0, 1.0, 1.0, 0.5, 0.0}; }
};

CostWeights tracking_weights(const Problem& pb, double g4, double g5) {
  CostWeights cw;
  cw.alpha_omega = 1.0;
  cw.gamma = {0.5, 1.0, 1.0, g4, g5};
  cw.phi_omega = Vector::Constant(pb.nodes(), -1.0);
  return cw;
}

}  // namespace

TEST(Prox, ClampsWithoutL1Weight) {
  Tiny t;
  t.cw.gamma[3] = 0.0;
  ControlTriple g = ControlTriple::zeros(1, 3);
  t.w.w2 << 0.5, 0.2, 0.9;
  g.w2 << 1.0, -0.3, -1.0;
  const ControlTriple out = prox_project(t.w, g, 1.0, t.cw, t.b);
  EXPECT_EQ(out.w2[0], 0.0);  // 0.5 - 1.0 = -0.5 clamps to 0
  EXPECT_DOUBLE_EQ(out.w2[1], 0.5);
  EXPECT_EQ(out.w2[2], 1.0);
}

TEST(Prox, InteriorPointTakesPlainGradientStep) {
  Tiny t;
  t.cw.gamma[3] = 0.0;
  ControlTriple g = ControlTriple::zeros(1, 3);
  t.w.w2 << 0.5, 0.5, 0.5;
  g.w2 << 0.1, -0.1, 0.2;
  const ControlTriple out = prox_project(t.w, g, 0.5, t.cw, t.b);
  EXPECT_NEAR((out.w2 - (t.w.w2 - 0.5 * g.w2)).cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(Prox, SoftThresholdOnNonnegativeBoxIsShiftedClamp) {
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> d(-3.0, 3.0);
  for (int i = 0; i < 200; ++i) {
    const double x = d(rng), t = std::abs(d(rng));
    EXPECT_DOUBLE_EQ(prox_scalar(x, t, 0.0, 1.0), std::clamp(x - t, 0.0, 1.0));
  }
}

TEST(Stationarity, HandBuiltKktPoint) {
  // gamma_4 = 0.5 on [0, 1]:
  //   w = 0,   g =  0.2: g + gamma_4 >= 0, zero is optimal
  //   w = 1,   g = -0.7: g + gamma_4 <= 0, upper bound is optimal
  //   w = 0.3, g = -0.5: g + gamma_4 = 0, interior optimum
  Tiny t;
  ControlTriple g = ControlTriple::zeros(1, 3);
  t.w.w2 << 0.0, 1.0, 0.3;
  g.w2 << 0.2, -0.7, -0.5;
  const ControlTriple fixed = prox_project(t.w, g, 1.0, t.cw, t.b);
  EXPECT_LT((fixed.w2 - t.w.w2).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT(stationarity_residual(t.u, t.w, g, t.cw, t.b), 1e-15);
  for (double s : {0.1, 0.7, 3.0}) EXPECT_LT((prox_project(t.w, g, s, t.cw, t.b).w2 - t.w.w2).norm(), 1e-15);
  // breaking any one of the three conditions leaves a gap
  const double broken[3] = {-0.8, 0.0, -0.4};
  for (int k = 0; k < 3; ++k) {
    ControlTriple g2 = g;
    g2.w2[k] = broken[k];
    EXPECT_GT(stationarity_residual(t.u, t.w, g2, t.cw, t.b), 0.09) << k;
  }
}

TEST(Stationarity, RandomInteriorPointIsNotStationary) {
  auto pb = make_problem(4, 4);
  StateSolver s(pb);
  std::mt19937 rng(7);
  ControlTriple w = random_controls(*pb, rng, 0.5, 0.5, 0.5);
  w += ControlTriple::constant(pb->boundary_count(), 4, 0.2, 0.2, 0.2);
  ReducedProblem rp(s, default_initial(*pb), tracking_weights(*pb, 0.1, 0.1), unit_bounds(*pb));
  const ControlTriple g = rp.gradient(rp.evaluate(w).traj);
  EXPECT_GT(stationarity_residual(rp.space(), w, g, rp.weights(), rp.bounds()), 1e-3);
}

TEST(Optimize, PureRegularisationConvergesToZeroQuickly) {
  auto pb = make_problem(4, 6);
  StateSolver s(pb);
  CostWeights cw;
  cw.alpha_omega = 0.0;
  cw.gamma = {0.3, 0.2, 0.5, 0.0, 0.0};
  ReducedProblem rp(s, default_initial(*pb), cw, unit_bounds(*pb));
  std::mt19937 rng(9);
  const OptimizationReport rep = optimize(rp, random_controls(*pb, rng));
  ASSERT_TRUE(rep.converged()) << rep.message;
  EXPECT_LE(rep.history.size(), 3u);  // initial record plus at most two iterations
  EXPECT_EQ(rep.w.w1.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(rep.w.w2.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(rep.w.w3.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LE(rep.residual, 1e-12);
  for (double d : rep.projection_deviation) EXPECT_EQ(d, 0.0);
}

TEST(Optimize, HistoryIsMonotoneAndIteratesAdmissible) {
  auto pb = make_problem(6, 8);
  StateSolver s(pb);
  ReducedProblem rp(s, default_initial(*pb), tracking_weights(*pb, 2.0, 0.1), unit_bounds(*pb));
  OptimizerOptions opt;
  opt.max_iterations = 60;
  opt.relative_tolerance = false;
  std::vector<IterateRecord> seen;
  const auto w0 = ControlTriple::constant(pb->boundary_count(), 8, 1.0, 0.5, 0.5);
  const OptimizationReport rep = optimize(rp, w0, opt, [&](const IterateRecord& r) { seen.push_back(r); });
  ASSERT_EQ(seen.size(), rep.history.size());
  for (std::size_t i = 1; i < rep.history.size(); ++i) EXPECT_LE(rep.history[i].j, rep.history[i - 1].j);
  EXPECT_TRUE(rp.bounds().admissible(rep.w));
  EXPECT_TRUE(rep.converged()) << rep.message;
  EXPECT_LE(rep.residual, 1e-8);
  ASSERT_EQ(rep.gate.size(), 3u);
  for (const auto& g : rep.gate) EXPECT_LE(g.relative_error, 1e-6);
}

TEST(Optimize, IndependentOfTrackingTargetWhenTrackingIsOff) {
  auto pb = make_problem(4, 5);
  StateSolver s(pb);
  CostWeights a;
  a.alpha_omega = 0.0;
  a.gamma = {0.3, 0.2, 0.5, 0.1, 0.1};
  a.phi_q = {Vector::Constant(pb->nodes(), 0.3)};
  CostWeights b = a;
  b.phi_q = {Vector::Constant(pb->nodes(), -0.8)};
  std::mt19937 rng(13);
  const ControlTriple w0 = random_controls(*pb, rng);
  const auto ra = optimize(ReducedProblem(s, default_initial(*pb), a, unit_bounds(*pb)), w0);
  const auto rb = optimize(ReducedProblem(s, default_initial(*pb), b, unit_bounds(*pb)), w0);
  EXPECT_EQ((ra.w - rb.w).w2.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((ra.w - rb.w).w1.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Optimize, RejectsInadmissibleStart) {
  auto pb = make_problem(3, 3);
  StateSolver s(pb);
  ReducedProblem rp(s, default_initial(*pb), tracking_weights(*pb, 0.1, 0.1), unit_bounds(*pb));
  EXPECT_THROW(optimize(rp, ControlTriple::constant(pb->boundary_count(), 3, 2.0, 0.0, 0.0)), OptimizationError);
}

TEST(Optimize, LineSearchFailureIsReportedNotThrown) {
  auto pb = make_problem(4, 4);
  StateSolver s(pb);
  ReducedProblem rp(s, default_initial(*pb), tracking_weights(*pb, 0.1, 0.1), unit_bounds(*pb));
  OptimizerOptions opt;
  opt.max_halvings = 0;
  opt.initial_step = 1e6;
  opt.min_step = 1e6;
  opt.gradient_gate = false;
  const auto rep = optimize(rp, ControlTriple::constant(pb->boundary_count(), 4, 0.5, 0.5, 0.5), opt);
  EXPECT_EQ(rep.status, OptimizationReport::Status::stagnation);
  EXPECT_NE(rep.message.find("line search"), std::string::npos);
}

// ---------------------------------------------------------------------------

TEST(Subgradients, CaseRule) {
  AdjointTrajectory adj;
  adj.ik = Vector::Zero(4);
  adj.ih = Vector::Zero(4);
  ControlTriple w = ControlTriple::constant(1, 4, 0.0, 0.4, 0.0);
  CostWeights cw;
  cw.gamma = {1, 1, 1, 0.5, 0.5};
  const ControlBounds b = ControlBounds::uniform(1, 4, {0, 1}, {0, 1}, {0, 1});
  const auto s = recover_subgradients(w, adj, cw, b);
  for (int n = 0; n < 4; ++n) {
    EXPECT_EQ(s.lambda2[n], 1.0);
    EXPECT_EQ(s.lambda3[n], 0.0);
    EXPECT_EQ(s.case3[n], "zero");
  }
  adj.ik << -3.0, -0.25, 0.25, 3.0;
  w.w2.setZero();
  const auto z = recover_subgradients(w, adj, cw, b);
  EXPECT_EQ(z.lambda2[0], -1.0);
  EXPECT_DOUBLE_EQ(z.lambda2[1], -0.5);
  EXPECT_DOUBLE_EQ(z.lambda2[2], 0.5);
  EXPECT_EQ(z.lambda2[3], 1.0);
  cw.gamma[3] = 0.0;
  EXPECT_THROW(recover_subgradients(w, adj, cw, b), OptimizationError);
}

TEST(Sparsity, ZeroIntervalsMatchDirectScan) {
  std::mt19937 rng(17);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<bool> z(23);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = coin(rng);
    const auto iv = zero_intervals(z);
    std::vector<bool> back(z.size(), false);
    for (std::size_t k = 0; k < iv.size(); ++k) {
      for (int i = iv[k].first; i <= iv[k].second; ++i) back[i] = true;
      if (k > 0) {
        EXPECT_GT(iv[k].first, iv[k - 1].second + 1);  // maximal
      }
    }
    EXPECT_EQ(back, z);
  }
}

TEST(Sparsity, ZeroAdjointAgreesEverywhere) {
  auto pb = make_problem(4, 5);
  StateSolver s(pb);
  CostWeights cw;
  cw.alpha_omega = 0.0;
  cw.gamma = {0.3, 0.2, 0.5, 0.1, 0.1};
  ReducedProblem rp(s, default_initial(*pb), cw, unit_bounds(*pb));
  const auto rep = optimize(rp, ControlTriple::constant(pb->boundary_count(), 5, 0.5, 0.5, 0.5));
  ASSERT_TRUE(rep.sparsity);
  EXPECT_EQ(rep.sparsity->w2.agreement(), 1.0);
  EXPECT_EQ(rep.sparsity->w3.agreement(), 1.0);
  EXPECT_EQ(rep.sparsity->w2.counted, 5);
  ASSERT_EQ(rep.sparsity->w2.zero_intervals.size(), 1u);
  EXPECT_EQ(rep.sparsity->w2.zero_intervals[0], std::make_pair(0, 4));
}

TEST(Sparsity, ConvergedTrackingRunSatisfiesEquivalences) {
  auto pb = make_problem(8, 16);
  StateSolver s(pb);
  ReducedProblem rp(s, default_initial(*pb), tracking_weights(*pb, 7.0, 0.1), unit_bounds(*pb));
  OptimizerOptions opt;
  opt.relative_tolerance = false;
  const auto rep = optimize(rp, ControlTriple::constant(pb->boundary_count(), 16, 1.0, 0.5, 0.5), opt);
  ASSERT_TRUE(rep.converged()) << rep.message;
  ASSERT_TRUE(rep.sparsity);
  EXPECT_GE(rep.sparsity->w2.agreement(), 0.99);
  EXPECT_GE(rep.sparsity->w3.agreement(), 0.99);
  for (int n = 0; n < 16; ++n) {
    EXPECT_GE(rep.subgradients->lambda2[n], -1.0);
    EXPECT_LE(rep.subgradients->lambda2[n], 1.0);
  }
  for (double d : rep.projection_deviation) EXPECT_LE(d, 1e-6);

  // moving away from the optimum shows up in the representation formulas
  ControlTriple moved = rep.w;
  moved.w1.array() += 1e-3;
  moved = rp.bounds().clamp(moved);
  const auto adj = rp.adjoint(rp.evaluate(moved).traj);
  const auto dev = projection_formula_check(moved, adj, rp.weights(), rp.bounds());
  EXPECT_GE(dev[0], 1e-4);
}

TEST(InitialControls, FollowDrugSchedules) {
  auto pb = make_problem(3, 4);
  DrugSchedule a{2.0, {0.0}, 0.5};
  DrugSchedule c{0.3, {0.5}, 1.0};
  const ControlTriple w = default_initial_controls(*pb, unit_bounds(*pb), a, c);
  EXPECT_EQ(w.w2[0], 1.0);  // 2 exp(-0.5) clipped to the upper bound
  EXPECT_NEAR(w.w2[3], 2.0 * std::exp(-2.0), 1e-15);
  EXPECT_EQ(w.w3[0], 0.0);
  EXPECT_NEAR(w.w3[1], 0.3, 1e-15);
  EXPECT_EQ(w.w1.minCoeff(), 1.0);
}
