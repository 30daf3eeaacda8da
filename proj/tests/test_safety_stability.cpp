#include <srmpc/mpc/tube_mpc.hpp>
#include <srmpc/safety/gate.hpp>
#include <srmpc/safety/nonblocking.hpp>
#include <srmpc/stability/lyapunov.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace srmpc;
using namespace srmpc::safety;
using namespace srmpc::stability;

namespace {

/// Scalar "controller" feasible on |s| <= theta(0); its action is -theta(1) s.
const PolicyFn<Vec> interval_policy = [](const Vec& theta, const Vec& s) -> std::optional<Vec> {
  if (std::abs(s(0)) > theta(0)) return std::nullopt;
  return Vec::Constant(1, -theta(1) * s(0));
};

Vec th(double r, double k) { return Eigen::Vector2d(r, k); }

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::Io;
}

}  // namespace

TEST(Gate, NoCandidateKeepsTheIncumbent) {
  GateState<Vec> g{th(1, 0.5)};
  const auto r = gate(Vec::Constant(1, 0.4), g, interval_policy);
  EXPECT_FALSE(r.decision.has_value());
  EXPECT_DOUBLE_EQ(r.action(0), -0.2);
}

TEST(Gate, IdenticalCandidateIsApplied) {
  GateState<Vec> g{th(1, 0.5)};
  g.candidate = th(1, 0.5);
  const auto r = gate(Vec::Constant(1, 0.4), g, interval_policy);
  ASSERT_TRUE(r.decision.has_value());
  EXPECT_EQ(r.decision->outcome, UpdateOutcome::Applied);
  EXPECT_EQ(r.decision->reason, UpdateReason::NewFeasibleHere);
  EXPECT_FALSE(g.candidate.has_value());
  EXPECT_DOUBLE_EQ(r.action(0), -0.2);
}

TEST(Gate, CandidateActionIsAppliedWhenFeasible) {
  GateState<Vec> g{th(1, 0.5)};
  g.candidate = th(2, 0.9);
  const auto r = gate(Vec::Constant(1, 0.5), g, interval_policy);
  EXPECT_DOUBLE_EQ(r.action(0), -0.45);
  EXPECT_EQ(g.current, th(2, 0.9));
}

TEST(Gate, InfeasibleCandidateIsDeferred) {
  GateState<Vec> g{th(1, 0.5)};
  g.candidate = th(0.1, 0.9);
  const auto r = gate(Vec::Constant(1, 0.5), g, interval_policy);
  ASSERT_TRUE(r.decision.has_value());
  EXPECT_EQ(r.decision->outcome, UpdateOutcome::Deferred);
  EXPECT_EQ(r.decision->reason, UpdateReason::NewInfeasibleHere);
  EXPECT_EQ(r.decision->fail_count, 1);
  EXPECT_DOUBLE_EQ(r.action(0), -0.25);  // incumbent action
  EXPECT_TRUE(g.candidate.has_value());
  EXPECT_EQ(g.current, th(1, 0.5));
  // Later, once the state enters the candidate's region, it is promoted.
  const auto r2 = gate(Vec::Constant(1, 0.05), g, interval_policy);
  EXPECT_EQ(r2.decision->outcome, UpdateOutcome::Applied);
}

TEST(Gate, InfeasibleIncumbentIsAnError) {
  GateState<Vec> g{th(0.1, 0.5)};
  EXPECT_EQ(code_of([&] { gate(Vec::Constant(1, 0.5), g, interval_policy); }), ErrorCode::IncumbentInfeasible);
}

TEST(Backtracking, ShrinkIsGeometric) {
  learning::UpdateStepConfig cfg;
  cfg.rho = 0.9;
  cfg.n_fail = 1;
  GateState<Vec> g{th(1, 0.5)};
  g.alpha = 1.0;
  // Each round: an infeasible candidate is deferred once, then the step is recomputed at rho alpha.
  const std::function<std::optional<Vec>(double)> compute = [](double a) -> std::optional<Vec> {
    return th(0.45 - a, 0.5);
  };
  int shrinks = 0;
  for (int k = 1; k <= 5; ++k) {
    g.candidate = th(0.0, 0.5);
    gate(Vec::Constant(1, 0.5), g, interval_policy);
    backtrack_shrink(g, cfg, compute);
    ++shrinks;
    EXPECT_NEAR(g.alpha, std::pow(0.9, shrinks), 1e-15);
    EXPECT_EQ(g.fail_count, 0);
  }
}

TEST(Backtracking, ShrinkSkipsRejectedCandidates) {
  learning::UpdateStepConfig cfg;
  GateState<Vec> g{th(1, 0.5)};
  g.fail_count = 1;
  // Post-checks reject everything above alpha = 0.5.
  backtrack_shrink(g, cfg, std::function<std::optional<Vec>(double)>([](double a) -> std::optional<Vec> {
                     if (a > 0.5) return std::nullopt;
                     return th(1, a);
                   }));
  EXPECT_NEAR(g.alpha, std::pow(0.9, 7), 1e-15);  // 0.9^7 = 0.478 is the first below 0.5
  ASSERT_TRUE(g.candidate.has_value());
  EXPECT_NEAR((*g.candidate)(1), g.alpha, 1e-15);
}

TEST(Backtracking, ShrinkBeforeNDeferralsIsRejected) {
  learning::UpdateStepConfig cfg;
  cfg.n_fail = 3;
  GateState<Vec> g{th(1, 0.5)};
  g.fail_count = 2;
  EXPECT_EQ(code_of([&] {
              backtrack_shrink(g, cfg, std::function<std::optional<Vec>(double)>([](double) { return th(1, 0); }));
            }),
            ErrorCode::InvalidArgument);
}

TEST(Backtracking, AlphaUnderflow) {
  learning::UpdateStepConfig cfg;
  cfg.rho = 0.5;
  GateState<Vec> g{th(1, 0.5)};
  g.fail_count = 1;
  g.candidate = th(0, 0);
  EXPECT_EQ(code_of([&] {
              backtrack_shrink(g, cfg,
                               std::function<std::optional<Vec>(double)>([](double) { return std::optional<Vec>{}; }));
            }),
            ErrorCode::AlphaUnderflow);
  EXPECT_FALSE(g.candidate.has_value());
  EXPECT_LT(g.alpha, kAlphaFloor);
}

TEST(Backtracking, ProposeShrinksOnPostCheckFailure) {
  learning::UpdateStepConfig cfg;
  GateState<Vec> g{th(1, 0.5)};
  propose(g, cfg, std::function<std::optional<Vec>(double)>([](double a) -> std::optional<Vec> {
            if (a > 0.85) return std::nullopt;
            return th(1, a);
          }));
  EXPECT_NEAR(g.alpha, 0.81, 1e-15);
  EXPECT_TRUE(g.candidate.has_value());
}

TEST(Deferral, Statistics) {
  const auto st = deferral_stats({{0, 0}, {3, 7}, {10, 12}, {20, -1}});
  EXPECT_EQ(st.proposals, 4);
  EXPECT_EQ(st.applied, 3);
  EXPECT_EQ(st.pending, 1);
  EXPECT_EQ(st.max_duration, 4);
  EXPECT_DOUBLE_EQ(st.mean_duration, 2.0);
  EXPECT_FALSE(st.all_applied());
  EXPECT_EQ(code_of([] { deferral_stats({{5, 4}}); }), ErrorCode::InvalidArgument);
}

TEST(NonBlocking, VisitFrequencyBoundedByMeasureTimesDensity) {
  VisitBoundConfig c;
  c.step = [](double s) { return 0.5 * s; };
  // One step from s0 = 0 lands in A with probability exactly mu(A) phi_bar, so pool several
  // seeds to keep the sampling error well inside the margin.
  double pooled = 0.0;
  VisitBoundReport r;
  for (unsigned long long seed = 1; seed <= 10; ++seed) {
    c.seed = seed;
    r = visit_bound_check(c);
    pooled += r.frequency / 10.0;
  }
  EXPECT_NEAR(r.bound, 0.1, 1e-15);  // mu(A) = 0.02, density 5
  EXPECT_NEAR(pooled, 0.1, r.margin / std::sqrt(10.0));
  // Staying in A for several consecutive steps is rarer still.
  c.horizon = 3;
  const auto r3 = visit_bound_check(c);
  EXPECT_TRUE(r3.pass);
  EXPECT_LT(r3.frequency, 0.01);
}

TEST(NonBlocking, InvalidConfigurations) {
  VisitBoundConfig c;
  c.step = [](double s) { return s; };
  c.s0 = 1.0;
  EXPECT_EQ(code_of([&] { visit_bound_check(c); }), ErrorCode::InvalidArgument);
}

TEST(Lyapunov, ZetaMinAlgebra) {
  EXPECT_DOUBLE_EQ(zeta_min(1.0, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(zeta_min(2.0, 0.5), 6.0);
  EXPECT_DOUBLE_EQ(zeta_min(0.0, 0.9), 0.0);
  EXPECT_NEAR(zeta_min(0.1, 0.9), 1.9, 1e-14);
  EXPECT_EQ(code_of([] { zeta_min(1.0, 1.0); }), ErrorCode::InvalidArgument);
}

TEST(Lyapunov, WIsLinearInTheParameterDistance) {
  EXPECT_DOUBLE_EQ(w_value(2.0, 0.0, 5.0), 2.0);
  EXPECT_DOUBLE_EQ(w_value(2.0, 3.0, 0.5), 3.5);
  EXPECT_DOUBLE_EQ(w_value(th(3, 4), Vec::Zero(2), 1.0, 2.0), 11.0);
  EXPECT_EQ(code_of([] { w_value(kInf, 0.0, 1.0); }), ErrorCode::InfeasibleState);
}

TEST(Lyapunov, GeometricSequenceRate) {
  const Vec star = Vec::Zero(2);  // halving then stays exact
  std::vector<Vec> seq;
  Vec d = th(0.3, -0.4);
  for (int p = 0; p < 30; ++p) {
    seq.push_back(star + d);
    d *= 0.5;
  }
  const auto r = estimate_rates(seq, star, 2.0);
  EXPECT_NEAR(r.r_hat, 0.5, 1e-12);
  EXPECT_TRUE(r.strict_armed);
  EXPECT_NEAR(r.zeta_min, 6.0, 1e-10);
  EXPECT_NEAR(r.q_hat, 0.0, 1e-15);
}

TEST(Lyapunov, DegenerateSequence) {
  const std::vector<Vec> seq(5, th(1, 1));
  EXPECT_EQ(code_of([&] { estimate_rates(seq, th(1, 1)); }), ErrorCode::DegenerateSequence);
}

TEST(Lyapunov, AlphaVSampleSkipsInfeasibleStates) {
  const std::vector<Vec> s{Vec::Constant(1, 1.0), Vec::Constant(1, 2.0), Vec::Constant(1, 9.0)};
  const auto vp = [](const Vec& x) { return x(0) > 5 ? kInf : x(0) * x(0); };
  const auto vn = [](const Vec& x) { return 1.5 * x(0) * x(0); };
  EXPECT_DOUBLE_EQ(alpha_v_sample(s, vp, vn, 0.5), 4.0);
  EXPECT_DOUBLE_EQ(alpha_v_sample(s, vp, vn, 0.0), 0.0);
}

TEST(Lyapunov, NoiselessFrozenRunDecreases) {
  const auto prob = mpc::TubeProblem::boxed(
      [] {
        model::LinearModel m;
        m.A = (Mat(2, 2) << 1.0, 0.1, 0.0, 1.0).finished();
        m.B = (Mat(2, 1) << 0.05, 0.1).finished();
        m.b = Vec::Zero(2);
        return m;
      }(),
      Vec::Constant(2, -1.0), Vec::Constant(2, 1.0), Vec::Constant(1, -10.0), Vec::Constant(1, 10.0), 4, 30);
  mpc::TubeMpcParameters p;
  p.Lambda = Mat::Zero(2, 2);
  p.lambda = Vec::Zero(2);
  p.Q = Eigen::Vector2d(1.0, 0.01).asDiagonal();
  p.R = Mat::Constant(1, 1, 0.01);
  p.x_r = Vec::Zero(2);
  p.u_r = Vec::Zero(1);
  p.M = (Mat(4, 2) << 1, 0, -1, 0, 0, 1, 0, -1).finished() / 0.03;
  const mpc::TubeMpc mpc(prob, p);
  std::vector<LyapunovRecord> rec;
  Vec s = Eigen::Vector2d(0.8, -0.5);
  for (int i = 0; i < 40; ++i) {
    const auto sol = mpc.solve(s);
    ASSERT_TRUE(sol.feasible);
    LyapunovRecord r;
    r.step = i;
    r.v_hat = sol.core_value;
    rec.push_back(r);
    s = prob.model.predict(s, sol.nominal_inputs.col(0));
  }
  // Level set at delta = 0 is {V = 0}; gamma = 0.9.
  annotate(rec, std::vector<int>(rec.size(), 0), [](std::size_t) { return 0.0; }, 0.9, 0.1);
  // Once V reaches round-off the decrease is no longer strict; check the informative part.
  std::vector<LyapunovRecord> head;
  for (const auto& r : rec)
    if (r.v_hat > 1e-10) head.push_back(r);
  ASSERT_GT(head.size(), 10u);
  EXPECT_TRUE(check_v_decrease(head).empty());
  EXPECT_TRUE(check_w_decrease(head).empty());
  const auto iss = check_iss(rec);
  EXPECT_TRUE(iss.fit_ok) << iss.failure;
}

TEST(Lyapunov, WViolationIsReported) {
  std::vector<LyapunovRecord> rec(3);
  rec[0].v_hat = 1.0;
  rec[1].v_hat = 0.5;
  rec[2].v_hat = 0.4;
  std::vector<double> dp{0.1, 0.9, 0.0};
  for (std::size_t i = 0; i < 3; ++i) rec[i].step = static_cast<int>(i), rec[i].delta_p = dp[i];
  annotate(rec, {0, 1, 1}, [](std::size_t) { return 0.0; }, 0.9, 1.0);
  // W: 1.1 -> 1.4 -> 0.4
  const auto v = check_w_decrease(rec);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].step, 0);
  EXPECT_EQ(v[0].kind, "w_not_decreasing");
  EXPECT_NEAR(v[0].amount, 0.3, 1e-12);
}

TEST(Lyapunov, LeavingTheLevelSetIsReported) {
  std::vector<LyapunovRecord> rec(2);
  rec[0].v_hat = 0.5;
  rec[1].v_hat = 2.0;
  annotate(rec, {0, 0}, [](std::size_t) { return 0.1; }, 0.9, 1.0);  // level 1.0
  EXPECT_TRUE(rec[0].in_level_set);
  const auto v = check_w_decrease(rec);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, "left_level_set");
}

TEST(Iss, FrozenParameterWithExactDelta) {
  // V(s) = s^2, s+ = 0.5 s + w, |w| <= 0.1, gamma = 0.5; delta is the maximum of
  // (0.5 s + w)^2 - gamma s^2 over a grid of |s| <= 1 and the noise vertices.
  const double gamma = 0.5;
  double delta = 0.0;
  for (int i = -100; i <= 100; ++i)
    for (double w : {-0.1, 0.1}) {
      const double s = 0.01 * i;
      delta = std::max(delta, std::pow(0.5 * s + w, 2) - gamma * s * s);
    }
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> W(-0.1, 0.1);
  std::vector<LyapunovRecord> rec;
  double s = 1.0;
  for (int i = 0; i < 200; ++i) {
    LyapunovRecord r;
    r.step = i;
    r.v_hat = s * s;
    rec.push_back(r);
    s = 0.5 * s + W(rng);
  }
  annotate(rec, std::vector<int>(rec.size(), 0), [&](std::size_t) { return delta; }, gamma, 1.0);
  const auto iss = check_iss(rec);
  EXPECT_TRUE(iss.fit_ok);
  EXPECT_GE(iss.margin, 0.0);
  // An underestimated delta leaves positive residuals at zero parameter distance.
  annotate(rec, std::vector<int>(rec.size(), 0), [](std::size_t) { return 0.0; }, gamma, 1.0);
  const auto bad = check_iss(rec);
  EXPECT_FALSE(bad.fit_ok);
  EXPECT_LT(bad.margin, 0.0);
}

TEST(Iss, EnvelopeIsMonotoneThroughTheOrigin) {
  std::vector<LyapunovRecord> rec(5);
  const double dp[] = {0.4, 0.1, 0.3, 0.2, 0.0};
  const double res[] = {0.2, 0.5, -1.0, 0.1, 0.0};
  for (int i = 0; i < 5; ++i) rec[i].delta_p = dp[i], rec[i].iss_residual = res[i];
  const auto r = check_iss(rec);
  EXPECT_TRUE(r.fit_ok);
  EXPECT_DOUBLE_EQ(r.beta(0.0), 0.0);
  EXPECT_DOUBLE_EQ(r.beta(0.05), 0.25);
  for (double x = 0.0; x < 0.5; x += 0.01) EXPECT_LE(r.beta(x), r.beta(x + 0.01) + 1e-15);
  EXPECT_DOUBLE_EQ(r.beta(1.0), 0.5);
}
