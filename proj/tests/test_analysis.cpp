#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "qafel/acceptance.hpp"
#include "qafel/analysis.hpp"

using namespace qafel;

namespace {

TheoremInputs inputs(double L, int K, int P, std::int64_t tau, double eg, double el,
                     double ds) {
  TheoremInputs in;
  in.L = L;
  in.K = K;
  in.P = P;
  in.tau_max = tau;
  in.eta_g = eg;
  in.eta_l = el;
  in.delta_s = ds;
  return in;
}

}  // namespace

// Slack values worked out by hand with exact fractions.
TEST(Conditions, HandComputedSlack) {
  const double inf = std::numeric_limits<double>::infinity();
  struct Case {
    TheoremInputs in;
    double server, drift, local;
  };
  const Case cases[] = {
      {inputs(1.0, 1, 1, 0, 0.1, 0.01, 1.0), 0.919, inf, 0.115},
      {inputs(2.0, 4, 2, 2, 0.05, 0.005, 0.5), 0.4094375, 0.000365625,
       0.036666666666666667},
      {inputs(0.5, 10, 4, 3, 1.0, 0.1, 1.0), -16.8, -0.0089583333333333333, 0.0},
      {inputs(10.0, 10, 1, 10, 0.2, 0.01, 0.1), -35.0218, -0.0000875, 0.0025},
      {inputs(3.0, 5, 8, 5, 1e-3, 1e-3, 0.8), 0.12495938, 3.3402777777777778e-6,
       0.0082592592592592593},
  };
  for (const auto& c : cases) {
    const auto r = check_stepsize_conditions(c.in);
    EXPECT_NEAR(r.server.slack, c.server, 1e-12 * std::max(1.0, std::abs(c.server)));
    if (std::isinf(c.drift)) {
      EXPECT_TRUE(std::isinf(r.drift.slack));
      EXPECT_TRUE(r.drift.pass);
    } else {
      EXPECT_NEAR(r.drift.slack, c.drift, 1e-15);
    }
    EXPECT_NEAR(r.local.slack, c.local, 1e-15);
    EXPECT_EQ(r.server.pass, c.server >= 0);
    EXPECT_EQ(r.local.pass, c.local >= 0);
    EXPECT_EQ(r.all_pass(), r.server.pass && r.drift.pass && r.local.pass);
  }
}

TEST(Conditions, AcceptanceCasesAgreeWithUnitOracle) {
  const auto cases = hand_slack_cases();
  ASSERT_EQ(cases.size(), 5u);
  EXPECT_NEAR(cases[4].server_slack, 0.12495938, 1e-15);
  EXPECT_NEAR(cases[1].drift_slack, 0.000365625, 1e-15);
}

TEST(Bound, HandComputedTerms) {
  TheoremInputs in;
  in.L = 2.0;
  in.sigma_sq = 1.5;
  in.B = 0.5;
  in.F = 5.0;
  in.T = 1000;
  in.K = 10;
  in.P = 4;
  in.tau_max = 3;
  in.eta_g = 0.1;
  in.eta_l = 0.01;
  in.delta_c = 0.5;
  in.delta_s = 0.25;
  const auto b = evaluate_bound(in);
  EXPECT_NEAR(b.descent, 5.0, 1e-13);
  EXPECT_NEAR(b.server_stale, 1233.0 / 312500.0, 1e-16);
  EXPECT_NEAR(b.drift, 1.024, 1e-14);
  EXPECT_NEAR(b.client_quant, 9e-4, 1e-17);
  EXPECT_NEAR(b.total, 7536057.0 / 1250000.0, 1e-13);
}

TEST(Bound, RejectsZeroStepAndBadInputs) {
  TheoremInputs in;
  EXPECT_THROW(evaluate_bound(in), ConfigError);
  in.eta_g = in.eta_l = 0.1;
  in.delta_s = 0.0;
  EXPECT_THROW(evaluate_bound(in), ConfigError);
  in.delta_s = 1.0;
  in.tau_max = -1;
  EXPECT_THROW(check_stepsize_conditions(in), ConfigError);
}

TEST(Corollary, ScheduleValues) {
  const auto s = corollary_stepsizes(10, 4, 1000, {});
  EXPECT_NEAR(s.eta_l, 0.005, 1e-15);
  EXPECT_NEAR(s.eta_g, 2.5 / std::sqrt(10.0), 1e-15);
}

TEST(Corollary, SuggestHalvesServerConstant) {
  // Local and drift conditions hold at c_l = 1; the server condition needs
  // c_g ≤ 0.0209, reached after four halvings of 0.25.
  const auto s = suggest_stepsizes(10, 4, 1000, 2.0, 5, 0.5);
  EXPECT_EQ(s.halvings, 4);
  EXPECT_EQ(s.constants.c_l, 1.0);
  EXPECT_EQ(s.constants.c_g, 0.015625);
  TheoremInputs in = inputs(2.0, 10, 4, 5, s.eta_g, s.eta_l, 0.5);
  in.T = 1000;
  EXPECT_TRUE(check_stepsize_conditions(in).all_pass());
}

TEST(Corollary, SuggestHalvesLocalConstantFirst) {
  const auto s = suggest_stepsizes(1, 1, 10, 10.0, 4, 1.0);
  EXPECT_LT(s.constants.c_l, 1.0);
  TheoremInputs in = inputs(10.0, 1, 1, 4, s.eta_g, s.eta_l, 1.0);
  in.T = 10;
  EXPECT_TRUE(check_stepsize_conditions(in).all_pass());
}

TEST(Corollary, FeasibleAcrossGrid) {
  for (int K : {1, 10})
    for (int P : {1, 4, 16})
      for (std::int64_t tau : {0, 3, 30})
        for (double L : {0.25, 4.0}) {
          const auto s = suggest_stepsizes(K, P, 5000, L, tau, 0.3);
          TheoremInputs in = inputs(L, K, P, tau, s.eta_g, s.eta_l, 0.3);
          in.T = 5000;
          EXPECT_TRUE(check_stepsize_conditions(in).all_pass());
        }
}

TEST(Corollary, SlopesAtFixedConstants) {
  const auto base = suggest_stepsizes(10, 4, 1000, 2.0, 5, 0.5);
  auto term = [&](std::int64_t T) {
    const auto s = corollary_stepsizes(10, 4, T, base.constants);
    TheoremInputs in = inputs(2.0, 10, 4, 5, s.eta_g, s.eta_l, 0.5);
    in.T = T;
    in.F = 1.0;
    in.sigma_sq = 1.0;
    in.B = 1.0;
    in.delta_c = 0.5;
    return evaluate_bound(in);
  };
  const auto a = term(1000), b = term(1000000);
  const double span = std::log(1000.0);
  EXPECT_NEAR(std::log(b.descent / a.descent) / span, -0.5, 1e-12);
  EXPECT_NEAR(std::log(b.drift / a.drift) / span, -2.0 / 3.0, 1e-12);
  EXPECT_NEAR(std::log(b.server_stale / a.server_stale) / span, -1.0, 1e-12);
  EXPECT_NEAR(std::log(b.client_quant / a.client_quant) / span, -0.5, 1e-12);
}
