#pragma once

// Step-size conditions, the four-term convergence bound, and the corollary
// step-size schedule. Constants are used exactly as stated by the theorem.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "qafel/core.hpp"

namespace qafel {

struct TheoremInputs {
  double L = 1.0;
  double sigma_sq = 0.0;  // local minibatch-gradient variance
  double B = 0.0;         // client heterogeneity
  double F = 0.0;         // f(x^0) − f(x^T), or f(x^0) − f* prospectively
  std::int64_t T = 1;
  int K = 1;
  int P = 1;
  std::int64_t tau_max = 0;
  double eta_g = 0.0;
  double eta_l = 0.0;
  double delta_c = 1.0;
  double delta_s = 1.0;

  void validate() const {
    auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
    auto nonneg = [](double v) { return v >= 0.0 && std::isfinite(v); };
    if (!positive(L)) throw ConfigError("L must be positive");
    if (!nonneg(sigma_sq) || !nonneg(B) || !nonneg(F))
      throw ConfigError("sigma_sq, B and F must be >= 0");
    if (T < 1 || K < 1 || P < 1) throw ConfigError("T, K, P must be >= 1");
    if (tau_max < 0) throw ConfigError("tau_max must be >= 0");
    if (!nonneg(eta_g) || !nonneg(eta_l))
      throw ConfigError("step sizes must be >= 0");
    if (!(delta_c > 0.0 && delta_c <= 1.0) || !(delta_s > 0.0 && delta_s <= 1.0))
      throw ConfigError("delta must lie in (0, 1]");
  }
};

struct ConditionResult {
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;  // rhs − lhs; infinite when rhs is
  bool pass = false;
};

struct ConditionReport {
  // η_g²(τ² + 8/δ_s²) + (1 + (1−δ_s)/K) η_ℓ η_g L ≤ 1/P
  ConditionResult server;
  // η_ℓ² ≤ 1/(80 L² P² τ); vacuous when τ = 0
  ConditionResult drift;
  // η_ℓ ≤ 1/(4 L (P+1))
  ConditionResult local;

  bool all_pass() const { return server.pass && drift.pass && local.pass; }
};

inline ConditionResult make_condition(double lhs, double rhs) {
  return {lhs, rhs, rhs - lhs, lhs <= rhs};
}

inline ConditionReport check_stepsize_conditions(const TheoremInputs& in) {
  in.validate();
  const double tau = static_cast<double>(in.tau_max);
  const double P = in.P, K = in.K, L = in.L;
  ConditionReport r;
  r.server = make_condition(
      in.eta_g * in.eta_g * (tau * tau + 8.0 / (in.delta_s * in.delta_s)) +
          (1.0 + (1.0 - in.delta_s) / K) * in.eta_l * in.eta_g * L,
      1.0 / P);
  const double drift_rhs = in.tau_max == 0
                               ? std::numeric_limits<double>::infinity()
                               : 1.0 / (80.0 * L * L * P * P * tau);
  r.drift = make_condition(in.eta_l * in.eta_l, drift_rhs);
  r.local = make_condition(in.eta_l, 1.0 / (4.0 * L * (P + 1.0)));
  return r;
}

struct BoundTerms {
  double descent = 0.0;       // 4F / (T η_g P η_ℓ)
  double server_stale = 0.0;  // 8L²η_g²Pη_ℓ²(2−δ_c)(τ²+8/δ_s²)σ²/K
  double drift = 0.0;         // 80L²P²η_ℓ²(σ² + B)
  double client_quant = 0.0;  // 2Lη_gη_ℓ(2−δ_c)σ²/K
  double total = 0.0;
  bool conditions_pass = false;
};

inline BoundTerms evaluate_bound(const TheoremInputs& in) {
  in.validate();
  if (!(in.eta_g > 0.0) || !(in.eta_l > 0.0))
    throw ConfigError("bound needs positive step sizes");
  const double L = in.L, P = in.P, K = in.K;
  const double T = static_cast<double>(in.T);
  const double tau = static_cast<double>(in.tau_max);
  const double eg = in.eta_g, el = in.eta_l;
  const double two_dc = 2.0 - in.delta_c;
  BoundTerms b;
  b.descent = 4.0 * in.F / (T * eg * P * el);
  b.server_stale = 8.0 * L * L * eg * eg * P * el * el * two_dc *
                   (tau * tau + 8.0 / (in.delta_s * in.delta_s)) * in.sigma_sq / K;
  b.drift = 80.0 * L * L * P * P * el * el * (in.sigma_sq + in.B);
  b.client_quant = 2.0 * L * eg * el * two_dc * in.sigma_sq / K;
  b.total = b.descent + b.server_stale + b.drift + b.client_quant;
  b.conditions_pass = check_stepsize_conditions(in).all_pass();
  return b;
}

// η_ℓ = c_ℓ K⁻¹ P^(−1/2) T^(−1/3),  η_g = c_g K T^(−1/6)
struct CorollaryConstants {
  double c_l = 1.0;
  double c_g = 0.25;
};

struct StepSizes {
  double eta_l = 0.0;
  double eta_g = 0.0;
  CorollaryConstants constants;
  int halvings = 0;
};

inline StepSizes corollary_stepsizes(int K, int P, std::int64_t T,
                                     CorollaryConstants c) {
  StepSizes s;
  s.constants = c;
  s.eta_l = c.c_l / (K * std::sqrt(static_cast<double>(P)) *
                     std::cbrt(static_cast<double>(T)));
  s.eta_g = c.c_g * K / std::pow(static_cast<double>(T), 1.0 / 6.0);
  return s;
}

// Halves c_ℓ while the η_ℓ-only conditions fail, then c_g while the server
// condition fails, at most 60 halvings in total.
inline StepSizes suggest_stepsizes(int K, int P, std::int64_t T, double L,
                                   std::int64_t tau_max, double delta_s,
                                   CorollaryConstants base = {}) {
  TheoremInputs in;
  in.K = K;
  in.P = P;
  in.T = T;
  in.L = L;
  in.tau_max = tau_max;
  in.delta_s = delta_s;
  in.validate();
  CorollaryConstants c = base;
  for (int h = 0; h <= 60; ++h) {
    const StepSizes s = corollary_stepsizes(K, P, T, c);
    in.eta_l = s.eta_l;
    in.eta_g = s.eta_g;
    const auto r = check_stepsize_conditions(in);
    if (r.all_pass()) {
      StepSizes out = s;
      out.halvings = h;
      return out;
    }
    if (!r.drift.pass || !r.local.pass)
      c.c_l *= 0.5;
    else
      c.c_g *= 0.5;
  }
  throw ConfigError("no feasible step sizes within 60 halvings");
}

}  // namespace qafel
