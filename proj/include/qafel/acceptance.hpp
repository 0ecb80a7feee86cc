#pragma once

// Acceptance suites. Each criterion yields one line with the measured value
// next to the required one; a suite passes when all of its lines pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "qafel/analysis.hpp"
#include "qafel/config.hpp"
#include "qafel/dataset.hpp"
#include "qafel/experiment.hpp"
#include "qafel/format.hpp"
#include "qafel/objectives.hpp"
#include "qafel/quantizers.hpp"
#include "qafel/sim.hpp"

namespace qafel {

struct CriterionResult {
  std::string id;
  std::string name;
  bool pass = false;
  std::string measured;
  std::string required;
};

struct SuiteReport {
  std::string suite;
  std::vector<CriterionResult> criteria;
  std::vector<std::string> notes;
  double seconds = 0.0;

  bool passed() const {
    return std::all_of(criteria.begin(), criteria.end(),
                       [](const auto& c) { return c.pass; });
  }
};

inline void print_criterion(std::ostream& os, const CriterionResult& c) {
  os << (c.pass ? "PASS " : "FAIL ") << c.id << " " << c.name
     << " | measured: " << c.measured << " | required: " << c.required << "\n";
}

inline void print_report(std::ostream& os, const SuiteReport& r) {
  os << "== suite " << r.suite << "\n";
  for (const auto& n : r.notes) os << "note: " << n << "\n";
  for (const auto& c : r.criteria) print_criterion(os, c);
  os << "== suite " << r.suite << ": " << (r.passed() ? "PASS" : "FAIL") << " ("
     << format_double(std::round(r.seconds * 10.0) / 10.0) << " s)\n";
}

namespace detail {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

inline std::string join(const std::vector<std::string>& parts,
                        const std::string& sep = ", ") {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline ModelVector gaussian_vector(std::size_t d, Rng& rng) {
  ModelVector x(d);
  for (auto& v : x) v = static_cast<Scalar>(rng.normal());
  return x;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Quantizers

struct QuantizerSuiteOptions {
  std::vector<int> qsgd_bits = {2, 3, 4, 8};
  std::vector<double> topk_fractions = {0.01, 0.5, 1.0};
  std::vector<std::size_t> dims = {16, 112, 1024};
  std::size_t contraction_trials = 10000;
  std::size_t unbiased_trials = 100000;
  std::size_t tuples = 1000;
  std::size_t roundtrip_trials = 200;
  std::uint64_t seed = 7;
};

inline std::vector<QuantizerSpec> suite_quantizers(const QuantizerSuiteOptions& o) {
  std::vector<QuantizerSpec> specs = {QuantizerSpec::identity()};
  for (int b : o.qsgd_bits) specs.push_back(QuantizerSpec::qsgd(b));
  for (double f : o.topk_fractions) specs.push_back(QuantizerSpec::topk(f));
  return specs;
}

inline SuiteReport verify_quantizers(const QuantizerSuiteOptions& o = {}) {
  detail::Stopwatch clock;
  SuiteReport rep;
  rep.suite = "quantizers";
  const auto specs = suite_quantizers(o);

  // 5a contraction and 5c sum bound
  {
    std::vector<std::string> fails, sum_fails;
    double worst_identity = 0.0;
    std::size_t cases = 0, sum_cases = 0;
    for (const auto& spec : specs) {
      for (std::size_t d : o.dims) {
        Rng rng(o.seed, StreamTag::kProbe, static_cast<std::uint64_t>(cases), d);
        const std::size_t trials = spec.kind == QuantizerKind::kQsgd
                                       ? o.contraction_trials
                                       : std::size_t{1000};
        const auto r = verify_contraction(spec, trials, d, rng, o.tuples, 5);
        ++cases;
        if (spec.kind == QuantizerKind::kIdentity)
          worst_identity = std::max(worst_identity, r.max_ratio);
        const std::string tag = spec.to_string() + "@d=" + std::to_string(d);
        if (!r.contraction_ok)
          fails.push_back(tag + " (ratio " + detail::fmt(r.max_ratio) + " vs 1-delta " +
                          (r.delta_valid ? detail::fmt(1.0 - r.delta) : "none") + ")");
        if (r.sum_bound_checked) {
          ++sum_cases;
          if (!r.sum_bound_ok)
            sum_fails.push_back(tag + (r.delta_valid ? " (excess " +
                                                           detail::fmt(r.sum_bound_mean_excess) + ")"
                                                     : " (no delta)"));
        }
      }
    }
    rep.criteria.push_back(
        {"5a", "contraction ratio <= 1 - delta", fails.empty(),
         std::to_string(cases - fails.size()) + "/" + std::to_string(cases) +
             " cases hold; identity ratio " + detail::fmt(worst_identity) +
             (fails.empty() ? "" : "; failing: " + detail::join(fails)),
         "all cases; topk every sample, qsgd mean within 4 s.e. over " +
             std::to_string(o.contraction_trials) + " trials"});
    rep.criteria.push_back(
        {"5c", "sum bound over random 5-tuples", sum_fails.empty(),
         std::to_string(sum_cases - sum_fails.size()) + "/" + std::to_string(sum_cases) +
             " unbiased cases hold" +
             (sum_fails.empty() ? "" : "; failing: " + detail::join(sum_fails)),
         "mean excess <= 4 s.e. over " + std::to_string(o.tuples) + " tuples"});
  }

  // 5b unbiasedness
  {
    std::vector<std::string> fails;
    double worst_z = 0.0;
    std::size_t cases = 0;
    for (int b : o.qsgd_bits) {
      for (std::size_t d : o.dims) {
        Rng rng(o.seed, StreamTag::kClientQuantizer, static_cast<std::uint64_t>(b), d);
        const auto x = detail::gaussian_vector(d, rng);
        const auto r =
            check_unbiasedness(QuantizerSpec::qsgd(b), x, o.unbiased_trials, rng);
        ++cases;
        worst_z = std::max(worst_z, r.max_abs_z);
        if (!r.passed)
          fails.push_back("qsgd:" + std::to_string(b) + "@d=" + std::to_string(d));
      }
    }
    rep.criteria.push_back(
        {"5b", "qsgd per-coordinate unbiasedness", fails.empty(),
         "max |z| " + detail::fmt(worst_z) + " over " + std::to_string(cases) +
             " cases" + (fails.empty() ? "" : "; failing: " + detail::join(fails)),
         "|z| <= 4 over " + std::to_string(o.unbiased_trials) + " trials"});
  }

  // 5d round trip and 5e sizes
  {
    std::size_t messages = 0, rt_fail = 0, size_fail = 0;
    for (const auto& spec : specs) {
      for (std::size_t d : o.dims) {
        Rng rng(o.seed, StreamTag::kServerQuantizer, messages, d);
        for (std::size_t t = 0; t < o.roundtrip_trials; ++t) {
          const auto x = detail::gaussian_vector(d, rng);
          const auto q = quantize(spec, x, rng);
          const auto wire = serialize(q.message);
          const auto back = deserialize(wire);
          const auto again = decode(back);
          ++messages;
          if (back.payload != q.message.payload || serialize(back) != wire ||
              !std::equal(again.begin(), again.end(), q.decoded.begin(),
                          [](Scalar a, Scalar b) {
                            return std::bit_cast<std::uint32_t>(a) ==
                                   std::bit_cast<std::uint32_t>(b);
                          }))
            ++rt_fail;
          if (q.message.encoded_size_bits != encoded_size_bits(spec, d) ||
              q.message.payload.size() != (encoded_size_bits(spec, d) + 7) / 8)
            ++size_fail;
        }
      }
    }
    rep.criteria.push_back({"5d", "encode/decode bit-exact round trip", rt_fail == 0,
                            std::to_string(messages - rt_fail) + "/" +
                                std::to_string(messages) + " messages identical",
                            "all messages"});
    rep.criteria.push_back(
        {"5e", "encoded sizes match closed forms", size_fail == 0,
         std::to_string(messages - size_fail) + "/" + std::to_string(messages) +
             " sizes exact",
         "identity 32d, qsgd 32+bd, topk k(ceil(log2 d)+32)"});
  }

  const double quantizer_seconds = clock.seconds();
  rep.criteria.push_back({"5f", "quantizer suite runtime", quantizer_seconds < 30.0,
                          detail::fmt(quantizer_seconds, 3) + " s", "< 30 s"});

  // 7 byte accounting
  {
    constexpr std::size_t d = 29282;
    Rng rng(o.seed, StreamTag::kDataSynthesis, d);
    const auto x = detail::gaussian_vector(d, rng);
    const double identity_bytes = static_cast<double>(
        encode(QuantizerSpec::identity(), x, rng).encoded_size_bytes());
    bool ok = true;
    std::vector<std::string> parts;
    for (int b : {2, 4, 8}) {
      const double bytes = static_cast<double>(
          encode(QuantizerSpec::qsgd(b), x, rng).encoded_size_bytes());
      const double ratio = identity_bytes / bytes;
      const double target = 32.0 / b;
      ok = ok && std::abs(ratio - target) <= 0.05 * target;
      parts.push_back("b=" + std::to_string(b) + ": " + detail::fmt(ratio, 5) +
                      " (" + format_double(bytes / 1000.0) + " kB/upload)");
    }
    rep.criteria.push_back({"7", "qsgd upload size ratio at d=29282", ok,
                            detail::join(parts), "32/b within 5%"});
  }
  rep.seconds = clock.seconds();
  return rep;
}

// ---------------------------------------------------------------------------
// Protocol

struct ProtocolSuiteOptions {
  std::uint64_t seed = 11;
  std::int64_t reduction_steps = 200;
  int staleness_traces = 10;
  std::int64_t staleness_steps = 200;  // at K = 10
};

// A small logistic problem for protocol-level checks.
inline RunConfig protocol_test_config(std::uint64_t seed) {
  RunConfig c;
  c.synth.samples = 2000;
  c.partition.n_clients = 100;
  c.protocol.batch_size = 4;
  c.T = 200;
  c.seed = seed;
  return c;
}

inline bool same_bits(const ModelVector& a, const ModelVector& b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](Scalar x, Scalar y) {
           return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
         });
}

inline SuiteReport verify_protocol(const ProtocolSuiteOptions& o = {}) {
  detail::Stopwatch clock;
  SuiteReport rep;
  rep.suite = "protocol";

  // 6 reduction to the unquantized protocol
  {
    RunConfig c = protocol_test_config(o.seed);
    c.T = o.reduction_steps;
    auto prep = prepare_problem(c);
    const auto& prob = *prep.problem;
    c.protocol.mode = ProtocolMode::kQafel;
    const auto q = run_simulation(prob, c.sim_config());
    c.protocol.mode = ProtocolMode::kUnquantized;
    const auto u = run_simulation(prob, c.sim_config());
    std::int64_t first_diff = -1;
    for (std::size_t i = 0; i < std::min(q.rows.size(), u.rows.size()); ++i) {
      if (std::bit_cast<std::uint64_t>(q.rows[i].f_minus_fstar) !=
          std::bit_cast<std::uint64_t>(u.rows[i].f_minus_fstar)) {
        first_diff = q.rows[i].t;
        break;
      }
    }
    const bool ok = first_diff < 0 && q.rows.size() == u.rows.size() &&
                    same_bits(q.x, u.x) && same_bits(q.x_hat, q.x) &&
                    q.hidden_state_consistent;
    rep.criteria.push_back(
        {"6", "qafel with identity quantizers equals unquantized", ok,
         ok ? "iterates bit-identical over " + std::to_string(o.reduction_steps) +
                  " steps"
            : "first difference at step " + std::to_string(first_diff),
         "bit-identical iterates over 200 steps"});
  }

  // 8 staleness under buffering
  {
    RunConfig c = protocol_test_config(o.seed);
    auto prep = prepare_problem(c);
    const auto& prob = *prep.problem;
    bool ok = true;
    std::vector<std::string> parts;
    for (int s = 0; s < o.staleness_traces; ++s) {
      SimConfig k1 = c.sim_config();
      k1.seed = o.seed + 1000 + static_cast<std::uint64_t>(s);
      k1.observe = false;
      SimConfig k10 = k1;
      k10.protocol.K = 10;
      k10.T = o.staleness_steps;
      k1.protocol.K = 1;
      k1.T = o.staleness_steps * 10;  // same number of uploads
      const auto r1 = run_simulation(prob, k1);
      const auto r10 = run_simulation(prob, k10);
      const auto chk = staleness_trace_check(r1, r10, 10);
      ok = ok && chk.holds && r1.event_digest == r10.event_digest;
      parts.push_back(std::to_string(chk.tau_max_k) + "<=" + std::to_string(chk.bound));
    }
    rep.criteria.push_back({"8", "max staleness at K=10 vs K=1", ok,
                            "tau_max(K=10) <= ceil(tau_max(K=1)/10): " +
                                detail::join(parts, " "),
                            "holds on all " + std::to_string(o.staleness_traces) +
                                " matched traces"});
  }

  // 10 determinism and stream splitting
  {
    RunConfig c = protocol_test_config(o.seed);
    c.protocol.server_quantizer = QuantizerSpec::qsgd(4);
    c.protocol.client_quantizer = QuantizerSpec::topk(0.5);
    c.T = 100;
    auto prep = prepare_problem(c);
    const auto& prob = *prep.problem;
    const auto a = run_simulation(prob, c.sim_config());
    auto prep2 = prepare_problem(c);
    const auto b = run_simulation(*prep2.problem, c.sim_config());
    const bool same_csv = metrics_csv(a.rows) == metrics_csv(b.rows);

    bool same_schedule = true;
    std::size_t variants = 0;
    const std::vector<std::pair<ProtocolMode, std::string>> others = {
        {ProtocolMode::kQafel, "topk:0.01"},
        {ProtocolMode::kQafel, "identity"},
        {ProtocolMode::kNaiveDirect, "topk:0.5"},
        {ProtocolMode::kUnquantized, "identity"}};
    SimConfig base = c.sim_config();
    base.record_trace = true;
    const auto ref = run_simulation(prob, base);
    for (const auto& [mode, sq] : others) {
      SimConfig v = base;
      v.protocol.mode = mode;
      v.protocol.server_quantizer = QuantizerSpec::parse(sq);
      v.protocol.client_quantizer = QuantizerSpec::qsgd(2);
      const auto r = run_simulation(prob, v);
      ++variants;
      bool same = r.event_digest == ref.event_digest && r.trace.size() == ref.trace.size();
      for (std::size_t i = 0; same && i < r.trace.size(); ++i)
        same = r.trace[i].time == ref.trace[i].time &&
               r.trace[i].client_id == ref.trace[i].client_id &&
               r.trace[i].staleness == ref.trace[i].staleness;
      same_schedule = same_schedule && same;
    }
    rep.criteria.push_back(
        {"10", "determinism and schedule independence", same_csv && same_schedule,
         std::string(same_csv ? "repeat CSV byte-identical" : "repeat CSV differs") +
             "; " + std::to_string(variants) + " quantizer/mode variants " +
             (same_schedule ? "share the event sequence" : "change the event sequence"),
         "identical CSV on repeat; identical events when only the quantizer changes"});
  }
  rep.seconds = clock.seconds();
  return rep;
}

// ---------------------------------------------------------------------------
// Theorem

struct HandSlackCase {
  TheoremInputs in;
  double server_slack;
  double drift_slack;  // infinity when tau = 0
  double local_slack;
};

// Slacks worked out by hand in exact arithmetic (rhs − lhs of each condition).
inline std::vector<HandSlackCase> hand_slack_cases() {
  auto mk = [](double L, int K, int P, std::int64_t tau, double eg, double el,
               double ds) {
    TheoremInputs in;
    in.L = L;
    in.K = K;
    in.P = P;
    in.tau_max = tau;
    in.eta_g = eg;
    in.eta_l = el;
    in.delta_s = ds;
    in.T = 1000;
    return in;
  };
  const double inf = std::numeric_limits<double>::infinity();
  return {
      // 1/1 − [0.01·(0 + 8) + 1·0.01·0.1·1] = 1 − 0.081
      {mk(1.0, 1, 1, 0, 0.1, 0.01, 1.0), 0.919, inf, 0.115},
      // 1/2 − [0.0025·(4 + 32) + (1 + 0.5/4)·0.005·0.05·2] = 0.5 − 0.0905625
      // drift: 1/(80·4·4·2) − 0.005² = 1/2560 − 0.000025
      // local: 1/(4·2·3) − 0.005 = 1/24 − 0.005
      {mk(2.0, 4, 2, 2, 0.05, 0.005, 0.5), 0.4094375, 1.0 / 2560.0 - 0.000025,
       1.0 / 24.0 - 0.005},
      // 1/4 − [1·(9 + 8) + 1·0.1·1·0.5] = 0.25 − 17.05
      // drift: 1/(80·0.25·16·3) − 0.01 = 1/960 − 0.01
      // local: 1/(4·0.5·5) − 0.1 = 0.1 − 0.1
      {mk(0.5, 10, 4, 3, 1.0, 0.1, 1.0), -16.8, 1.0 / 960.0 - 0.01, 0.0},
      // 1/1 − [0.04·(100 + 8/0.01) + (1 + 0.9/10)·0.01·0.2·10]
      //   = 1 − (36 + 0.0218)
      // drift: 1/(80·100·1·10) − 0.0001 = 1/80000 − 0.0001
      // local: 1/(4·10·2) − 0.01 = 0.0125 − 0.01
      {mk(10.0, 10, 1, 10, 0.2, 0.01, 0.1), -35.0218, 1.0 / 80000.0 - 0.0001,
       0.0025},
      // 1/8 − [1e-6·(25 + 8/0.64) + (1 + 0.2/5)·1e-3·1e-3·3]
      //   = 0.125 − (3.75e-5 + 3.12e-6)
      // drift: 1/(80·9·64·5) − 1e-6 = 1/230400 − 1e-6
      // local: 1/(4·3·9) − 1e-3 = 1/108 − 1e-3
      {mk(3.0, 5, 8, 5, 1e-3, 1e-3, 0.8), 0.125 - 3.75e-5 - 3.12e-6,
       1.0 / 230400.0 - 1e-6, 1.0 / 108.0 - 1e-3},
  };
}

struct TheoremSuiteOptions {
  int testbed_seeds = 20;
  std::int64_t testbed_T = 300;
  std::uint64_t seed = 5;
};

inline double slack_error(double got, double want) {
  if (std::isinf(want)) return std::isinf(got) && (got > 0) == (want > 0) ? 0.0 : 1.0;
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

// Quadratic testbed: every constant is exact, so the bound is evaluated with
// no estimation slack.
inline RunConfig quadratic_testbed_config(std::uint64_t seed) {
  RunConfig c;
  c.objective = {ObjectiveKind::kQuadratic, 0.0};
  c.synth.kind = SynthKind::kQuadratic;
  c.synth.samples = 400;
  c.synth.features = 10;
  c.synth.center_scale = 1.0;
  c.synth.sample_scale = 1.0;
  c.partition.n_clients = 20;
  c.protocol.K = 5;
  c.protocol.P = 2;
  c.protocol.batch_size = 1;
  c.protocol.mode = ProtocolMode::kQafel;
  c.protocol.server_quantizer = QuantizerSpec::topk(0.5);
  c.protocol.client_quantizer = QuantizerSpec::qsgd(4);
  c.arrival.pool_size = 20;
  c.seed = seed;
  return c;
}

inline SuiteReport verify_theorem(const TheoremSuiteOptions& o = {}) {
  detail::Stopwatch clock;
  SuiteReport rep;
  rep.suite = "theorem";

  // 9a hand-computed slack
  {
    double worst = 0.0;
    std::size_t verdicts = 0;
    const auto cases = hand_slack_cases();
    for (const auto& hc : cases) {
      const auto r = check_stepsize_conditions(hc.in);
      worst = std::max({worst, slack_error(r.server.slack, hc.server_slack),
                        slack_error(r.drift.slack, hc.drift_slack),
                        slack_error(r.local.slack, hc.local_slack)});
      if (r.server.pass == (hc.server_slack >= 0) &&
          r.drift.pass == (hc.drift_slack >= 0) && r.local.pass == (hc.local_slack >= 0))
        ++verdicts;
    }
    const bool ok = worst <= 1e-12 && verdicts == cases.size();
    rep.criteria.push_back({"9a", "step-size validator vs hand-computed slack", ok,
                            "max relative slack error " + detail::fmt(worst, 3) + ", " +
                                std::to_string(verdicts) + "/" +
                                std::to_string(cases.size()) + " verdicts agree",
                            "error <= 1e-12 on all 5 input sets"});
  }

  // 9b log-log slopes at corollary step sizes, constants frozen at T = 1e3
  {
    const int K = 10, P = 4;
    const double L = 2.0;
    const std::int64_t tau = 5;
    const auto base = suggest_stepsizes(K, P, 1000, L, tau, 0.5);
    std::vector<double> logT, main, het, stale;
    for (std::int64_t T : {1000, 10000, 100000, 1000000, 10000000}) {
      const auto s = corollary_stepsizes(K, P, T, base.constants);
      TheoremInputs in;
      in.L = L;
      in.sigma_sq = 1.0;
      in.B = 1.0;
      in.F = 1.0;
      in.T = T;
      in.K = K;
      in.P = P;
      in.tau_max = tau;
      in.eta_g = s.eta_g;
      in.eta_l = s.eta_l;
      in.delta_c = 0.5;
      in.delta_s = 0.5;
      const auto b = evaluate_bound(in);
      logT.push_back(std::log(static_cast<double>(T)));
      main.push_back(std::log(b.descent));
      het.push_back(std::log(b.drift));
      stale.push_back(std::log(b.server_stale));
    }
    const double sm = detail::fit_slope(logT, main);
    const double sh = detail::fit_slope(logT, het);
    const double ss = detail::fit_slope(logT, stale);
    const bool ok = std::abs(sm + 0.5) <= 0.05 && std::abs(sh + 2.0 / 3.0) <= 0.05 &&
                    std::abs(ss + 1.0) <= 0.05;
    rep.criteria.push_back({"9b", "bound-term slopes in T", ok,
                            "main " + detail::fmt(sm) + ", heterogeneity " +
                                detail::fmt(sh) + ", staleness " + detail::fmt(ss),
                            "-1/2, -2/3, -1 within 0.05"});
  }

  // 9c quadratic testbed
  {
    double sum_grad = 0.0, sum_bound = 0.0;
    bool all_feasible = true;
    std::int64_t tau_seen = 0;
    for (int s = 0; s < o.testbed_seeds; ++s) {
      RunConfig c = quadratic_testbed_config(o.seed + static_cast<std::uint64_t>(s));
      c.T = o.testbed_T;
      auto prep = prepare_problem(c);
      const auto& prob = *prep.problem;
      Rng probe(c.seed, StreamTag::kProbe);
      const auto k = estimate_constants(prob, 2, probe);
      // The schedule does not depend on step sizes, so tau is known before
      // the step sizes are chosen.
      SimConfig sched = c.sim_config(k.f_star);
      sched.observe = false;
      const auto tau = run_simulation(prob, sched).max_staleness;
      tau_seen = std::max(tau_seen, tau);
      const std::size_t d = prob.dim();
      const double dc = effective_delta(c.protocol.client_quantizer, d).value;
      const double ds = effective_delta(c.protocol.server_quantizer, d).value;
      const auto steps =
          suggest_stepsizes(c.protocol.K, c.protocol.P, c.T, k.L, tau, ds);
      c.protocol.eta_l = steps.eta_l;
      c.protocol.eta_g = steps.eta_g;
      const auto run = run_simulation(prob, c.sim_config(k.f_star));
      TheoremInputs in;
      in.L = k.L;
      in.sigma_sq = k.sigma_sq(c.protocol.batch_size);
      in.B = k.B_max;
      in.F = run.initial_f_minus_fstar;
      in.T = c.T;
      in.K = c.protocol.K;
      in.P = c.protocol.P;
      in.tau_max = run.max_staleness;
      in.eta_g = steps.eta_g;
      in.eta_l = steps.eta_l;
      in.delta_c = dc;
      in.delta_s = ds;
      const auto b = evaluate_bound(in);
      all_feasible = all_feasible && b.conditions_pass;
      sum_grad += run.rows.back().ergodic_grad_norm_sq;
      sum_bound += b.total;
    }
    const double n = o.testbed_seeds;
    const double g = sum_grad / n, bound = sum_bound / n;
    const bool ok = all_feasible && g <= 1.2 * bound;
    rep.criteria.push_back(
        {"9c", "quadratic testbed ergodic gradient vs bound", ok,
         "mean ergodic |grad f|^2 " + detail::fmt(g) + ", mean bound " +
             detail::fmt(bound) + " (ratio " + detail::fmt(g / bound, 3) +
             ", tau_max " + std::to_string(tau_seen) + ", " +
             std::to_string(o.testbed_seeds) + " seeds" +
             (all_feasible ? "" : ", step-size conditions violated") + ")",
         "<= 1.2 x bound over >= 20 seeds"});
  }
  rep.seconds = clock.seconds();
  return rep;
}

// ---------------------------------------------------------------------------
// Figures

struct FigureSuiteOptions {
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::int64_t T = 8000;
  std::int64_t local_steps_T = 4000;
  std::string dataset_dir;
  // Progress lines while the long runs execute.
  std::function<void(const std::string&)> progress;
};

// Shared configuration of the logistic figure experiments: 100 clients,
// half-normal delays, K = 10, eta_l = 2, eta_g = 0.1, lambda = 1/8124.
inline RunConfig figure_config(std::uint64_t seed, std::int64_t T) {
  RunConfig c;
  c.objective = {ObjectiveKind::kLogisticL2, 1.0 / 8124.0};
  c.data_source = DataSource::kLibsvmFile;
  c.data_path = "mushrooms";
  c.data_fallback = true;
  c.partition.n_clients = 100;
  c.protocol.K = 10;
  c.protocol.P = 1;
  c.protocol.eta_l = 2.0;
  c.protocol.eta_g = 0.1;
  c.protocol.batch_size = 0;
  c.arrival.pool_size = 100;
  c.T = T;
  c.seed = seed;
  return c;
}

struct Trajectory {
  std::vector<double> t;
  std::vector<double> gap;
  double initial = 0.0;
  double final = 0.0;
  double seconds = 0.0;

  std::int64_t steps_to(double fraction) const {
    for (std::size_t i = 0; i < gap.size(); ++i)
      if (gap[i] <= fraction * initial) return static_cast<std::int64_t>(t[i]);
    return final <= fraction * initial ? static_cast<std::int64_t>(gap.size()) : -1;
  }
  // Mean over the last 10% of steps.
  double plateau() const {
    const std::size_t n = std::max<std::size_t>(1, gap.size() / 10);
    double s = 0.0;
    for (std::size_t i = gap.size() - n; i < gap.size(); ++i) s += gap[i];
    return s / static_cast<double>(n);
  }
  // Slope of log(gap) against t over the last half.
  double tail_slope() const {
    std::vector<double> x, y;
    for (std::size_t i = gap.size() / 2; i < gap.size(); ++i) {
      x.push_back(t[i]);
      y.push_back(std::log(std::max(gap[i], 1e-300)));
    }
    return detail::fit_slope(x, y);
  }
};

inline Trajectory trajectory(const SimResult& r, double seconds) {
  Trajectory tr;
  for (const auto& row : r.rows) {
    tr.t.push_back(static_cast<double>(row.t));
    tr.gap.push_back(row.f_minus_fstar);
  }
  tr.initial = r.initial_f_minus_fstar;
  tr.final = r.final_row.f_minus_fstar;
  tr.seconds = seconds;
  return tr;
}

inline SuiteReport verify_figures(const FigureSuiteOptions& o = {}) {
  detail::Stopwatch clock;
  SuiteReport rep;
  rep.suite = "figures";
  auto say = [&](const std::string& s) {
    if (o.progress) o.progress(s);
  };

  std::vector<double> naive_ratio, unq_ratio;
  std::vector<std::string> c1, c2, c3, c4;
  bool ok2 = true, ok3 = true, ok4 = true, unq_ok = true;
  double slowest = 0.0;
  for (auto seed : o.seeds) {
    RunConfig base = figure_config(seed, o.T);
    auto prep = prepare_problem(base, o.dataset_dir);
    if (seed == o.seeds.front())
      for (const auto& n : prep.notes) rep.notes.push_back(n);
    const auto& prob = *prep.problem;
    const double f_star = OracleCache::instance().get(prob).f_star;

    auto run = [&](RunConfig c, const std::string& label) {
      detail::Stopwatch w;
      const auto r = run_simulation(prob, c.sim_config(f_star));
      const auto tr = trajectory(r, w.seconds());
      slowest = std::max(slowest, tr.seconds);
      say("seed " + std::to_string(seed) + " " + label + ": final/initial " +
          detail::fmt(tr.final / tr.initial) + " (" + detail::fmt(tr.seconds, 3) + " s)");
      return tr;
    };

    RunConfig uc = base;
    uc.protocol.mode = ProtocolMode::kUnquantized;
    const auto unq = run(uc, "unquantized");

    RunConfig nc = base;
    nc.protocol.mode = ProtocolMode::kNaiveDirect;
    nc.protocol.server_quantizer = QuantizerSpec::topk(0.5);
    const auto naive = run(nc, "naive top-50%");
    naive_ratio.push_back(naive.final / naive.initial);
    unq_ratio.push_back(unq.final / unq.initial);
    unq_ok = unq_ok && unq.final < 1e-3 * unq.initial;
    c1.push_back(detail::fmt(naive.final / naive.initial, 3));

    RunConfig qc = base;
    qc.protocol.mode = ProtocolMode::kQafel;
    qc.protocol.server_quantizer = QuantizerSpec::topk(0.01);
    const auto top1 = run(qc, "qafel top-1%");
    const double ratio = top1.final / unq.final;
    const double slope = top1.tail_slope();
    ok2 = ok2 && ratio <= 10.0 && slope < 0.0;
    c2.push_back("ratio " + detail::fmt(ratio, 3) + " slope " + detail::fmt(slope, 3));

    qc.protocol.server_quantizer = QuantizerSpec::qsgd(3);
    const auto q3 = run(qc, "qafel qsgd-3");
    const auto sq = q3.steps_to(1e-2), su = unq.steps_to(1e-2);
    const bool within = sq > 0 && su > 0 &&
                        std::max(sq, su) <= 2 * std::min(sq, su);
    ok3 = ok3 && within;
    c3.push_back(std::to_string(sq) + " vs " + std::to_string(su));

    std::vector<std::int64_t> half;
    std::vector<double> plateau;
    for (int P : {1, 4, 16}) {
      RunConfig pc = base;
      pc.T = o.local_steps_T;
      pc.protocol.mode = ProtocolMode::kUnquantized;
      pc.protocol.P = P;
      const auto tr = run(pc, "unquantized P=" + std::to_string(P));
      half.push_back(tr.steps_to(0.5));
      plateau.push_back(tr.plateau());
    }
    const bool mono = half[0] > half[1] && half[1] > half[2] && half[2] > 0 &&
                      plateau[0] < plateau[1] && plateau[1] < plateau[2];
    ok4 = ok4 && mono;
    c4.push_back("half " + std::to_string(half[0]) + "/" + std::to_string(half[1]) +
                 "/" + std::to_string(half[2]) + " plateau " + detail::fmt(plateau[0], 3) +
                 "/" + detail::fmt(plateau[1], 3) + "/" + detail::fmt(plateau[2], 3));
  }

  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double med = median(naive_ratio);
  std::vector<std::string> u;
  for (double r : unq_ratio) u.push_back(detail::fmt(r, 3));
  rep.criteria.push_back(
      {"1", "naive top-50% diverges, unquantized converges",
       med > 1.0 && unq_ok && slowest < 60.0,
       "naive final/initial " + detail::join(c1, " ") + " (median " +
           detail::fmt(med, 3) + "); unquantized final/initial " + detail::join(u, " ") +
           "; slowest run " + detail::fmt(slowest, 3) + " s",
       "median > 1; unquantized < 1e-3; < 60 s per run"});
  rep.criteria.push_back({"2", "qafel top-1% tracks unquantized", ok2,
                          detail::join(c2, "; "),
                          "final within 10x of unquantized and tail slope < 0, every seed"});
  rep.criteria.push_back({"3", "qafel qsgd-3 steps to 1e-2 vs unquantized", ok3,
                          detail::join(c3, "; "), "within a factor of 2, every seed"});
  rep.criteria.push_back(
      {"4", "local steps P=1/4/16", ok4, detail::join(c4, "; "),
       "steps to half strictly decreasing and plateau strictly increasing, every seed"});
  rep.seconds = clock.seconds();
  return rep;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"quantizers", "protocol", "theorem",
                                                 "figures"};
  return names;
}

inline SuiteReport run_suite(const std::string& name, const FigureSuiteOptions& fig = {}) {
  if (name == "quantizers") return verify_quantizers();
  if (name == "protocol") return verify_protocol();
  if (name == "theorem") return verify_theorem();
  if (name == "figures") return verify_figures(fig);
  throw ConfigError("unknown suite '" + name + "' (quantizers, protocol, theorem, figures)");
}

}  // namespace qafel
