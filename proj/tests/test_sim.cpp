#include <gtest/gtest.h>

#include <cmath>

#include "qafel/dataset.hpp"
#include "qafel/sim.hpp"

using namespace qafel;

namespace {

struct World {
  Dataset data;
  Partition shards;
  std::unique_ptr<Problem> prob;
  double f_star = 0.0;

  explicit World(std::size_t clients = 20, std::uint64_t seed = 1) {
    SynthParams sp;
    sp.samples = 600;
    sp.features = 30;
    sp.groups = 6;
    PartitionParams pp;
    pp.n_clients = clients;
    auto r = synthesize(sp, pp, seed);
    data = std::move(r.data);
    shards = std::move(r.shards);
    prob = std::make_unique<Problem>(ObjectiveSpec{ObjectiveKind::kLogisticL2, 1e-3},
                                     data, shards);
    f_star = minimize_oracle(*prob, std::vector<double>(prob->dim(), 0.0)).f_star;
  }

  SimConfig config(std::int64_t T = 50) const {
    SimConfig c;
    c.T = T;
    c.seed = 3;
    c.f_star = f_star;
    c.arrival.pool_size = static_cast<int>(shards.size());
    c.protocol.K = 5;
    c.protocol.eta_l = 1.0;
    c.protocol.eta_g = 0.5;
    c.protocol.batch_size = 2;
    return c;
  }
};

}  // namespace

TEST(Delay, HalfNormalMeanAndConstant) {
  DelayModel m;
  m.scale = 2.0;
  Rng rng(1, StreamTag::kDelay);
  double s = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double v = sample_duration(m, rng);
    ASSERT_GE(v, 0.0);
    s += v;
  }
  EXPECT_NEAR(s / n, m.mean(), 0.02);
  EXPECT_NEAR(m.mean(), 2.0 * std::sqrt(2.0 / M_PI), 1e-15);
  DelayModel c{DelayKind::kConstant, 0.5};
  EXPECT_EQ(sample_duration(c, rng), 0.5);
  EXPECT_THROW((DelayModel{DelayKind::kConstant, 0.0}.validate()), ConfigError);
}

TEST(Arrival, ExactTimes) {
  ArrivalModel m;
  m.kind = ArrivalKind::kOpenArrival;
  m.arrival_rate = 125.0;
  EXPECT_EQ(arrival_time(m, 0), 0.0);
  EXPECT_EQ(arrival_time(m, 250), 2.0);
  EXPECT_EQ(next_arrival(m, 1.0), 1.008);
  EXPECT_EQ(parse_arrival_kind("open_arrival"), ArrivalKind::kOpenArrival);
  EXPECT_THROW(parse_arrival_kind("poisson"), ConfigError);
}

TEST(Simulation, RowsCountsAndBytes) {
  World w;
  auto c = w.config(40);
  c.protocol.server_quantizer = QuantizerSpec::qsgd(4);
  c.protocol.client_quantizer = QuantizerSpec::topk(0.1);
  const auto r = run_simulation(*w.prob, c);
  ASSERT_EQ(r.rows.size(), 40u);
  for (std::size_t i = 0; i < r.rows.size(); ++i) EXPECT_EQ(r.rows[i].t, std::int64_t(i));
  EXPECT_EQ(r.final_row.t, 40);
  EXPECT_EQ(r.uploads, 200u);
  EXPECT_EQ(r.broadcasts, 40u);
  const std::size_t d = w.prob->dim();
  EXPECT_EQ(r.upload_bytes,
            200u * ((encoded_size_bits(QuantizerSpec::topk(0.1), d) + 7) / 8));
  EXPECT_EQ(r.download_bytes,
            40u * 20u * ((encoded_size_bits(QuantizerSpec::qsgd(4), d) + 7) / 8));
  EXPECT_EQ(r.rows[0].uploads, 0u);
  EXPECT_EQ(r.rows[1].uploads, 5u);
  EXPECT_TRUE(r.hidden_state_consistent);
  EXPECT_DOUBLE_EQ(r.initial_f_minus_fstar, r.rows[0].f_minus_fstar);
  // Sim time is non-decreasing and the ergodic column is a running mean.
  double sum = 0.0;
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    if (i) {
      EXPECT_GE(r.rows[i].sim_time, r.rows[i - 1].sim_time);
    }
    sum += r.rows[i].grad_norm_sq;
    EXPECT_NEAR(r.rows[i].ergodic_grad_norm_sq, sum / double(i + 1), 1e-12 * sum);
  }
}

TEST(Simulation, MetricsCadence) {
  World w;
  auto c = w.config(30);
  c.metrics_every = 7;
  const auto r = run_simulation(*w.prob, c);
  std::vector<std::int64_t> ts;
  for (const auto& row : r.rows) ts.push_back(row.t);
  EXPECT_EQ(ts, (std::vector<std::int64_t>{0, 7, 14, 21, 28}));
  EXPECT_EQ(r.final_row.t, 30);
}

TEST(Simulation, ConvergesOnEasyProblem) {
  World w;
  auto c = w.config(300);
  c.protocol.batch_size = 0;
  const auto r = run_simulation(*w.prob, c);
  EXPECT_LT(r.final_row.f_minus_fstar, 0.05 * r.initial_f_minus_fstar);
}

TEST(Simulation, QafelCopiesStayConsistentUnderAggressiveQuantization) {
  World w;
  for (auto mode : {ProtocolMode::kQafel, ProtocolMode::kNaiveDirect}) {
    auto c = w.config(60);
    c.protocol.mode = mode;
    c.protocol.server_quantizer = QuantizerSpec::topk(0.05);
    const auto r = run_simulation(*w.prob, c);
    EXPECT_TRUE(r.hidden_state_consistent);
  }
}

TEST(Simulation, ScheduleIndependentOfProtocolSettings) {
  World w;
  auto base = w.config(40);
  base.record_trace = true;
  const auto ref = run_simulation(*w.prob, base);
  auto other = base;
  other.protocol.mode = ProtocolMode::kNaiveDirect;
  other.protocol.server_quantizer = QuantizerSpec::topk(0.5);
  other.protocol.client_quantizer = QuantizerSpec::qsgd(3);
  other.protocol.eta_l = 0.1;
  other.protocol.P = 4;
  other.observe = false;
  const auto r = run_simulation(*w.prob, other);
  EXPECT_EQ(r.event_digest, ref.event_digest);
  ASSERT_EQ(r.trace.size(), ref.trace.size());
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    EXPECT_EQ(r.trace[i].time, ref.trace[i].time);
    EXPECT_EQ(r.trace[i].client_id, ref.trace[i].client_id);
  }
  EXPECT_TRUE(r.rows.empty());
  auto seeded = base;
  seeded.seed = 4;
  EXPECT_NE(run_simulation(*w.prob, seeded).event_digest, ref.event_digest);
}

TEST(Simulation, StalenessIsVersionGap) {
  World w;
  auto c = w.config(50);
  c.protocol.K = 1;
  c.record_trace = true;
  c.observe = false;
  const auto r = run_simulation(*w.prob, c);
  std::int64_t mx = 0;
  for (const auto& u : r.trace) {
    EXPECT_GE(u.staleness, 0);
    // With K = 1 every upload is its own version: staleness <= uploads so far.
    EXPECT_LE(u.staleness, u.server_step);
    mx = std::max(mx, u.staleness);
  }
  EXPECT_EQ(mx, r.max_staleness);
  // With 20 concurrent clients and K = 1 somebody must be stale.
  EXPECT_GT(r.max_staleness, 0);
}

TEST(Simulation, BufferingDividesStaleness) {
  World w;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto c1 = w.config(400);
    c1.seed = seed;
    c1.observe = false;
    c1.protocol.K = 1;
    auto c10 = c1;
    c10.protocol.K = 10;
    c10.T = 40;
    const auto r1 = run_simulation(*w.prob, c1);
    const auto r10 = run_simulation(*w.prob, c10);
    const auto chk = staleness_trace_check(r1, r10, 10);
    EXPECT_TRUE(chk.holds) << chk.tau_max_k << " vs " << chk.bound;
    EXPECT_EQ(chk.bound, (r1.max_staleness + 9) / 10);
  }
}

TEST(Simulation, OpenArrivalWithCap) {
  World w;
  auto c = w.config(20);
  c.arrival.kind = ArrivalKind::kOpenArrival;
  c.arrival.arrival_rate = 50.0;
  c.arrival.concurrency_cap = 3;
  const auto r = run_simulation(*w.prob, c);
  EXPECT_GT(r.dropped_arrivals, 0u);
  EXPECT_EQ(r.uploads, 100u);
  EXPECT_TRUE(r.hidden_state_consistent);
  // Downloads count one copy per client.
  const auto per = (encoded_size_bits(QuantizerSpec::identity(), w.prob->dim()) + 7) / 8;
  EXPECT_EQ(r.download_bytes, 20u * 20u * per);

  auto open = c;
  open.arrival.concurrency_cap = 0;
  EXPECT_EQ(run_simulation(*w.prob, open).dropped_arrivals, 0u);
}

TEST(Simulation, SmallerPoolReassignsShards) {
  World w;
  auto c = w.config(30);
  c.arrival.pool_size = 4;
  c.protocol.K = 2;
  const auto r = run_simulation(*w.prob, c);
  EXPECT_EQ(r.uploads, 60u);
  EXPECT_TRUE(r.hidden_state_consistent);
}

TEST(Simulation, RejectsBadConfig) {
  World w;
  auto c = w.config();
  c.T = 0;
  EXPECT_THROW(run_simulation(*w.prob, c), ConfigError);
  c = w.config();
  EXPECT_THROW(run_simulation(*w.prob, c, ModelVector(3, 0.0f)), ConfigError);
}

TEST(StalenessCheck, Arithmetic) {
  SimResult a, b;
  a.max_staleness = 21;
  b.max_staleness = 3;
  auto r = staleness_trace_check(a, b, 10);
  EXPECT_EQ(r.bound, 3);
  EXPECT_TRUE(r.holds);
  b.max_staleness = 4;
  EXPECT_FALSE(staleness_trace_check(a, b, 10).holds);
  EXPECT_THROW(staleness_trace_check(a, b, 0), ConfigError);
}
