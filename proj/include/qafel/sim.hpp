#pragma once

// Discrete-event simulation of asynchronous buffered training.
//
// Random streams (see random.hpp) are keyed so the schedule never depends on
// the protocol:
//   duration of run r of pool slot i      (kDelay, i, r)
//   duration of open arrival k            (kDelay, k, 0)
//   shard of arrival k / run r of slot i  (kAssignment, k or i, r)
//   minibatches of a run                  (kMinibatch, i or k, r)
//   client quantizer of a run             (kClientQuantizer, i or k, r)
//   server quantizer                      (kServerQuantizer)
// Event times and processing order are therefore identical across modes,
// quantizers, K, P and step sizes for the same seed and arrival model.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "qafel/core.hpp"
#include "qafel/objectives.hpp"
#include "qafel/protocol.hpp"
#include "qafel/random.hpp"

namespace qafel {

enum class DelayKind { kHalfNormal, kConstant };

struct DelayModel {
  DelayKind kind = DelayKind::kHalfNormal;
  double scale = 1.0;

  void validate() const {
    if (!(scale > 0.0) || !std::isfinite(scale))
      throw ConfigError("delay scale must be positive");
  }
  double mean() const {
    return kind == DelayKind::kConstant
               ? scale
               : scale * std::sqrt(2.0 / std::numbers::pi);
  }
};

inline std::string to_string(DelayKind k) {
  return k == DelayKind::kConstant ? "constant" : "half_normal";
}

inline DelayKind parse_delay_kind(const std::string& s) {
  if (s == "half_normal") return DelayKind::kHalfNormal;
  if (s == "constant") return DelayKind::kConstant;
  throw ConfigError("unknown delay kind '" + s + "'");
}

inline double sample_duration(const DelayModel& m, Rng& rng) {
  if (m.kind == DelayKind::kConstant) return m.scale;
  return m.scale * std::abs(rng.normal());
}

enum class ArrivalKind { kFixedPool, kOpenArrival };

inline std::string to_string(ArrivalKind k) {
  return k == ArrivalKind::kFixedPool ? "fixed_pool" : "open_arrival";
}

inline ArrivalKind parse_arrival_kind(const std::string& s) {
  if (s == "fixed_pool") return ArrivalKind::kFixedPool;
  if (s == "open_arrival") return ArrivalKind::kOpenArrival;
  throw ConfigError("unknown arrival kind '" + s + "'");
}

struct ArrivalModel {
  ArrivalKind kind = ArrivalKind::kFixedPool;
  int pool_size = 100;
  double arrival_rate = 125.0;
  int concurrency_cap = 0;  // 0 = unlimited

  void validate() const {
    if (kind == ArrivalKind::kFixedPool && pool_size < 1)
      throw ConfigError("pool_size must be >= 1");
    if (kind == ArrivalKind::kOpenArrival &&
        (!(arrival_rate > 0.0) || !std::isfinite(arrival_rate)))
      throw ConfigError("arrival_rate must be positive");
    if (concurrency_cap < 0) throw ConfigError("concurrency_cap must be >= 0");
  }
};

// Arrival k of a constant-rate stream happens at exactly k / rate.
inline double arrival_time(const ArrivalModel& m, std::uint64_t k) {
  return static_cast<double>(k) / m.arrival_rate;
}

inline double next_arrival(const ArrivalModel& m, double now) {
  return now + 1.0 / m.arrival_rate;
}

enum class EventKind : std::uint8_t { kClientDone = 0, kClientArrival = 1 };

struct SimEvent {
  double time = 0.0;
  EventKind kind = EventKind::kClientDone;
  int client_id = 0;
  std::uint64_t seq = 0;

  // Min-heap order on (time, seq).
  friend bool operator>(const SimEvent& a, const SimEvent& b) {
    return a.time != b.time ? a.time > b.time : a.seq > b.seq;
  }
};

struct MetricsRow {
  std::int64_t t = 0;
  double sim_time = 0.0;
  double f_minus_fstar = 0.0;
  double grad_norm_sq = 0.0;
  double ergodic_grad_norm_sq = 0.0;
  std::uint64_t uploads = 0;
  std::uint64_t upload_bytes = 0;
  std::uint64_t download_bytes = 0;
  std::int64_t max_staleness = 0;
};

struct AppliedUpdate {
  double time = 0.0;
  int client_id = 0;
  std::int64_t staleness = 0;
  std::int64_t server_step = 0;
};

struct SimConfig {
  ProtocolConfig protocol;
  ArrivalModel arrival;
  DelayModel delay;
  std::int64_t T = 100;
  std::uint64_t seed = 0;
  int metrics_every = 1;
  double f_star = 0.0;
  bool record_trace = false;
  // Metrics are skipped entirely when false (schedule-only runs).
  bool observe = true;

  void validate() const {
    protocol.validate();
    arrival.validate();
    delay.validate();
    if (T < 1) throw ConfigError("T must be >= 1");
    if (metrics_every < 1) throw ConfigError("metrics_every must be >= 1");
  }
};

struct SimResult {
  // Row t describes x^t, t = 0 .. T−1 (every metrics_every-th step).
  std::vector<MetricsRow> rows;
  // The model after the last step, x^T.
  MetricsRow final_row;
  double initial_f_minus_fstar = 0.0;
  std::uint64_t uploads = 0;
  std::uint64_t upload_bytes = 0;
  std::uint64_t download_bytes = 0;
  std::uint64_t broadcasts = 0;
  std::uint64_t dropped_arrivals = 0;
  std::int64_t max_staleness = 0;
  std::vector<AppliedUpdate> trace;
  std::uint64_t event_digest = 0;
  bool hidden_state_consistent = true;
  ModelVector x;
  ModelVector x_hat;
};

namespace detail {

class Digest {
 public:
  void add(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= b[i];
      h_ *= 1099511628211ull;
    }
  }
  template <typename T>
  void add(const T& v) {
    add(&v, sizeof v);
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 1469598103934665603ull;
};

// A client-side copy of whatever the server broadcasts, brought up to date
// lazily right before it is read.
struct LocalCopy {
  ModelVector model;
  std::size_t applied = 0;
};

class Simulation {
 public:
  Simulation(const Problem& prob, const SimConfig& cfg, ModelVector x0)
      : prob_(prob), cfg_(cfg), server_(ServerState::initial(x0)),
        server_quant_(cfg.seed, StreamTag::kServerQuantizer) {
    cfg_.validate();
    if (x0.size() != prob.dim()) throw ConfigError("x0 dimension mismatch");
    const std::size_t copies = cfg.arrival.kind == ArrivalKind::kFixedPool
                                   ? static_cast<std::size_t>(cfg.arrival.pool_size)
                                   : prob.n_clients();
    copies_.assign(copies, LocalCopy{x0, 0});
    if (cfg.arrival.kind == ArrivalKind::kFixedPool) {
      slot_runs_.assign(copies, 0);
      slot_run_.resize(copies);
    }
  }

  SimResult run() {
    const auto& arr = cfg_.arrival;
    if (arr.kind == ArrivalKind::kFixedPool) {
      for (int i = 0; i < arr.pool_size; ++i) start_pool_run(i, 0.0);
    } else {
      push({arrival_time(arr, 0), EventKind::kClientArrival, 0, 0});
    }
    observe(0.0);
    while (server_.t < cfg_.T) {
      if (queue_.empty()) throw Error("simulation stalled: no pending events");
      const SimEvent ev = queue_.top();
      queue_.pop();
      digest_.add(ev.time);
      digest_.add(ev.kind);
      digest_.add(ev.client_id);
      if (ev.kind == EventKind::kClientArrival)
        on_arrival(ev);
      else
        on_done(ev);
    }
    finish();
    return std::move(result_);
  }

 private:
  void push(SimEvent ev) {
    ev.seq = next_seq_++;
    queue_.push(ev);
  }

  const ModelVector& refresh(std::size_t copy) {
    auto& c = copies_[copy];
    const auto mode = cfg_.protocol.mode;
    if (mode == ProtocolMode::kQafel) {
      for (; c.applied < log_.size(); ++c.applied)
        client_background_apply(c.model, log_[c.applied], mode);
    } else if (c.applied < log_.size()) {
      client_background_apply(c.model, log_.back(), mode);
      c.applied = log_.size();
    }
    return c.model;
  }

  void start_pool_run(int slot, double now) {
    const auto r = slot_runs_[slot]++;
    std::size_t shard = static_cast<std::size_t>(slot);
    if (copies_.size() != prob_.n_clients()) {
      Rng pick(cfg_.seed, StreamTag::kAssignment, slot, r);
      shard = pick.index(prob_.n_clients());
    }
    slot_run_[slot] = ClientTrainingRun::start(slot, shard, server_.t,
                                               refresh(slot));
    Rng delay(cfg_.seed, StreamTag::kDelay, slot, r);
    push({now + sample_duration(cfg_.delay, delay), EventKind::kClientDone, slot, 0});
  }

  void on_arrival(const SimEvent& ev) {
    const auto k = static_cast<std::uint64_t>(ev.client_id);
    const auto& arr = cfg_.arrival;
    push({arrival_time(arr, k + 1), EventKind::kClientArrival,
          static_cast<int>(k + 1), 0});
    if (arr.concurrency_cap > 0 &&
        active_.size() >= static_cast<std::size_t>(arr.concurrency_cap)) {
      ++result_.dropped_arrivals;
      return;
    }
    Rng pick(cfg_.seed, StreamTag::kAssignment, k, 0);
    const std::size_t shard = pick.index(prob_.n_clients());
    active_.push_back(ClientTrainingRun::start(static_cast<int>(k), shard,
                                               server_.t, refresh(shard)));
    Rng delay(cfg_.seed, StreamTag::kDelay, k, 0);
    push({ev.time + sample_duration(cfg_.delay, delay), EventKind::kClientDone,
          static_cast<int>(k), 0});
  }

  void on_done(const SimEvent& ev) {
    const bool pool = cfg_.arrival.kind == ArrivalKind::kFixedPool;
    ClientTrainingRun run;
    std::uint64_t stream_a, stream_b;
    if (pool) {
      run = std::move(slot_run_[ev.client_id]);
      stream_a = static_cast<std::uint64_t>(ev.client_id);
      stream_b = slot_runs_[ev.client_id] - 1;
    } else {
      auto it = std::find_if(active_.begin(), active_.end(), [&](const auto& r) {
        return r.client_id == ev.client_id;
      });
      run = std::move(*it);
      active_.erase(it);
      stream_a = static_cast<std::uint64_t>(ev.client_id);
      stream_b = 0;
    }
    Rng minibatch(cfg_.seed, StreamTag::kMinibatch, stream_a, stream_b);
    Rng cquant(cfg_.seed, StreamTag::kClientQuantizer, stream_a, stream_b);
    const auto msg = client_train(run, prob_, cfg_.protocol, minibatch, cquant);
    const std::int64_t tau = server_.t - run.base_version;
    server_receive(server_, msg, tau, run.client_id, cfg_.protocol);
    ++result_.uploads;
    result_.upload_bytes += msg.encoded_size_bytes();
    result_.max_staleness = std::max(result_.max_staleness, tau);
    if (cfg_.record_trace)
      result_.trace.push_back({ev.time, run.client_id, tau, server_.t});
    if (server_.k_filled() == static_cast<std::size_t>(cfg_.protocol.K)) {
      auto b = server_global_update(server_, cfg_.protocol, server_quant_);
      ++result_.broadcasts;
      result_.download_bytes +=
          copies_.size() * b.message.encoded_size_bytes();
      log_.push_back(std::move(b.decoded));
      observe(ev.time);
    }
    if (pool) start_pool_run(ev.client_id, ev.time);
  }

  void observe(double now) {
    const auto t = server_.t;
    if (!cfg_.observe) return;
    if (t < cfg_.T && t % cfg_.metrics_every != 0) return;
    MetricsRow row;
    row.t = t;
    row.sim_time = now;
    const std::span<const Scalar> x(server_.x);
    row.f_minus_fstar = prob_.global_loss_and_gradient(x, grad_) - cfg_.f_star;
    row.grad_norm_sq = norm_sq(grad_);
    row.uploads = result_.uploads;
    row.upload_bytes = result_.upload_bytes;
    row.download_bytes = result_.download_bytes;
    row.max_staleness = result_.max_staleness;
    if (t == 0) result_.initial_f_minus_fstar = row.f_minus_fstar;
    if (t < cfg_.T) {
      grad_sum_ += row.grad_norm_sq;
      row.ergodic_grad_norm_sq =
          grad_sum_ / static_cast<double>(result_.rows.size() + 1);
      result_.rows.push_back(row);
    } else {
      row.ergodic_grad_norm_sq =
          result_.rows.empty() ? row.grad_norm_sq
                               : result_.rows.back().ergodic_grad_norm_sq;
      result_.final_row = row;
    }
  }

  void finish() {
    for (std::size_t c = 0; c < copies_.size(); ++c) {
      const auto& m = refresh(c);
      if (!std::equal(m.begin(), m.end(), server_.x_hat.begin(),
                      [](Scalar a, Scalar b) {
                        return std::bit_cast<std::uint32_t>(a) ==
                               std::bit_cast<std::uint32_t>(b);
                      }))
        result_.hidden_state_consistent = false;
    }
    result_.event_digest = digest_.value();
    result_.x = server_.x;
    result_.x_hat = server_.x_hat;
  }

  const Problem& prob_;
  SimConfig cfg_;
  ServerState server_;
  Rng server_quant_;
  std::priority_queue<SimEvent, std::vector<SimEvent>, std::greater<>> queue_;
  std::uint64_t next_seq_ = 0;
  std::vector<LocalCopy> copies_;
  std::vector<ModelVector> log_;
  std::vector<std::uint64_t> slot_runs_;
  std::vector<ClientTrainingRun> slot_run_;
  std::vector<ClientTrainingRun> active_;
  Digest digest_;
  double grad_sum_ = 0.0;
  std::vector<double> grad_;
  SimResult result_;
};

}  // namespace detail

inline SimResult run_simulation(const Problem& prob, const SimConfig& cfg,
                                ModelVector x0) {
  return detail::Simulation(prob, cfg, std::move(x0)).run();
}

inline SimResult run_simulation(const Problem& prob, const SimConfig& cfg) {
  return run_simulation(prob, cfg, ModelVector(prob.dim(), 0.0f));
}

struct StalenessReport {
  std::int64_t tau_max_1 = 0;
  std::int64_t tau_max_k = 0;
  std::int64_t bound = 0;  // ceil(tau_max_1 / K)
  bool holds = false;
};

// Compares the largest staleness of a K=1 run with that of a buffer-K run on
// the same schedule.
inline StalenessReport staleness_trace_check(const SimResult& k1,
                                             const SimResult& kk, int K) {
  if (K < 1) throw ConfigError("K must be >= 1");
  StalenessReport r;
  r.tau_max_1 = k1.max_staleness;
  r.tau_max_k = kk.max_staleness;
  r.bound = (r.tau_max_1 + K - 1) / K;
  r.holds = r.tau_max_k <= r.bound;
  return r;
}

}  // namespace qafel
