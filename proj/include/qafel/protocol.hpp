#pragma once

// Server and client state transitions.
//
// Floating-point note: every model update is a single float operation on
// float operands (x − u, x̂ + q, y0 − yP). With an identity server quantizer
// q = fl(x' − x̂), and fl(x̂ + fl(x' − x̂)) == x' whenever x̂ == x, which is
// what keeps the hidden state bit-identical to x in the FedBuff special case.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qafel/core.hpp"
#include "qafel/objectives.hpp"
#include "qafel/quantizers.hpp"
#include "qafel/random.hpp"

namespace qafel {

enum class ProtocolMode { kQafel, kNaiveDirect, kUnquantized };

inline std::string to_string(ProtocolMode m) {
  switch (m) {
    case ProtocolMode::kQafel:
      return "qafel";
    case ProtocolMode::kNaiveDirect:
      return "naive_direct";
    case ProtocolMode::kUnquantized:
      return "unquantized";
  }
  return "?";
}

inline ProtocolMode parse_protocol_mode(const std::string& s) {
  if (s == "qafel") return ProtocolMode::kQafel;
  if (s == "naive_direct" || s == "naive") return ProtocolMode::kNaiveDirect;
  if (s == "unquantized" || s == "fedbuff") return ProtocolMode::kUnquantized;
  throw ConfigError("unknown protocol mode '" + s + "'");
}

struct ProtocolConfig {
  int K = 10;
  int P = 1;
  double eta_g = 0.1;
  double eta_l = 2.0;
  // Rows per local minibatch, drawn with replacement; 0 = full shard pass.
  std::size_t batch_size = 1;
  QuantizerSpec server_quantizer;
  QuantizerSpec client_quantizer;
  bool staleness_scaling = false;
  ProtocolMode mode = ProtocolMode::kQafel;

  void validate() const {
    if (K < 1) throw ConfigError("K must be >= 1");
    if (P < 1) throw ConfigError("P must be >= 1");
    if (!(eta_g > 0.0) || !std::isfinite(eta_g))
      throw ConfigError("eta_g must be positive");
    if (!(eta_l > 0.0) || !std::isfinite(eta_l))
      throw ConfigError("eta_l must be positive");
    server_quantizer.validate();
    client_quantizer.validate();
  }

  // The quantizers actually applied; unquantized mode forces identity.
  QuantizerSpec effective_client_quantizer() const {
    return mode == ProtocolMode::kUnquantized ? QuantizerSpec::identity()
                                              : client_quantizer;
  }
  QuantizerSpec effective_server_quantizer() const {
    return mode == ProtocolMode::kUnquantized ? QuantizerSpec::identity()
                                              : server_quantizer;
  }
};

struct BufferedUpdate {
  ModelVector delta;
  int client_id = 0;
  std::int64_t staleness = 0;
};

struct ServerState {
  ModelVector x;
  // Qafel: the shared hidden state. Naive: the last quantized model sent.
  // Unquantized: equal to x.
  ModelVector x_hat;
  std::vector<BufferedUpdate> buffer;
  std::int64_t t = 0;

  static ServerState initial(ModelVector x0) {
    ServerState s;
    s.x = x0;
    s.x_hat = std::move(x0);
    return s;
  }

  std::size_t k_filled() const { return buffer.size(); }
};

struct ClientTrainingRun {
  int client_id = 0;
  std::size_t shard = 0;
  std::int64_t base_version = 0;
  ModelVector y0;
  ModelVector y;
  int p = 0;

  static ClientTrainingRun start(int client_id, std::size_t shard,
                                 std::int64_t version, const ModelVector& base) {
    return {client_id, shard, version, base, base, 0};
  }
};

// P local SGD steps from y0, then the encoded update Q_c(y0 − y_P).
inline QuantizedMessage client_train(ClientTrainingRun& run, const Problem& prob,
                                     const ProtocolConfig& cfg, Rng& minibatch,
                                     Rng& quant_rng) {
  if (run.p != 0) throw Error("client_train: run already advanced");
  for (; run.p < cfg.P; ++run.p) {
    const auto g = prob.stochastic_gradient(
        run.shard, std::span<const Scalar>(run.y), cfg.batch_size, minibatch);
    for (std::size_t j = 0; j < run.y.size(); ++j)
      run.y[j] = static_cast<Scalar>(static_cast<double>(run.y[j]) -
                                     cfg.eta_l * g[j]);
    if (!all_finite(std::span<const Scalar>(run.y)))
      throw Error("client_train: local model became non-finite");
  }
  ModelVector delta(run.y.size());
  for (std::size_t j = 0; j < delta.size(); ++j) delta[j] = run.y0[j] - run.y[j];
  return encode(cfg.effective_client_quantizer(), delta, quant_rng);
}

inline void server_receive(ServerState& state, const QuantizedMessage& msg,
                           std::int64_t staleness, int client_id,
                           const ProtocolConfig& cfg) {
  if (state.buffer.size() >= static_cast<std::size_t>(cfg.K))
    throw Error("server_receive: buffer already full");
  if (staleness < 0) throw Error("server_receive: negative staleness");
  ModelVector delta = decode(msg);
  if (delta.size() != state.x.size())
    throw Error("server_receive: update dimension mismatch");
  if (cfg.staleness_scaling && staleness > 0) {
    const double w = 1.0 / std::sqrt(1.0 + static_cast<double>(staleness));
    for (auto& v : delta) v = static_cast<Scalar>(static_cast<double>(v) * w);
  }
  state.buffer.push_back({std::move(delta), client_id, staleness});
}

struct Broadcast {
  QuantizedMessage message;
  ModelVector decoded;
};

// Mean of the buffer, x ← x − η_g Δ̄, then the broadcast for the mode.
inline Broadcast server_global_update(ServerState& state, const ProtocolConfig& cfg,
                                      Rng& quant_rng) {
  if (state.buffer.size() != static_cast<std::size_t>(cfg.K))
    throw Error("server_global_update: buffer not full");
  const std::size_t d = state.x.size();
  std::vector<double> mean(d, 0.0);
  for (const auto& u : state.buffer)
    for (std::size_t j = 0; j < d; ++j) mean[j] += static_cast<double>(u.delta[j]);
  const double scale = cfg.eta_g / static_cast<double>(cfg.K);
  for (std::size_t j = 0; j < d; ++j) {
    const auto step = static_cast<Scalar>(scale * mean[j]);
    state.x[j] = state.x[j] - step;
  }
  state.buffer.clear();
  ++state.t;
  if (!all_finite(std::span<const Scalar>(state.x)))
    throw Error("server_global_update: model became non-finite");

  Broadcast b;
  switch (cfg.mode) {
    case ProtocolMode::kQafel: {
      ModelVector diff(d);
      for (std::size_t j = 0; j < d; ++j) diff[j] = state.x[j] - state.x_hat[j];
      b.message = encode(cfg.server_quantizer, diff, quant_rng);
      b.decoded = decode(b.message);
      for (std::size_t j = 0; j < d; ++j)
        state.x_hat[j] = state.x_hat[j] + b.decoded[j];
      break;
    }
    case ProtocolMode::kNaiveDirect:
      b.message = encode(cfg.server_quantizer, state.x, quant_rng);
      b.decoded = decode(b.message);
      state.x_hat = b.decoded;
      break;
    case ProtocolMode::kUnquantized:
      b.message = encode(QuantizerSpec::identity(), state.x, quant_rng);
      b.decoded = decode(b.message);
      state.x_hat = b.decoded;
      break;
  }
  return b;
}

// A client's copy after receiving one broadcast. In qafel mode the payload
// is a delta against the hidden state; otherwise it is the model itself.
inline void client_background_apply(ModelVector& local_hat,
                                    std::span<const Scalar> decoded,
                                    ProtocolMode mode = ProtocolMode::kQafel) {
  if (decoded.size() != local_hat.size())
    throw Error("client_background_apply: dimension mismatch");
  if (mode == ProtocolMode::kQafel) {
    for (std::size_t j = 0; j < local_hat.size(); ++j)
      local_hat[j] = local_hat[j] + decoded[j];
  } else {
    local_hat.assign(decoded.begin(), decoded.end());
  }
}

inline ModelVector client_background_apply(ModelVector local_hat,
                                           const QuantizedMessage& q,
                                           ProtocolMode mode = ProtocolMode::kQafel) {
  const ModelVector decoded = decode(q);
  client_background_apply(local_hat, decoded, mode);
  return local_hat;
}

}  // namespace qafel
