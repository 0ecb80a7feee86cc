#pragma once

// Run configuration and its text format.
//
// Grammar, one entry per line:
//   # comment            (also allowed after a value)
//   [section]            prefixes following keys with "section."
//   key = value          key may be dotted, e.g. protocol.K = 10
// Numbers accept fractions such as 1/8124. Unknown keys are errors.
// serialize() writes every field with shortest round-trip numbers, so
// parse(serialize(c)) == c.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qafel/core.hpp"
#include "qafel/dataset.hpp"
#include "qafel/format.hpp"
#include "qafel/objectives.hpp"
#include "qafel/protocol.hpp"
#include "qafel/quantizers.hpp"
#include "qafel/sim.hpp"

namespace qafel {

struct RunConfig {
  ObjectiveSpec objective{ObjectiveKind::kLogisticL2, 1.0 / 8124.0};

  DataSource data_source = DataSource::kSynthetic;
  std::string data_path = "mushrooms";
  // Use synthetic data of the same shape when the file is missing.
  bool data_fallback = true;
  SynthParams synth;
  PartitionParams partition;

  ProtocolConfig protocol;
  ArrivalModel arrival;
  DelayModel delay;

  std::int64_t T = 500;
  std::uint64_t seed = 1;
  int metrics_every = 1;
  std::size_t probes = 4;

  std::string output_dir = "out";
  std::string output_name = "run";

  bool operator==(const RunConfig& o) const;

  // Pool size 0 stands for one pool slot per client.
  int pool_size() const {
    return arrival.pool_size > 0 ? arrival.pool_size
                                 : static_cast<int>(partition.n_clients);
  }

  SimConfig sim_config(double f_star = 0.0) const {
    SimConfig s;
    s.protocol = protocol;
    s.arrival = arrival;
    s.arrival.pool_size = pool_size();
    s.delay = delay;
    s.T = T;
    s.seed = seed;
    s.metrics_every = metrics_every;
    s.f_star = f_star;
    return s;
  }

  void validate() const {
    objective.validate();
    protocol.validate();
    sim_config().validate();
    if (partition.n_clients < 1) throw ConfigError("data.clients must be >= 1");
    if (data_source == DataSource::kSynthetic || data_fallback) {
      if (synth.samples < partition.n_clients)
        throw ConfigError("data.samples must be >= data.clients");
      if (synth.features < 1) throw ConfigError("data.features must be >= 1");
    }
    if (partition.scheme == PartitionScheme::kDirichlet &&
        !(partition.dirichlet_alpha > 0.0))
      throw ConfigError("data.dirichlet_alpha must be positive");
    if (probes < 1) throw ConfigError("analysis.probes must be >= 1");
    if (protocol.mode == ProtocolMode::kQafel ||
        protocol.mode == ProtocolMode::kNaiveDirect) {
      // A quantizer that cannot contract on this dimension is infeasible.
      const std::size_t d = synth.features;
      if (protocol.server_quantizer.kind == QuantizerKind::kTopk &&
          protocol.server_quantizer.keep_count(d) < 1)
        throw ConfigError("server top-k keeps no coordinates");
    }
  }
};

namespace detail {

struct ConfigField {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end)
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end)
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" +
                      v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const ConfigError&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline std::string fmt_bool(bool b) { return b ? "true" : "false"; }

template <typename T>
std::string fmt_int(T v) {
  return std::to_string(v);
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto add = [&f](std::string key, auto get, auto set) {
      f.push_back({std::move(key), get, set});
    };
    using C = RunConfig;
    using S = const std::string&;
    add("objective.kind", [](const C& c) { return to_string(c.objective.kind); },
        [](C& c, S v) { c.objective.kind = parse_objective_kind(v); });
    add("objective.l2", [](const C& c) { return format_double(c.objective.l2); },
        [](C& c, S v) { c.objective.l2 = parse_real("objective.l2", v); });
    add("data.source",
        [](const C& c) {
          return std::string(c.data_source == DataSource::kSynthetic ? "synthetic"
                                                                     : "libsvm");
        },
        [](C& c, S v) {
          if (v == "synthetic")
            c.data_source = DataSource::kSynthetic;
          else if (v == "libsvm")
            c.data_source = DataSource::kLibsvmFile;
          else
            throw ConfigError("data.source must be synthetic or libsvm");
        });
    add("data.path", [](const C& c) { return c.data_path; },
        [](C& c, S v) { c.data_path = v; });
    add("data.fallback", [](const C& c) { return fmt_bool(c.data_fallback); },
        [](C& c, S v) { c.data_fallback = parse_bool("data.fallback", v); });
    add("data.samples", [](const C& c) { return fmt_int(c.synth.samples); },
        [](C& c, S v) { c.synth.samples = parse_uint("data.samples", v); });
    add("data.features", [](const C& c) { return fmt_int(c.synth.features); },
        [](C& c, S v) { c.synth.features = parse_uint("data.features", v); });
    add("data.groups", [](const C& c) { return fmt_int(c.synth.groups); },
        [](C& c, S v) { c.synth.groups = parse_uint("data.groups", v); });
    add("data.concentration",
        [](const C& c) { return format_double(c.synth.concentration); },
        [](C& c, S v) { c.synth.concentration = parse_real("data.concentration", v); });
    add("data.label_noise",
        [](const C& c) { return format_double(c.synth.label_noise); },
        [](C& c, S v) { c.synth.label_noise = parse_real("data.label_noise", v); });
    add("data.center_scale",
        [](const C& c) { return format_double(c.synth.center_scale); },
        [](C& c, S v) { c.synth.center_scale = parse_real("data.center_scale", v); });
    add("data.sample_scale",
        [](const C& c) { return format_double(c.synth.sample_scale); },
        [](C& c, S v) { c.synth.sample_scale = parse_real("data.sample_scale", v); });
    add("data.clients", [](const C& c) { return fmt_int(c.partition.n_clients); },
        [](C& c, S v) { c.partition.n_clients = parse_uint("data.clients", v); });
    add("data.partition",
        [](const C& c) {
          return std::string(c.partition.scheme == PartitionScheme::kUniform
                                 ? "uniform"
                                 : "dirichlet");
        },
        [](C& c, S v) {
          if (v == "uniform")
            c.partition.scheme = PartitionScheme::kUniform;
          else if (v == "dirichlet")
            c.partition.scheme = PartitionScheme::kDirichlet;
          else
            throw ConfigError("data.partition must be uniform or dirichlet");
        });
    add("data.dirichlet_alpha",
        [](const C& c) { return format_double(c.partition.dirichlet_alpha); },
        [](C& c, S v) {
          c.partition.dirichlet_alpha = parse_real("data.dirichlet_alpha", v);
        });
    add("data.weights",
        [](const C& c) {
          return std::string(c.partition.weights == WeightScheme::kUniform
                                 ? "uniform"
                                 : "size");
        },
        [](C& c, S v) {
          if (v == "uniform")
            c.partition.weights = WeightScheme::kUniform;
          else if (v == "size")
            c.partition.weights = WeightScheme::kSizeProportional;
          else
            throw ConfigError("data.weights must be size or uniform");
        });
    add("protocol.mode", [](const C& c) { return to_string(c.protocol.mode); },
        [](C& c, S v) { c.protocol.mode = parse_protocol_mode(v); });
    add("protocol.K", [](const C& c) { return fmt_int(c.protocol.K); },
        [](C& c, S v) {
          c.protocol.K = static_cast<int>(parse_int("protocol.K", v));
        });
    add("protocol.P", [](const C& c) { return fmt_int(c.protocol.P); },
        [](C& c, S v) {
          c.protocol.P = static_cast<int>(parse_int("protocol.P", v));
        });
    add("protocol.eta_g", [](const C& c) { return format_double(c.protocol.eta_g); },
        [](C& c, S v) { c.protocol.eta_g = parse_real("protocol.eta_g", v); });
    add("protocol.eta_l", [](const C& c) { return format_double(c.protocol.eta_l); },
        [](C& c, S v) { c.protocol.eta_l = parse_real("protocol.eta_l", v); });
    add("protocol.batch_size",
        [](const C& c) { return fmt_int(c.protocol.batch_size); },
        [](C& c, S v) {
          c.protocol.batch_size = parse_uint("protocol.batch_size", v);
        });
    add("protocol.server_quantizer",
        [](const C& c) { return c.protocol.server_quantizer.to_string(); },
        [](C& c, S v) { c.protocol.server_quantizer = QuantizerSpec::parse(v); });
    add("protocol.client_quantizer",
        [](const C& c) { return c.protocol.client_quantizer.to_string(); },
        [](C& c, S v) { c.protocol.client_quantizer = QuantizerSpec::parse(v); });
    add("protocol.staleness_scaling",
        [](const C& c) { return fmt_bool(c.protocol.staleness_scaling); },
        [](C& c, S v) {
          c.protocol.staleness_scaling = parse_bool("protocol.staleness_scaling", v);
        });
    add("sim.arrival", [](const C& c) { return to_string(c.arrival.kind); },
        [](C& c, S v) { c.arrival.kind = parse_arrival_kind(v); });
    add("sim.pool_size", [](const C& c) { return fmt_int(c.arrival.pool_size); },
        [](C& c, S v) {
          c.arrival.pool_size = static_cast<int>(parse_int("sim.pool_size", v));
        });
    add("sim.arrival_rate",
        [](const C& c) { return format_double(c.arrival.arrival_rate); },
        [](C& c, S v) { c.arrival.arrival_rate = parse_real("sim.arrival_rate", v); });
    add("sim.concurrency_cap",
        [](const C& c) { return fmt_int(c.arrival.concurrency_cap); },
        [](C& c, S v) {
          c.arrival.concurrency_cap =
              static_cast<int>(parse_int("sim.concurrency_cap", v));
        });
    add("sim.delay", [](const C& c) { return to_string(c.delay.kind); },
        [](C& c, S v) { c.delay.kind = parse_delay_kind(v); });
    add("sim.delay_scale", [](const C& c) { return format_double(c.delay.scale); },
        [](C& c, S v) { c.delay.scale = parse_real("sim.delay_scale", v); });
    add("run.T", [](const C& c) { return fmt_int(c.T); },
        [](C& c, S v) { c.T = parse_int("run.T", v); });
    add("run.seed", [](const C& c) { return fmt_int(c.seed); },
        [](C& c, S v) { c.seed = parse_uint("run.seed", v); });
    add("run.metrics_every", [](const C& c) { return fmt_int(c.metrics_every); },
        [](C& c, S v) {
          c.metrics_every = static_cast<int>(parse_int("run.metrics_every", v));
        });
    add("analysis.probes", [](const C& c) { return fmt_int(c.probes); },
        [](C& c, S v) { c.probes = parse_uint("analysis.probes", v); });
    add("output.dir", [](const C& c) { return c.output_dir; },
        [](C& c, S v) { c.output_dir = v; });
    add("output.name", [](const C& c) { return c.output_name; },
        [](C& c, S v) { c.output_name = v; });
    return f;
  }();
  return fields;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Short names accepted by sweeps and --set style overrides.
inline std::string resolve_alias(const std::string& key) {
  static const std::map<std::string, std::string> aliases = {
      {"K", "protocol.K"},
      {"P", "protocol.P"},
      {"T", "run.T"},
      {"seed", "run.seed"},
      {"mode", "protocol.mode"},
      {"eta_g", "protocol.eta_g"},
      {"eta_l", "protocol.eta_l"},
      {"server_quantizer", "protocol.server_quantizer"},
      {"client_quantizer", "protocol.client_quantizer"},
  };
  auto it = aliases.find(key);
  return it == aliases.end() ? key : it->second;
}

}  // namespace detail

inline bool config_has_key(const std::string& key) {
  const auto k = detail::resolve_alias(key);
  if (k == "client_bits" || k == "server_bits") return true;
  for (const auto& f : detail::config_fields())
    if (f.key == k) return true;
  return false;
}

inline void set_config_value(RunConfig& c, const std::string& key,
                             const std::string& value) {
  const auto k = detail::resolve_alias(key);
  if (k == "client_bits" || k == "server_bits") {
    const auto q = QuantizerSpec::parse("qsgd:" + value);
    (k == "client_bits" ? c.protocol.client_quantizer : c.protocol.server_quantizer) = q;
    return;
  }
  for (const auto& f : detail::config_fields()) {
    if (f.key == k) {
      f.set(c, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string get_config_value(const RunConfig& c, const std::string& key) {
  const auto k = detail::resolve_alias(key);
  if (k == "client_bits" || k == "server_bits") {
    const auto& q =
        k == "client_bits" ? c.protocol.client_quantizer : c.protocol.server_quantizer;
    return q.kind == QuantizerKind::kQsgd ? std::to_string(q.bits_per_coord)
                                          : q.to_string();
  }
  for (const auto& f : detail::config_fields())
    if (f.key == k) return f.get(c);
  throw ConfigError("unknown config key '" + key + "'");
}

inline RunConfig parse_config(std::istream& in, RunConfig base = {}) {
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": bad section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!section.empty()) key = section + "." + key;
    try {
      set_config_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

inline RunConfig parse_config(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline std::string serialize_config(const RunConfig& c) {
  std::string out;
  for (const auto& f : detail::config_fields())
    out += f.key + " = " + f.get(c) + "\n";
  return out;
}

inline bool RunConfig::operator==(const RunConfig& o) const {
  return serialize_config(*this) == serialize_config(o);
}

class ConfigFileMissing : public Error {
 public:
  explicit ConfigFileMissing(const std::string& path)
      : Error("config file not found: " + path) {}
};

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigFileMissing(path);
  return parse_config(in);
}

}  // namespace qafel
