#pragma once

// Experiment plumbing: dataset resolution, the f* cache, CSV/JSON output and
// parameter sweeps.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "qafel/analysis.hpp"
#include "qafel/config.hpp"
#include "qafel/dataset.hpp"
#include "qafel/format.hpp"
#include "qafel/objectives.hpp"
#include "qafel/quantizers.hpp"
#include "qafel/sim.hpp"

namespace qafel {

using Json = nlohmann::ordered_json;

inline constexpr std::size_t kMushroomsRows = 8124;
inline constexpr std::size_t kMushroomsFeatures = 112;

struct PreparedProblem {
  Dataset data;
  Partition shards;
  std::unique_ptr<Problem> problem;
  bool used_fallback = false;
  std::vector<std::string> notes;
};

inline std::filesystem::path resolve_data_path(const RunConfig& cfg,
                                               const std::string& dataset_dir) {
  std::filesystem::path p(cfg.data_path);
  if (p.is_relative() && !dataset_dir.empty()) p = std::filesystem::path(dataset_dir) / p;
  return p;
}

// Loads or synthesizes the data and partitions it. Data and partition are
// drawn from the run seed.
inline PreparedProblem prepare_problem(const RunConfig& cfg,
                                       const std::string& dataset_dir = "") {
  PreparedProblem out;
  bool synth = cfg.data_source == DataSource::kSynthetic;
  if (!synth) {
    const auto path = resolve_data_path(cfg, dataset_dir);
    if (!std::filesystem::exists(path)) {
      if (!cfg.data_fallback) throw DatasetMissing(path.string());
      out.used_fallback = true;
      out.notes.push_back("dataset " + path.string() +
                          " not found; using synthetic logistic data of the "
                          "same shape (place the LIBSVM file there to use it)");
      synth = true;
    } else {
      out.data = load_libsvm(path.string());
      out.data.require_nonempty_rows();
      if (path.filename() == "mushrooms" &&
          (out.data.rows() != kMushroomsRows ||
           out.data.n_features != kMushroomsFeatures))
        out.notes.push_back("warning: expected 8124 x 112 for mushrooms, got " +
                            std::to_string(out.data.rows()) + " x " +
                            std::to_string(out.data.n_features));
      std::ostringstream fp;
      fp << std::hex << out.data.fingerprint();
      out.notes.push_back("dataset fingerprint " + fp.str());
      Rng part(cfg.seed, StreamTag::kPartition);
      out.shards = make_partition(out.data.rows(), cfg.partition, part);
    }
  }
  if (synth) {
    SynthParams sp = cfg.synth;
    if (cfg.objective.kind == ObjectiveKind::kQuadratic) sp.kind = SynthKind::kQuadratic;
    auto s = synthesize(sp, cfg.partition, cfg.seed);
    out.data = std::move(s.data);
    out.shards = std::move(s.shards);
  }
  out.problem = std::make_unique<Problem>(cfg.objective, out.data, out.shards);
  return out;
}

// Process-wide cache of minimizer results keyed by objective, data and
// partition, so sweeps over protocol settings solve each problem once.
class OracleCache {
 public:
  static OracleCache& instance() {
    static OracleCache cache;
    return cache;
  }

  OracleResult get(const Problem& prob) {
    const auto key = fingerprint(prob);
    {
      std::lock_guard lock(mu_);
      if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    }
    auto r = minimize_oracle(prob, std::vector<double>(prob.dim(), 0.0));
    std::lock_guard lock(mu_);
    return entries_.emplace(key, std::move(r)).first->second;
  }

  static std::uint64_t fingerprint(const Problem& prob) {
    std::uint64_t h = prob.data().fingerprint();
    auto mix = [&h](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
      }
    };
    mix(static_cast<std::uint64_t>(prob.spec().kind));
    mix(std::bit_cast<std::uint64_t>(prob.spec().l2));
    for (const auto& s : prob.shards()) {
      mix(s.rows.size());
      for (auto r : s.rows) mix(r);
      mix(std::bit_cast<std::uint64_t>(s.weight));
    }
    return h;
  }

 private:
  std::mutex mu_;
  std::map<std::uint64_t, OracleResult> entries_;
};

// ---------------------------------------------------------------------------
// CSV

inline const char* kCsvHeader =
    "t,sim_time,f_minus_fstar,grad_norm_sq,ergodic_grad_norm_sq,uploads,"
    "upload_bytes,download_bytes,max_staleness";

inline std::string csv_row(const MetricsRow& r) {
  std::string s;
  s += std::to_string(r.t) + ",";
  s += format_double(r.sim_time) + ",";
  s += format_double(r.f_minus_fstar) + ",";
  s += format_double(r.grad_norm_sq) + ",";
  s += format_double(r.ergodic_grad_norm_sq) + ",";
  s += std::to_string(r.uploads) + ",";
  s += std::to_string(r.upload_bytes) + ",";
  s += std::to_string(r.download_bytes) + ",";
  s += std::to_string(r.max_staleness);
  return s;
}

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : rows) out += csv_row(r) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Runs

struct DeltaInfo {
  std::optional<double> client;
  std::optional<double> server;
};

inline DeltaInfo effective_deltas(const ProtocolConfig& p, std::size_t d) {
  return {try_effective_delta(p.effective_client_quantizer(), d),
          try_effective_delta(p.effective_server_quantizer(), d)};
}

struct ExperimentResult {
  RunConfig config;
  SimResult sim;
  double f_star = 0.0;
  double f_initial = 0.0;
  ConstantEstimates constants;
  TheoremInputs theorem_inputs;
  std::optional<ConditionReport> conditions;
  std::optional<BoundTerms> bound;
  DeltaInfo deltas;
  std::vector<std::string> notes;

  double initial_gap() const { return sim.initial_f_minus_fstar; }
  double final_gap() const { return sim.final_row.f_minus_fstar; }
  bool diverged() const { return !(final_gap() <= initial_gap()); }
  bool converged() const { return final_gap() <= 1e-2 * initial_gap(); }
};

struct RunOptions {
  std::string dataset_dir;
  bool with_constants = true;
};

inline ExperimentResult run_experiment(const RunConfig& cfg,
                                       const RunOptions& opt = {}) {
  cfg.validate();
  ExperimentResult res;
  res.config = cfg;
  auto prep = prepare_problem(cfg, opt.dataset_dir);
  res.notes = prep.notes;
  const Problem& prob = *prep.problem;
  const auto oracle = OracleCache::instance().get(prob);
  if (!oracle.converged)
    res.notes.push_back("minimizer stopped at gradient norm " +
                        format_double(oracle.grad_norm));
  res.f_star = oracle.f_star;
  res.sim = run_simulation(prob, cfg.sim_config(oracle.f_star));
  res.f_initial = res.sim.initial_f_minus_fstar + res.f_star;
  res.deltas = effective_deltas(cfg.protocol, prob.dim());

  if (opt.with_constants) {
    Rng probe(cfg.seed, StreamTag::kProbe);
    res.constants = estimate_constants(prob, cfg.probes, probe);
    TheoremInputs in;
    in.L = res.constants.L;
    in.sigma_sq = res.constants.sigma_sq(cfg.protocol.batch_size);
    in.B = res.constants.B_max;
    in.F = std::max(0.0, res.sim.initial_f_minus_fstar - res.final_gap());
    in.T = cfg.T;
    in.K = cfg.protocol.K;
    in.P = cfg.protocol.P;
    in.tau_max = res.sim.max_staleness;
    in.eta_g = cfg.protocol.eta_g;
    in.eta_l = cfg.protocol.eta_l;
    in.delta_c = res.deltas.client.value_or(1.0);
    in.delta_s = res.deltas.server.value_or(1.0);
    res.theorem_inputs = in;
    if (cfg.protocol.mode != ProtocolMode::kNaiveDirect && res.deltas.client &&
        res.deltas.server) {
      res.conditions = check_stepsize_conditions(in);
      res.bound = evaluate_bound(in);
    } else {
      res.notes.push_back(
          "theorem report omitted: the bound covers the hidden-state protocol "
          "with contracting quantizers only");
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// JSON

inline Json to_json(const MetricsRow& r) {
  return Json{{"t", r.t},
              {"sim_time", r.sim_time},
              {"f_minus_fstar", r.f_minus_fstar},
              {"grad_norm_sq", r.grad_norm_sq},
              {"ergodic_grad_norm_sq", r.ergodic_grad_norm_sq},
              {"uploads", r.uploads},
              {"upload_bytes", r.upload_bytes},
              {"download_bytes", r.download_bytes},
              {"max_staleness", r.max_staleness}};
}

inline Json to_json(const ConditionResult& c) {
  Json j{{"lhs", c.lhs}, {"rhs", nullptr}, {"slack", nullptr}, {"pass", c.pass}};
  if (std::isfinite(c.rhs)) {
    j["rhs"] = c.rhs;
    j["slack"] = c.slack;
  } else {
    j["rhs"] = "inf";
    j["slack"] = "inf";
  }
  return j;
}

inline Json to_json(const ConditionReport& r) {
  return Json{{"server_condition", to_json(r.server)},
              {"drift_condition", to_json(r.drift)},
              {"local_condition", to_json(r.local)},
              {"all_pass", r.all_pass()}};
}

inline Json to_json(const BoundTerms& b) {
  return Json{{"descent", b.descent},
              {"client_quant", b.client_quant},
              {"drift", b.drift},
              {"server_stale", b.server_stale},
              {"total", b.total},
              {"conditions_pass", b.conditions_pass}};
}

inline Json to_json(const TheoremInputs& in) {
  return Json{{"L", in.L},         {"sigma_sq", in.sigma_sq}, {"B", in.B},
              {"F", in.F},         {"T", in.T},               {"K", in.K},
              {"P", in.P},         {"tau_max", in.tau_max},   {"eta_g", in.eta_g},
              {"eta_l", in.eta_l}, {"delta_c", in.delta_c},   {"delta_s", in.delta_s}};
}

inline Json to_json(const ConstantEstimates& c) {
  return Json{{"L", c.L},
              {"L_max_client", c.L_max_client},
              {"sigma_sq_sample", c.sigma_sq_sample},
              {"B_mean", c.B_mean},
              {"B_max", c.B_max},
              {"f_star", c.f_star},
              {"oracle_grad_norm", c.oracle_grad_norm},
              {"oracle_converged", c.oracle_converged}};
}

inline Json config_json(const RunConfig& c) {
  Json j = Json::object();
  for (const auto& f : detail::config_fields()) j[f.key] = f.get(c);
  return j;
}

inline Json summary_json(const ExperimentResult& r) {
  Json j;
  j["seed"] = r.config.seed;
  j["f_star"] = r.f_star;
  j["initial_f_minus_fstar"] = r.initial_gap();
  j["final"] = to_json(r.sim.final_row);
  j["diverged"] = r.diverged();
  j["converged"] = r.converged();
  j["uploads"] = r.sim.uploads;
  j["upload_bytes"] = r.sim.upload_bytes;
  j["download_bytes"] = r.sim.download_bytes;
  j["broadcasts"] = r.sim.broadcasts;
  j["dropped_arrivals"] = r.sim.dropped_arrivals;
  j["max_staleness"] = r.sim.max_staleness;
  j["hidden_state_consistent"] = r.sim.hidden_state_consistent;
  j["effective_delta"] = {
      {"client", r.deltas.client ? Json(*r.deltas.client) : Json(nullptr)},
      {"server", r.deltas.server ? Json(*r.deltas.server) : Json(nullptr)}};
  Json th;
  th["constants"] = to_json(r.constants);
  th["inputs"] = to_json(r.theorem_inputs);
  th["conditions"] = r.conditions ? to_json(*r.conditions) : Json(nullptr);
  th["bound"] = r.bound ? to_json(*r.bound) : Json(nullptr);
  j["theorem"] = th;
  j["config"] = config_json(r.config);
  j["notes"] = r.notes;
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

struct RunOutputs {
  std::filesystem::path csv;
  std::filesystem::path summary;
  std::filesystem::path config;
};

inline RunOutputs write_run_outputs(const ExperimentResult& r) {
  const std::filesystem::path dir(r.config.output_dir);
  RunOutputs o{dir / (r.config.output_name + ".csv"),
               dir / (r.config.output_name + ".json"),
               dir / (r.config.output_name + ".cfg")};
  write_text(o.csv, metrics_csv(r.sim.rows));
  write_text(o.summary, summary_json(r).dump(2) + "\n");
  write_text(o.config, serialize_config(r.config));
  return o;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepAxis {
  std::string key;
  std::vector<std::string> values;
};

class UnknownAxis : public Error {
 public:
  using Error::Error;
};

// "key=v1,v2,v3"
inline SweepAxis parse_axis(const std::string& text) {
  const auto eq = text.find('=');
  SweepAxis a;
  a.key = detail::trim(text.substr(0, eq));
  if (!config_has_key(a.key)) throw UnknownAxis("unknown sweep axis '" + a.key + "'");
  if (eq == std::string::npos) throw UnknownAxis("axis '" + a.key + "' has no values");
  std::stringstream ss(text.substr(eq + 1));
  std::string v;
  while (std::getline(ss, v, ','))
    if (auto t = detail::trim(v); !t.empty()) a.values.push_back(t);
  if (a.values.empty()) throw UnknownAxis("axis '" + a.key + "' has no values");
  return a;
}

struct SweepPoint {
  std::vector<std::string> values;  // one per axis
  std::uint64_t seed = 0;
  RunConfig config;
};

inline std::vector<SweepPoint> expand_sweep(const RunConfig& base,
                                            const std::vector<SweepAxis>& axes,
                                            const std::vector<std::uint64_t>& seeds) {
  if (axes.empty()) throw UnknownAxis("sweep needs at least one axis");
  std::vector<SweepPoint> pts;
  std::vector<std::size_t> idx(axes.size(), 0);
  for (;;) {
    for (auto seed : seeds) {
      SweepPoint p;
      p.config = base;
      p.seed = seed;
      std::string name = base.output_name;
      for (std::size_t a = 0; a < axes.size(); ++a) {
        const auto& v = axes[a].values[idx[a]];
        set_config_value(p.config, axes[a].key, v);
        p.values.push_back(v);
        std::string tag = axes[a].key + "-" + v;
        std::replace_if(tag.begin(), tag.end(),
                        [](char c) { return c == '/' || c == ':' || c == ' '; }, '_');
        name += "_" + tag;
      }
      p.config.seed = seed;
      p.config.output_name = name + "_seed-" + std::to_string(seed);
      pts.push_back(std::move(p));
    }
    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++idx[a] < axes[a].values.size()) break;
      idx[a] = 0;
      if (a == 0) return pts;
    }
  }
}

struct SweepRow {
  std::vector<std::string> values;
  std::size_t runs = 0;
  double final_mean = 0.0, final_std = 0.0;
  double ergodic_mean = 0.0, ergodic_std = 0.0;
  double upload_bytes_mean = 0.0;
  double download_bytes_mean = 0.0;
  std::size_t diverged = 0;
};

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
}

// Runs every point on up to `jobs` threads; results keep the point order.
inline std::vector<ExperimentResult> run_points(const std::vector<SweepPoint>& pts,
                                                int jobs, const RunOptions& opt) {
  std::vector<ExperimentResult> results(pts.size());
  std::vector<std::exception_ptr> errors(pts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < pts.size();) {
      try {
        results[i] = run_experiment(pts[i].config, opt);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, jobs));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < std::min(n, pts.size()); ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

inline std::vector<SweepRow> summarize_sweep(const std::vector<SweepPoint>& pts,
                                             const std::vector<ExperimentResult>& res) {
  std::vector<SweepRow> rows;
  std::map<std::vector<std::string>, std::size_t> where;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    auto [it, fresh] = where.emplace(pts[i].values, rows.size());
    if (fresh) {
      rows.push_back({});
      rows.back().values = pts[i].values;
      members.emplace_back();
    }
    members[it->second].push_back(i);
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<double> fin, erg, up, down;
    for (auto i : members[r]) {
      fin.push_back(res[i].final_gap());
      erg.push_back(res[i].sim.final_row.ergodic_grad_norm_sq);
      up.push_back(static_cast<double>(res[i].sim.upload_bytes));
      down.push_back(static_cast<double>(res[i].sim.download_bytes));
      if (res[i].diverged()) ++rows[r].diverged;
    }
    rows[r].runs = members[r].size();
    std::tie(rows[r].final_mean, rows[r].final_std) = mean_std(fin);
    std::tie(rows[r].ergodic_mean, rows[r].ergodic_std) = mean_std(erg);
    rows[r].upload_bytes_mean = mean_std(up).first;
    rows[r].download_bytes_mean = mean_std(down).first;
  }
  return rows;
}

inline std::string sweep_table_csv(const std::vector<SweepAxis>& axes,
                                   const std::vector<SweepRow>& rows) {
  std::string out;
  for (const auto& a : axes) out += a.key + ",";
  out += "runs,final_f_minus_fstar_mean,final_f_minus_fstar_std,"
         "ergodic_grad_norm_sq_mean,ergodic_grad_norm_sq_std,upload_bytes_mean,"
         "download_bytes_mean,diverged\n";
  for (const auto& r : rows) {
    for (const auto& v : r.values) out += v + ",";
    out += std::to_string(r.runs) + "," + format_double(r.final_mean) + "," +
           format_double(r.final_std) + "," + format_double(r.ergodic_mean) + "," +
           format_double(r.ergodic_std) + "," + format_double(r.upload_bytes_mean) +
           "," + format_double(r.download_bytes_mean) + "," +
           std::to_string(r.diverged) + "\n";
  }
  return out;
}

}  // namespace qafel
