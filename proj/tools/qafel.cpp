// Command-line front end: run, sweep, verify, constants, suggest.
//
// Exit codes: 0 success, 1 failed verification or runtime error,
// 2 missing dataset or config file, 3 invalid config, 4 bad sweep axis.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qafel/qafel.hpp"

namespace {

using namespace qafel;

constexpr int kExitFailure = 1;
constexpr int kExitMissing = 2;
constexpr int kExitConfig = 3;
constexpr int kExitAxis = 4;

struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::string out_dir;
  std::string dataset_dir;
  int metrics_every = 0;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Config file (key = value lines)");
  cmd->add_option_function<std::uint64_t>(
      "--seed",
      [&f](std::uint64_t s) {
        f.seed = s;
        f.has_seed = true;
      },
      "Master seed");
  cmd->add_option("--out-dir", f.out_dir, "Output directory");
  cmd->add_option("--dataset-dir", f.dataset_dir, "Directory holding dataset files");
  cmd->add_option("--metrics-every", f.metrics_every, "Record metrics every n steps")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--set", f.overrides, "Override a config value, key=value")
      ->take_all();
}

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_config(f.config);
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.has_seed) c.seed = f.seed;
  if (!f.out_dir.empty()) c.output_dir = f.out_dir;
  if (f.metrics_every > 0) c.metrics_every = f.metrics_every;
  c.validate();
  return c;
}

void print_notes(const std::vector<std::string>& notes) {
  for (const auto& n : notes) std::cerr << "note: " << n << "\n";
}

int cmd_run(const CommonFlags& f) {
  const RunConfig c = resolve_config(f);
  RunOptions opt;
  opt.dataset_dir = f.dataset_dir;
  const auto r = run_experiment(c, opt);
  print_notes(r.notes);
  const auto out = write_run_outputs(r);
  std::cout << "final f - f* " << format_double(r.final_gap()) << " (initial "
            << format_double(r.initial_gap()) << ")"
            << (r.diverged() ? " diverged" : r.converged() ? " converged" : "") << "\n"
            << "wrote " << out.csv.string() << ", " << out.summary.string() << ", "
            << out.config.string() << "\n";
  return 0;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text, std::uint64_t fallback) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    const auto dash = tok.find('-');
    try {
      if (dash != std::string::npos) {
        const auto lo = std::stoull(tok.substr(0, dash));
        const auto hi = std::stoull(tok.substr(dash + 1));
        for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
      } else {
        seeds.push_back(std::stoull(tok));
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad seed list '" + text + "'");
    }
  }
  if (seeds.empty()) seeds.push_back(fallback);
  return seeds;
}

int cmd_sweep(const CommonFlags& f, const std::vector<std::string>& axis_text,
              const std::string& seeds_text, int jobs) {
  std::vector<SweepAxis> axes;
  for (const auto& a : axis_text) axes.push_back(parse_axis(a));
  const RunConfig base = resolve_config(f);
  const auto seeds = parse_seeds(seeds_text, base.seed);
  const auto pts = expand_sweep(base, axes, seeds);
  // Reject bad values before spending time on any run.
  for (const auto& p : pts) p.config.validate();
  RunOptions opt;
  opt.dataset_dir = f.dataset_dir;
  std::cerr << "sweep: " << pts.size() << " runs on " << std::max(1, jobs)
            << " thread(s)\n";
  const auto results = run_points(pts, jobs, opt);
  for (const auto& r : results) write_run_outputs(r);
  if (!results.empty()) print_notes(results.front().notes);
  const auto rows = summarize_sweep(pts, results);
  const auto table = sweep_table_csv(axes, rows);
  const auto path = std::filesystem::path(base.output_dir) / (base.output_name + "_sweep.csv");
  write_text(path, table);
  std::cout << table << "wrote " << path.string() << "\n";
  return 0;
}

int cmd_verify(const std::string& suite, const CommonFlags& f) {
  FigureSuiteOptions fig;
  fig.dataset_dir = f.dataset_dir;
  fig.progress = [](const std::string& s) { std::cerr << "  " << s << "\n"; };
  const std::vector<std::string> names =
      suite == "all" ? suite_names() : std::vector<std::string>{suite};
  bool ok = true;
  for (const auto& n : names) {
    const auto rep = run_suite(n, fig);
    print_report(std::cout, rep);
    ok = ok && rep.passed();
  }
  return ok ? 0 : kExitFailure;
}

int cmd_constants(const CommonFlags& f) {
  const RunConfig c = resolve_config(f);
  auto prep = prepare_problem(c, f.dataset_dir);
  print_notes(prep.notes);
  Rng probe(c.seed, StreamTag::kProbe);
  const auto k = estimate_constants(*prep.problem, c.probes, probe);
  Json j = to_json(k);
  j["batch_size"] = c.protocol.batch_size;
  j["sigma_sq"] = k.sigma_sq(c.protocol.batch_size);
  j["dimension"] = prep.problem->dim();
  j["samples"] = prep.data.rows();
  j["clients"] = prep.problem->n_clients();
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_suggest(const CommonFlags& f, std::int64_t tau_override) {
  const RunConfig c = resolve_config(f);
  auto prep = prepare_problem(c, f.dataset_dir);
  print_notes(prep.notes);
  const auto& prob = *prep.problem;
  Rng probe(c.seed, StreamTag::kProbe);
  const auto k = estimate_constants(prob, 1, probe);
  std::int64_t tau = tau_override;
  if (tau < 0) {
    // The event schedule is independent of the step sizes, so a metrics-free
    // run gives the staleness the suggested steps will see.
    SimConfig s = c.sim_config();
    s.observe = false;
    tau = run_simulation(prob, s).max_staleness;
  }
  const auto ds = effective_delta(c.protocol.effective_server_quantizer(), prob.dim());
  const auto st = suggest_stepsizes(c.protocol.K, c.protocol.P, c.T, k.L, tau, ds.value);
  TheoremInputs in;
  in.L = k.L;
  in.K = c.protocol.K;
  in.P = c.protocol.P;
  in.T = c.T;
  in.tau_max = tau;
  in.delta_s = ds.value;
  in.eta_l = st.eta_l;
  in.eta_g = st.eta_g;
  Json j;
  j["eta_l"] = st.eta_l;
  j["eta_g"] = st.eta_g;
  j["c_l"] = st.constants.c_l;
  j["c_g"] = st.constants.c_g;
  j["halvings"] = st.halvings;
  j["L"] = k.L;
  j["tau_max"] = tau;
  j["delta_s"] = ds.value;
  j["conditions"] = to_json(check_stepsize_conditions(in));
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantized asynchronous federated learning simulator"};
  app.require_subcommand(1);

  CommonFlags run_f, sweep_f, verify_f, const_f, suggest_f;
  auto* run = app.add_subcommand("run", "Run one simulation and write CSV/JSON");
  add_common(run, run_f);

  auto* sweep = app.add_subcommand("sweep", "Cartesian sweep over config values and seeds");
  add_common(sweep, sweep_f);
  std::vector<std::string> axes;
  std::string seeds;
  int jobs = 1;
  sweep->add_option("--axis", axes, "key=v1,v2,... (repeatable)")->required();
  sweep->add_option("--seeds", seeds, "Seed list, e.g. 1,2,3 or 1-5");
  sweep->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);

  auto* verify = app.add_subcommand("verify", "Run an acceptance suite");
  std::string suite;
  verify->add_option("suite", suite, "quantizers, protocol, theorem, figures or all")
      ->required()
      ->check(CLI::IsMember({"quantizers", "protocol", "theorem", "figures", "all"}));
  verify->add_option("--dataset-dir", verify_f.dataset_dir,
                     "Directory holding dataset files");

  auto* constants = app.add_subcommand("constants", "Estimate L, sigma^2, B and f*");
  add_common(constants, const_f);

  auto* suggest = app.add_subcommand("suggest", "Print corollary step sizes");
  add_common(suggest, suggest_f);
  std::int64_t tau = -1;
  suggest->add_option("--tau", tau, "Staleness bound (default: measured from the schedule)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) return cmd_run(run_f);
    if (*sweep) return cmd_sweep(sweep_f, axes, seeds, jobs);
    if (*verify) return cmd_verify(suite, verify_f);
    if (*constants) return cmd_constants(const_f);
    if (*suggest) return cmd_suggest(suggest_f, tau);
  } catch (const DatasetMissing& e) {
    std::cerr << "error: dataset not found: " << e.path()
              << "\nplace the LIBSVM file there (it is never downloaded "
                 "automatically) or set data.fallback = true\n";
    return kExitMissing;
  } catch (const ConfigFileMissing& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissing;
  } catch (const UnknownAxis& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitAxis;
  } catch (const ConfigError& e) {
    std::cerr << "error: invalid config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
