// blochsim: simulate, scan, fit, leakage, fidelity for microwave-driven
// two-level qubit ensembles.
//
// Exit codes: 0 success, 1 usage/config error, 2 numerical failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "blochsim/config.hpp"
#include "blochsim/core.hpp"
#include "blochsim/dynamics.hpp"
#include "blochsim/ensemble.hpp"
#include "blochsim/fitting.hpp"
#include "blochsim/leakage.hpp"
#include "blochsim/sequences.hpp"
#include "blochsim/svg.hpp"
#include "blochsim/trace.hpp"
#include "blochsim/units.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace blochsim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

struct CommonOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::string format = "csv";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required) {
  auto* c = cmd->add_option("--config", opts.config_path, "JSON run configuration");
  if (config_required) c->required();
  cmd->add_option("--out", opts.out_dir, "output directory (created if missing)");
  cmd->add_option("--seed", opts.seed, "override numerics.seed");
  cmd->add_option("--format", opts.format, "csv|json|svg (svg adds plots)")
      ->check(CLI::IsMember({"csv", "json", "svg"}));
}

RunConfig load(const CommonOpts& opts) {
  RunConfig cfg = load_config(opts.config_path);
  if (opts.seed) cfg.seed = opts.seed;
  if ((cfg.signal.noise_sigma > 0.0 || cfg.mc_samples > 0) && !cfg.seed)
    throw ConfigError("numerics.seed",
                      "required whenever noise or Monte Carlo sampling is enabled");
  return cfg;
}

fs::path prepare_out(const CommonOpts& opts) {
  fs::path dir(opts.out_dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::pair<std::string, std::string>> config_meta(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> meta;
  meta.emplace_back("chi0_khz", format_double(angular_to_khz(cfg.chi0)));
  meta.emplace_back("delta0_khz", format_double(angular_to_khz(cfg.delta0)));
  meta.emplace_back("dchi_rel", format_double(cfg.dchi_rel));
  meta.emplace_back("ddelta_rel", format_double(cfg.ddelta_rel));
  meta.emplace_back("gamma1_hz", format_double(cfg.decay.gamma1));
  meta.emplace_back("gamma2_hz", format_double(cfg.decay.gamma2));
  meta.emplace_back("family", cfg.family);
  meta.emplace_back("theta", format_double(cfg.theta));
  meta.emplace_back("repeats", std::to_string(cfg.repeats));
  meta.emplace_back("deliberate_f", format_double(cfg.deliberate_f));
  meta.emplace_back("deliberate_eps", format_double(cfg.deliberate_eps));
  if (cfg.mc_samples > 0)
    meta.emplace_back("mc_samples", std::to_string(cfg.mc_samples));
  else
    meta.emplace_back("quad_order", std::to_string(cfg.quad_order));
  if (cfg.seed) meta.emplace_back("seed", std::to_string(*cfg.seed));
  meta.emplace_back("s1", format_double(cfg.signal.s1));
  meta.emplace_back("s0", format_double(cfg.signal.s0));
  meta.emplace_back("noise_sigma", format_double(cfg.signal.noise_sigma));
  return meta;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

int cmd_simulate(const CommonOpts& opts) {
  const RunConfig cfg = load(opts);
  const fs::path dir = prepare_out(opts);

  const PulseSequence seq = cfg.make_sequence();
  TimedTrace population = average_sequence_population(
      seq, cfg.ensemble_spec(), cfg.decay, cfg.method(),
      cfg.mc_samples > 0 ? cfg.mc_samples : cfg.quad_order,
      cfg.seed.value_or(0), cfg.samples_per_period, {cfg.ode_step_factor});
  population.meta = config_meta(cfg);

  TimedTrace signal = synthesize_signal(population, cfg.signal, cfg.seed.value_or(0));
  signal.meta = population.meta;

  write_trace_csv((dir / "population.csv").string(), population, "pi1");
  write_trace_csv((dir / "signal.csv").string(), signal, "signal");
  if (opts.format == "svg") {
    write_svg_trace((dir / "population.svg").string(), "ensemble-averaged population",
                    population, "Pi1");
    write_svg_trace((dir / "signal.svg").string(), "polarimetry signal", signal,
                    "S(t)");
  }
  std::cout << "wrote " << (dir / "population.csv").string() << " and "
            << (dir / "signal.csv").string() << " (" << population.size()
            << " samples over " << format_double(seq.total_duration()) << " s)\n";
  return kExitOk;
}

int cmd_scan(const CommonOpts& opts, const std::string& axis_name, double err_min,
             double err_max, int n_points, const std::string& family_override,
             const std::string& measure_name) {
  RunConfig cfg = load(opts);
  if (!family_override.empty()) cfg.family = family_override;
  const fs::path dir = prepare_out(opts);

  if (n_points < 1) throw ConfigError("scan.points", "need at least one error point");
  if (!(err_max >= err_min)) throw ConfigError("scan.range", "max must be >= min");
  std::vector<double> errors;
  errors.reserve(n_points);
  for (int i = 0; i < n_points; ++i)
    errors.push_back(n_points == 1
                         ? err_min
                         : err_min + (err_max - err_min) * i / (n_points - 1.0));

  const ScanAxis axis = axis_name == "angle" ? ScanAxis::angle : ScanAxis::detuning;
  FidelityMeasure measure;
  if (measure_name == "propagator") {
    if (!cfg.decay.lossless())
      throw ConfigError("scan.measure", "propagator fidelity undefined with dissipation");
    measure.kind = FidelityKind::propagator_overlap;
  }

  const PulseSequence seq = cfg.make_sequence();
  const Rotation target = cfg.family == "rotary" || cfg.family == "rabi"
                              ? Rotation{}
                              : ideal_rotation({1.0, 0.0, 0.0}, cfg.theta);
  const auto table = robustness_scan(seq, axis, errors, cfg.ensemble_spec(), cfg.decay,
                                     measure, target, cfg.quad_order,
                                     {cfg.ode_step_factor});

  const fs::path csv = dir / ("scan_" + cfg.family + "_" + axis_name + ".csv");
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot open for writing: " + csv.string());
  for (const auto& [k, v] : config_meta(cfg)) out << "# " << k << "=" << v << "\n";
  out << "# scan_axis=" << axis_name << "\n";
  out << "# measure=" << measure_name << "\n";
  out << "error_value,fidelity\n";
  for (const auto& p : table)
    out << format_double(p.error) << "," << format_double(p.fidelity) << "\n";
  out.close();

  if (opts.format == "svg") {
    SvgSeries s;
    s.name = cfg.family;
    for (const auto& p : table) {
      s.x.push_back(p.error);
      s.y.push_back(p.fidelity);
    }
    write_svg_lineplot((dir / ("scan_" + cfg.family + "_" + axis_name + ".svg")).string(),
                       "robustness scan (" + cfg.family + ", " + axis_name + ")",
                       axis_name == "angle" ? "fractional Rabi error"
                                            : "fractional detuning",
                       "fidelity", {s});
  }
  std::cout << "wrote " << csv.string() << " (" << table.size() << " points)\n";
  return kExitOk;
}

json fit_to_json(const FitResult& fit) {
  // Report in external units: cyclic Hz for frequencies, spreads relative to
  // the fitted chi0.  The covariance is mapped through the same change of
  // variables.
  const double c = 1.0 / two_pi;
  const double chi = fit.chi0;
  // Rows of d(reported)/d(raw) over raw = (chi0, delta0, dchi, ddelta, s1, s0).
  const double T[6][6] = {
      {c, 0, 0, 0, 0, 0},
      {0, c, 0, 0, 0, 0},
      {-fit.dchi / (chi * chi), 0, 1.0 / chi, 0, 0, 0},
      {-fit.ddelta / (chi * chi), 0, 0, 1.0 / chi, 0, 0},
      {0, 0, 0, 0, 1, 0},
      {0, 0, 0, 0, 0, 1}};
  json cov = json::array();
  for (int a = 0; a < 6; ++a) {
    json row = json::array();
    for (int b = 0; b < 6; ++b) {
      double s = 0.0;
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
          s += T[a][i] * fit.covariance[i * 6 + j] * T[b][j];
      row.push_back(s);
    }
    cov.push_back(row);
  }
  json j;
  j["chi0_hz_cyclic"] = angular_to_hz(fit.chi0);
  j["delta0_hz_cyclic"] = angular_to_hz(fit.delta0);
  j["dchi_rel"] = fit.dchi / fit.chi0;
  j["ddelta_rel"] = fit.ddelta / fit.chi0;
  j["s1"] = fit.s1;
  j["s0"] = fit.s0;
  j["residual_rms"] = fit.residual_rms;
  j["covariance"] = cov;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  return j;
}

int cmd_fit(const CommonOpts& opts, const std::string& trace_path, bool rotary,
            std::optional<double> tau_d_ms, std::optional<double> gamma1,
            std::optional<double> gamma2) {
  const fs::path dir = prepare_out(opts);
  if (!fs::exists(trace_path))
    throw ConfigError("<trace>", "no such file: " + trace_path);
  const TimedTrace trace = read_trace_csv(trace_path);

  json j;
  bool converged = false;
  if (rotary) {
    const RotaryFitResult fit = fit_rotary_trace(trace);
    j["gamma1_hz"] = fit.gamma1;
    j["gamma2_hz"] = fit.gamma2;
    j["chi0_hz_cyclic"] = angular_to_hz(fit.chi0);
    j["s1"] = fit.s1;
    j["s0"] = fit.s0;
    j["residual_rms"] = fit.residual_rms;
    j["converged"] = fit.converged;
    j["iterations"] = fit.iterations;
    converged = fit.converged;
  } else {
    DecayRates decay;
    bool have_decay = false;
    if (gamma1 || gamma2) {
      decay.gamma1 = gamma1.value_or(0.0);
      decay.gamma2 = gamma2.value_or(decay.gamma1);
      have_decay = true;
    } else if (tau_d_ms) {
      decay = DecayRates::from_coherence_time(*tau_d_ms * 1e-3);
      have_decay = true;
    } else if (!opts.config_path.empty()) {
      decay = load_config(opts.config_path).decay;
      have_decay = true;
    } else {
      bool f1 = false, f2 = false;
      const double g1 = trace_meta_value(trace, "gamma1_hz", f1);
      const double g2 = trace_meta_value(trace, "gamma2_hz", f2);
      if (f1 && f2) {
        decay = {g1, g2};
        have_decay = true;
      }
    }
    if (!have_decay)
      throw ConfigError("decay",
                        "decay rates required: give --tau-d-ms, --gamma1-hz/--gamma2-hz, "
                        "--config, or a trace with gamma metadata");
    const FitResult fit = fit_rabi_trace(trace, decay);
    j = fit_to_json(fit);
    converged = fit.converged;
  }

  write_json(dir / "fit.json", j);
  std::cout << j.dump(2) << "\n";
  if (!converged) {
    std::cerr << "error: fit did not converge\n";
    return kExitNumerical;
  }
  return kExitOk;
}

int cmd_leakage(const CommonOpts& opts) {
  const RunConfig cfg = load(opts);
  const fs::path dir = prepare_out(opts);

  const double gate = cfg.theta / cfg.chi0;
  const LeakageResult res =
      leakage_populations(cfg.chi0, gate, cfg.channels, cfg.ode_step_factor);

  TimedTrace trace = res.combined;
  trace.meta = config_meta(cfg);
  write_trace_csv((dir / "leakage.csv").string(), trace, "combined_population");

  json j;
  j["gate_duration_s"] = gate;
  j["qubit_rabi_khz"] = angular_to_khz(cfg.chi0);
  j["max_combined_population"] = res.max_combined;
  j["final_combined_population"] = res.final_combined;
  j["fidelity_cost_estimate"] = res.max_combined;
  json channels = json::array();
  for (const auto& ch : cfg.channels) {
    json cj;
    cj["rabi_khz"] = angular_to_khz(ch.rabi);
    cj["detuning_khz"] = angular_to_khz(ch.detuning);
    if (!ch.label.empty()) cj["label"] = ch.label;
    channels.push_back(cj);
  }
  j["channels"] = channels;
  write_json(dir / "leakage.json", j);
  std::cout << j.dump(2) << "\n";
  if (opts.format == "svg")
    write_svg_trace((dir / "leakage.svg").string(), "leaked population", trace,
                    "combined population");
  return kExitOk;
}

int cmd_fidelity(const CommonOpts& opts, const std::string& measure_name,
                 const std::string& family_override) {
  RunConfig cfg = load(opts);
  if (!family_override.empty()) cfg.family = family_override;
  const fs::path dir = prepare_out(opts);

  FidelityMeasure measure;
  if (measure_name == "propagator") {
    if (!cfg.decay.lossless())
      throw ConfigError("fidelity.measure",
                        "propagator fidelity undefined with dissipation");
    measure.kind = FidelityKind::propagator_overlap;
  }

  const PulseSequence seq = cfg.make_sequence();
  const Rotation target = cfg.family == "rotary" || cfg.family == "rabi"
                              ? Rotation{}
                              : ideal_rotation({1.0, 0.0, 0.0}, cfg.theta);
  const double fbar =
      ensemble_gate_fidelity(seq, cfg.ensemble_spec(), cfg.decay, measure, target,
                             cfg.quad_order, {cfg.ode_step_factor});

  json j;
  j["family"] = cfg.family;
  j["measure"] = measure_name;
  j["fidelity"] = fbar;
  j["gate_duration_s"] = seq.total_duration();
  j["quad_order"] = cfg.quad_order;
  if (cfg.family == "plain" && std::abs(cfg.theta - pi) < 1e-12) {
    // Closed-form diagnostics counterpart: ensemble-averaged Pi1 at the
    // perfectly timed pi-gate.
    const double estimate = averaged_torrey_population(
        {pi / cfg.chi0}, cfg.ensemble_spec(), cfg.decay, cfg.quad_order, true)[0];
    j["pi_estimate_closed_form"] = estimate;
  }
  write_json(dir / "fidelity.json", j);
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"microwave-driven qubit ensemble simulator and diagnostics"};
  app.require_subcommand(1);

  CommonOpts sim_opts, scan_opts, fit_opts, leak_opts, fid_opts;

  auto* sim = app.add_subcommand("simulate", "ensemble population and signal traces");
  add_common(sim, sim_opts, true);

  auto* scan = app.add_subcommand("scan", "fidelity vs deliberate error");
  add_common(scan, scan_opts, true);
  std::string scan_axis, scan_family, scan_measure = "state";
  double scan_min = -0.5, scan_max = 0.5;
  int scan_points = 41;
  scan->add_option("--axis", scan_axis, "detuning|angle")
      ->required()
      ->check(CLI::IsMember({"detuning", "angle"}));
  scan->add_option("--min", scan_min, "smallest fractional error");
  scan->add_option("--max", scan_max, "largest fractional error");
  scan->add_option("--points", scan_points, "number of scan points");
  scan->add_option("--family", scan_family, "override sequence.family");
  scan->add_option("--measure", scan_measure, "state|propagator")
      ->check(CLI::IsMember({"state", "propagator"}));

  auto* fit = app.add_subcommand("fit", "recover model parameters from a trace");
  add_common(fit, fit_opts, false);
  std::string fit_trace;
  bool fit_rotary = false;
  std::optional<double> fit_tau_d, fit_g1, fit_g2;
  fit->add_option("trace", fit_trace, "input trace CSV")->required();
  fit->add_flag("--rotary", fit_rotary, "fit the zero-spread rotary-echo model");
  fit->add_option("--tau-d-ms", fit_tau_d, "coherence time; sets gamma1=gamma2=1/(2 tau_d)");
  fit->add_option("--gamma1-hz", fit_g1, "pseudospin damping rate (1/s)");
  fit->add_option("--gamma2-hz", fit_g2, "population loss rate (1/s)");

  auto* leak = app.add_subcommand("leakage", "population leaked outside the qubit pair");
  add_common(leak, leak_opts, true);

  auto* fid = app.add_subcommand("fidelity", "ensemble-averaged gate fidelity");
  add_common(fid, fid_opts, true);
  std::string fid_measure = "state", fid_family;
  fid->add_option("--measure", fid_measure, "state|propagator")
      ->check(CLI::IsMember({"state", "propagator"}));
  fid->add_option("--family", fid_family, "override sequence.family");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_opts);
    if (scan->parsed())
      return cmd_scan(scan_opts, scan_axis, scan_min, scan_max, scan_points,
                      scan_family, scan_measure);
    if (fit->parsed())
      return cmd_fit(fit_opts, fit_trace, fit_rotary, fit_tau_d, fit_g1, fit_g2);
    if (leak->parsed()) return cmd_leakage(leak_opts);
    if (fid->parsed()) return cmd_fidelity(fid_opts, fid_measure, fid_family);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitUsage;
}
