#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "blochsim/core.hpp"
#include "blochsim/ensemble.hpp"
#include "blochsim/leakage.hpp"
#include "blochsim/sequences.hpp"
#include "blochsim/units.hpp"
#include "json.hpp"

namespace blochsim {

// Configuration problems carry the offending field's dotted path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error("config: " + field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// One experiment description.  External frequencies are cyclic kHz; they are
// converted to angular units on load and stay angular from here on.
struct RunConfig {
  // drive
  double chi0 = khz_to_angular(27.78);
  double delta0 = 0.0;
  // ensemble (spreads relative to chi0)
  double dchi_rel = 0.0;
  double ddelta_rel = 0.0;
  // decay
  DecayRates decay{};
  // signal
  SignalModel signal{1.0, 0.0, 0.0};
  // numerics
  int quad_order = 21;
  long long mc_samples = 0;  // 0 selects quadrature
  double ode_step_factor = 200.0;
  double samples_per_period = 200.0;
  std::optional<std::uint64_t> seed;
  // sequence
  std::string family = "plain";
  double theta = pi;
  double phase = 0.0;
  int repeats = 1;
  double deliberate_f = 0.0;
  double deliberate_eps = 0.0;
  // leakage
  std::vector<LeakageChannel> channels;

  EnsembleSpec ensemble_spec() const {
    return {chi0 * (1.0 + deliberate_eps), delta0 + deliberate_f * chi0,
            dchi_rel * chi0, ddelta_rel * chi0, 0.0};
  }

  AverageMethod method() const {
    return mc_samples > 0 ? AverageMethod::montecarlo : AverageMethod::quadrature;
  }

  PulseSequence make_sequence() const {
    if (family == "plain") return plain_pulse(theta, phase, chi0);
    if (family == "rabi") {
      // Continuous drive for `repeats` full nominal Rabi periods.
      PulseSequence seq;
      seq.label = "rabi";
      seq.segments = {{repeats * two_pi / chi0, chi0, phase, 0.0}};
      return seq;
    }
    if (family == "rotary") return rotary_echo(theta, phase, repeats, chi0);
    if (family == "corpse") return corpse(theta, chi0);
    if (family == "scrofulous") {
      if (std::abs(theta - pi) > 1e-9)
        throw ConfigError("sequence.theta", "scrofulous supports theta = pi only");
      return scrofulous_pi(chi0);
    }
    if (family == "bb1") return bb1(theta, chi0);
    throw ConfigError("sequence.family", "unknown family '" + family + "'");
  }
};

namespace detail {

inline void require_known_keys(const nlohmann::json& j, const std::string& section,
                               const std::set<std::string>& known) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key))
      throw ConfigError(section.empty() ? key : section + "." + key, "unknown key");
  }
}

inline double get_number(const nlohmann::json& j, const std::string& section,
                         const std::string& key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number())
    throw ConfigError(section + "." + key, "must be a number");
  return j[key].get<double>();
}

inline long long get_integer(const nlohmann::json& j, const std::string& section,
                             const std::string& key, long long fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_integer())
    throw ConfigError(section + "." + key, "must be an integer");
  return j[key].get<long long>();
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& root) {
  if (!root.is_object()) throw ConfigError("<root>", "must be a JSON object");
  detail::require_known_keys(
      root, "", {"drive", "ensemble", "decay", "signal", "numerics", "sequence", "leakage"});

  RunConfig cfg;

  if (root.contains("drive")) {
    const auto& j = root["drive"];
    detail::require_known_keys(j, "drive", {"chi0_khz", "delta0_khz"});
    const double chi0_khz = detail::get_number(j, "drive", "chi0_khz", 27.78);
    if (!(chi0_khz > 0.0)) throw ConfigError("drive.chi0_khz", "must be > 0");
    cfg.chi0 = khz_to_angular(chi0_khz);
    cfg.delta0 = khz_to_angular(detail::get_number(j, "drive", "delta0_khz", 0.0));
  }

  if (root.contains("ensemble")) {
    const auto& j = root["ensemble"];
    detail::require_known_keys(j, "ensemble", {"dchi_rel", "ddelta_rel"});
    cfg.dchi_rel = detail::get_number(j, "ensemble", "dchi_rel", 0.0);
    cfg.ddelta_rel = detail::get_number(j, "ensemble", "ddelta_rel", 0.0);
    if (!(cfg.dchi_rel >= 0.0)) throw ConfigError("ensemble.dchi_rel", "must be >= 0");
    if (!(cfg.ddelta_rel >= 0.0))
      throw ConfigError("ensemble.ddelta_rel", "must be >= 0");
  }

  if (root.contains("decay")) {
    const auto& j = root["decay"];
    detail::require_known_keys(j, "decay", {"tau_d_ms", "gamma1_hz", "gamma2_hz"});
    const bool has_tau = j.contains("tau_d_ms");
    const bool has_rates = j.contains("gamma1_hz") || j.contains("gamma2_hz");
    if (has_tau && has_rates)
      throw ConfigError("decay.tau_d_ms", "give either tau_d_ms or explicit rates, not both");
    if (has_tau) {
      const double tau_ms = detail::get_number(j, "decay", "tau_d_ms", 0.0);
      if (!(tau_ms > 0.0)) throw ConfigError("decay.tau_d_ms", "must be > 0");
      cfg.decay = DecayRates::from_coherence_time(tau_ms * 1.0e-3);
    } else if (has_rates) {
      cfg.decay.gamma1 = detail::get_number(j, "decay", "gamma1_hz", 0.0);
      cfg.decay.gamma2 = detail::get_number(j, "decay", "gamma2_hz", 0.0);
      if (cfg.decay.gamma1 < 0.0) throw ConfigError("decay.gamma1_hz", "must be >= 0");
      if (cfg.decay.gamma2 < 0.0) throw ConfigError("decay.gamma2_hz", "must be >= 0");
    }
  }

  if (root.contains("signal")) {
    const auto& j = root["signal"];
    detail::require_known_keys(j, "signal", {"s1", "s0", "noise_sigma"});
    cfg.signal.s1 = detail::get_number(j, "signal", "s1", 1.0);
    cfg.signal.s0 = detail::get_number(j, "signal", "s0", 0.0);
    cfg.signal.noise_sigma = detail::get_number(j, "signal", "noise_sigma", 0.0);
    if (!(cfg.signal.noise_sigma >= 0.0))
      throw ConfigError("signal.noise_sigma", "must be >= 0");
  }

  if (root.contains("numerics")) {
    const auto& j = root["numerics"];
    detail::require_known_keys(
        j, "numerics",
        {"quad_order", "mc_samples", "ode_step_factor", "samples_per_period", "seed"});
    cfg.quad_order = static_cast<int>(detail::get_integer(j, "numerics", "quad_order", 21));
    if (cfg.quad_order < 1) throw ConfigError("numerics.quad_order", "must be >= 1");
    cfg.mc_samples = detail::get_integer(j, "numerics", "mc_samples", 0);
    if (cfg.mc_samples < 0) throw ConfigError("numerics.mc_samples", "must be >= 0");
    cfg.ode_step_factor = detail::get_number(j, "numerics", "ode_step_factor", 200.0);
    if (!(cfg.ode_step_factor >= 10.0))
      throw ConfigError("numerics.ode_step_factor", "must be >= 10");
    cfg.samples_per_period =
        detail::get_number(j, "numerics", "samples_per_period", 200.0);
    if (!(cfg.samples_per_period >= 2.0))
      throw ConfigError("numerics.samples_per_period", "must be >= 2");
    if (j.contains("seed")) {
      if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer())
        throw ConfigError("numerics.seed", "must be a nonnegative integer");
      const long long s = j["seed"].get<long long>();
      if (s < 0) throw ConfigError("numerics.seed", "must be a nonnegative integer");
      cfg.seed = static_cast<std::uint64_t>(s);
    }
  }

  if (root.contains("sequence")) {
    const auto& j = root["sequence"];
    detail::require_known_keys(
        j, "sequence",
        {"family", "theta", "phase", "repeats", "deliberate_f", "deliberate_eps"});
    if (j.contains("family")) {
      if (!j["family"].is_string())
        throw ConfigError("sequence.family", "must be a string");
      cfg.family = j["family"].get<std::string>();
    }
    static const std::set<std::string> families = {"plain",  "rabi",       "rotary",
                                                   "corpse", "scrofulous", "bb1"};
    if (!families.count(cfg.family))
      throw ConfigError("sequence.family", "unknown family '" + cfg.family + "'");
    cfg.theta = detail::get_number(j, "sequence", "theta", pi);
    if (!(cfg.theta > 0.0)) throw ConfigError("sequence.theta", "must be > 0");
    cfg.phase = detail::get_number(j, "sequence", "phase", 0.0);
    cfg.repeats = static_cast<int>(detail::get_integer(j, "sequence", "repeats", 1));
    if (cfg.repeats < 1) throw ConfigError("sequence.repeats", "must be >= 1");
    cfg.deliberate_f = detail::get_number(j, "sequence", "deliberate_f", 0.0);
    cfg.deliberate_eps = detail::get_number(j, "sequence", "deliberate_eps", 0.0);
    if (!(1.0 + cfg.deliberate_eps > 0.0))
      throw ConfigError("sequence.deliberate_eps", "must keep chi0 positive");
  }

  if (root.contains("leakage")) {
    const auto& j = root["leakage"];
    detail::require_known_keys(j, "leakage", {"channels"});
    if (j.contains("channels")) {
      if (!j["channels"].is_array())
        throw ConfigError("leakage.channels", "must be an array");
      int idx = 0;
      for (const auto& cj : j["channels"]) {
        const std::string where = "leakage.channels[" + std::to_string(idx) + "]";
        detail::require_known_keys(cj, where, {"rabi_khz", "detuning_khz", "label"});
        LeakageChannel ch;
        ch.rabi = khz_to_angular(detail::get_number(cj, where, "rabi_khz", 0.0));
        ch.detuning = khz_to_angular(detail::get_number(cj, where, "detuning_khz", 0.0));
        if (cj.contains("label")) {
          if (!cj["label"].is_string()) throw ConfigError(where + ".label", "must be a string");
          ch.label = cj["label"].get<std::string>();
        }
        if (!(ch.rabi >= 0.0)) throw ConfigError(where + ".rabi_khz", "must be >= 0");
        cfg.channels.push_back(ch);
        ++idx;
      }
    }
  }

  if ((cfg.signal.noise_sigma > 0.0 || cfg.mc_samples > 0) && !cfg.seed)
    throw ConfigError("numerics.seed",
                      "required whenever noise or Monte Carlo sampling is enabled");
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open '" + path + "'");
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<file>", std::string("JSON parse error: ") + e.what());
  }
  return parse_config(root);
}

}  // namespace blochsim
