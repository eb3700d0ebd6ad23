#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include "blochsim/trace.hpp"
#include "blochsim/units.hpp"

namespace blochsim {

// Off-resonant microwave coupling out of the logical pair, e.g. the
// |0> -> |F=4, m_F=2,3> transitions.
struct LeakageChannel {
  double rabi = 0.0;      // rad/s
  double detuning = 0.0;  // rad/s
  std::string label;
};

struct LeakageResult {
  TimedTrace combined;  // summed leaked population vs time
  double max_combined = 0.0;
  double final_combined = 0.0;
};

namespace detail {

using CVec = std::vector<std::complex<double>>;

// Rotating-frame star Hamiltonian: |0> couples resonantly to |1> at chi_q/2
// and to each leakage level i at chi_i/2 with diagonal offset Delta_i.
struct StarField {
  double half_chi_q;
  std::vector<double> half_chi;
  std::vector<double> delta;

  void operator()(const CVec& c, CVec& dc) const {
    const std::complex<double> mi(0.0, -1.0);
    dc[0] = mi * half_chi_q * c[1];
    dc[1] = mi * half_chi_q * c[0];
    for (std::size_t i = 0; i < half_chi.size(); ++i) {
      dc[0] += mi * half_chi[i] * c[2 + i];
      dc[2 + i] = mi * (half_chi[i] * c[0] + delta[i] * c[2 + i]);
    }
  }
};

}  // namespace detail

// Schroedinger evolution of |0> under the qubit drive plus all leakage
// couplings over one gate; dissipation is negligible on this timescale.
inline LeakageResult leakage_populations(double qubit_rabi, double gate_duration,
                                         const std::vector<LeakageChannel>& channels,
                                         double step_factor = 200.0,
                                         std::size_t n_samples = 601) {
  if (!(gate_duration > 0.0))
    throw std::invalid_argument("leakage_populations: gate duration must be positive");
  if (!(qubit_rabi >= 0.0) || !std::isfinite(qubit_rabi))
    throw std::invalid_argument("leakage_populations: invalid qubit Rabi rate");
  if (n_samples < 2) n_samples = 2;

  detail::StarField field{qubit_rabi / 2.0, {}, {}};
  double omega_max = qubit_rabi;
  for (const auto& ch : channels) {
    if (!(ch.rabi >= 0.0) || !std::isfinite(ch.rabi) || !std::isfinite(ch.detuning))
      throw std::invalid_argument("leakage_populations: invalid channel parameters");
    field.half_chi.push_back(ch.rabi / 2.0);
    field.delta.push_back(ch.detuning);
    omega_max = std::max(omega_max, std::hypot(ch.rabi, ch.detuning));
  }

  LeakageResult result;
  const std::size_t m = 2 + channels.size();
  detail::CVec c(m, 0.0), k1(m), k2(m), k3(m), k4(m), tmp(m);
  c[0] = 1.0;

  const auto leaked = [&](const detail::CVec& v) {
    double s = 0.0;
    for (std::size_t i = 2; i < v.size(); ++i) s += std::norm(v[i]);
    return s;
  };

  double dt = gate_duration;
  if (omega_max > 0.0) dt = std::min(dt, two_pi / (omega_max * step_factor));
  const long total_steps =
      std::max(1L, static_cast<long>(std::ceil(gate_duration / dt - 1e-9)));
  dt = gate_duration / static_cast<double>(total_steps);

  const auto rk4 = [&](detail::CVec& state) {
    field(state, k1);
    for (std::size_t i = 0; i < m; ++i) tmp[i] = state[i] + 0.5 * dt * k1[i];
    field(tmp, k2);
    for (std::size_t i = 0; i < m; ++i) tmp[i] = state[i] + 0.5 * dt * k2[i];
    field(tmp, k3);
    for (std::size_t i = 0; i < m; ++i) tmp[i] = state[i] + dt * k3[i];
    field(tmp, k4);
    for (std::size_t i = 0; i < m; ++i)
      state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  };

  result.combined.times.reserve(n_samples);
  result.combined.values.reserve(n_samples);
  result.combined.times.push_back(0.0);
  result.combined.values.push_back(0.0);

  long next_sample = 1;
  for (long k = 0; k < total_steps; ++k) {
    rk4(c);
    const double pop = leaked(c);
    result.max_combined = std::max(result.max_combined, pop);
    const double t = dt * static_cast<double>(k + 1);
    // Record on a uniform grid, at most once per step so coarse steps never
    // duplicate a timestamp; the running max above sees every step.
    bool due = false;
    while (next_sample < static_cast<long>(n_samples) &&
           t >= gate_duration * next_sample / static_cast<double>(n_samples - 1) - 0.5 * dt) {
      ++next_sample;
      due = true;
    }
    if (due) {
      result.combined.times.push_back(t);
      result.combined.values.push_back(pop);
    }
  }
  result.final_combined = leaked(c);
  return result;
}

}  // namespace blochsim
