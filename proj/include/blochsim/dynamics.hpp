#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "blochsim/core.hpp"
#include "blochsim/trace.hpp"
#include "blochsim/units.hpp"

namespace blochsim {

struct DriveParams {
  double rabi = 0.0;      // chi, rad/s
  double detuning = 0.0;  // Delta, rad/s
  double generalized_rabi() const { return std::hypot(rabi, detuning); }
};

// Strong-driving Torrey inversion, in the printed sign convention where the
// initial state has inversion +1.  The artifact's BlochState uses the
// opposite sign (w = Pi1 - Pi0, |0> at w = -1), so the pseudospin evolved by
// evolve_bloch from |0> satisfies w(t) ~ -torrey_inversion(t).
inline double torrey_inversion(double t, const DriveParams& drive, double gamma1) {
  const double omega = drive.generalized_rabi();
  if (omega == 0.0)
    throw std::domain_error("torrey_inversion: generalized Rabi rate is zero");
  const double d = (drive.detuning * drive.detuning) / (omega * omega);
  const double c = (drive.rabi * drive.rabi) / (omega * omega);
  return -d * std::exp(-2.0 * gamma1 * t / 3.0) +
         c * std::cos(omega * t) * std::exp(-gamma1 * t) + 2.0 * d;
}

// Logical-|1> population of a member driven from |0>.  exact=true evaluates
// the full three-term expansion; exact=false drops the detuning-offset terms,
// which costs errors of order 1e-3 at typical parameters.
inline double torrey_population(double t, const DriveParams& drive,
                                const DecayRates& decay, bool exact = true) {
  const double omega = drive.generalized_rabi();
  if (omega == 0.0)
    throw std::domain_error("torrey_population: generalized Rabi rate is zero");
  const double d = (drive.detuning * drive.detuning) / (omega * omega);
  const double c = (drive.rabi * drive.rabi) / (omega * omega);
  const double g1 = decay.gamma1, g2 = decay.gamma2;
  double pi1;
  if (exact) {
    pi1 = 0.5 * (1.0 - 2.0 * d) * std::exp(-g2 * t) -
          0.5 * c * std::cos(omega * t) * std::exp(-(g1 + g2) * t) +
          0.5 * d * std::exp(-(2.0 * g1 / 3.0 + g2) * t);
  } else {
    pi1 = 0.5 * std::exp(-g2 * t) -
          0.5 * c * std::cos(omega * t) * std::exp(-(g1 + g2) * t);
  }
  if (pi1 < -1e-9 || pi1 > 1.0 + 1e-9)
    throw std::runtime_error("torrey_population: result outside [0,1]");
  return std::clamp(pi1, 0.0, 1.0);
}

// Per-member drive errors applied on top of a nominal sequence.
struct MemberDrive {
  double rabi_scale = 1.0;  // multiplies each segment's nominal Rabi rate
  double detuning = 0.0;    // rad/s, added to segment detuning offsets
};

struct EvolveOptions {
  // RK4 steps per generalized-Rabi period.  The default resolves populations
  // well below 1e-6; checks against exact rotations at the 1e-9 level should
  // raise this to ~2000.
  double step_factor = 200.0;
};

struct EvolveResult {
  BlochState state;
  TimedTrace trace;  // Pi1 samples
};

namespace detail {

using State4 = std::array<double, 4>;  // (u, v, w, p)

// d/dt (u,v,w) = Omega x r - (u/T2', v/T2', w/T1);  dp/dt = -gamma2 p
struct BlochField {
  double ox, oy, oz;       // torque vector (chi cos phi, chi sin phi, Delta)
  double kt2, kt1, g2;     // 1/T2', 1/T1, gamma2

  State4 operator()(const State4& s) const {
    return {oy * s[2] - oz * s[1] - kt2 * s[0],
            oz * s[0] - ox * s[2] - kt2 * s[1],
            ox * s[1] - oy * s[0] - kt1 * s[2],
            -g2 * s[3]};
  }
};

inline State4 rk4_step(const BlochField& f, const State4& s, double dt) {
  const State4 k1 = f(s);
  State4 tmp;
  for (int i = 0; i < 4; ++i) tmp[i] = s[i] + 0.5 * dt * k1[i];
  const State4 k2 = f(tmp);
  for (int i = 0; i < 4; ++i) tmp[i] = s[i] + 0.5 * dt * k2[i];
  const State4 k3 = f(tmp);
  for (int i = 0; i < 4; ++i) tmp[i] = s[i] + dt * k3[i];
  const State4 k4 = f(tmp);
  State4 out;
  for (int i = 0; i < 4; ++i)
    out[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return out;
}

inline void check_finite(const BlochState& s) {
  if (!std::isfinite(s.u) || !std::isfinite(s.v) || !std::isfinite(s.w) ||
      !std::isfinite(s.p))
    throw std::invalid_argument("evolve: non-finite state");
}

// Integrates one constant-drive interval [t0, t0 + duration].  `samples` must
// be ascending absolute times inside the closed interval; record(t, state) is
// called at each of them.  Between consecutive breakpoints the step count is
// rounded up so sample times are hit exactly.
template <typename Record>
BlochState integrate_constant_drive(BlochState in, double chi, double delta,
                                    double phase, double t0, double duration,
                                    const DecayRates& decay, double step_factor,
                                    const double* samples, std::size_t n_samples,
                                    Record&& record) {
  check_finite(in);
  if (!(duration >= 0.0) || !std::isfinite(duration) || !std::isfinite(chi) ||
      !std::isfinite(delta) || !std::isfinite(phase))
    throw std::invalid_argument("evolve: non-finite segment parameters");
  if (!(step_factor > 0.0))
    throw std::invalid_argument("evolve: step factor must be positive");

  const double omega = std::hypot(chi, delta);
  const double rate_max = std::max({decay.rate_t1(), decay.rate_t2_prime(), decay.gamma2});
  double dt_target = duration > 0.0 ? duration : 0.0;
  if (omega > 0.0) dt_target = std::min(dt_target, two_pi / (omega * step_factor));
  if (rate_max > 0.0) dt_target = std::min(dt_target, 0.01 / rate_max);

  const BlochField field{chi * std::cos(phase), chi * std::sin(phase), delta,
                         decay.rate_t2_prime(), decay.rate_t1(), decay.gamma2};

  State4 s{in.u, in.v, in.w, in.p};
  const double t_end = t0 + duration;
  double t = t0;
  std::size_t si = 0;
  while (si < n_samples && samples[si] <= t0 + 1e-18 * std::max(1.0, std::abs(t0))) {
    record(samples[si], BlochState{s[0], s[1], s[2], s[3]});
    ++si;
  }
  while (t < t_end) {
    double t_next = t_end;
    bool is_sample = false;
    if (si < n_samples && samples[si] < t_end) {
      t_next = samples[si];
      is_sample = true;
    }
    const double span = t_next - t;
    if (span > 0.0) {
      const long n = dt_target > 0.0
                         ? std::max(1L, static_cast<long>(std::ceil(span / dt_target - 1e-9)))
                         : 1L;
      const double dt = span / static_cast<double>(n);
      for (long k = 0; k < n; ++k) s = rk4_step(field, s, dt);
    }
    t = t_next;
    if (is_sample) {
      record(t, BlochState{s[0], s[1], s[2], s[3]});
      ++si;
    }
  }
  // Samples that coincide with the segment end.
  while (si < n_samples && samples[si] <= t_end + 1e-15 * std::max(1.0, t_end)) {
    record(samples[si], BlochState{s[0], s[1], s[2], s[3]});
    ++si;
  }
  return {s[0], s[1], s[2], s[3]};
}

}  // namespace detail

inline BlochState evolve_bloch(const BlochState& state, const PulseSegment& seg,
                               double member_detuning, const DecayRates& decay,
                               const EvolveOptions& opt = {}) {
  return detail::integrate_constant_drive(
      state, seg.rabi, member_detuning + seg.detuning_offset, seg.phase, 0.0,
      seg.duration, decay, opt.step_factor, nullptr, 0,
      [](double, const BlochState&) {});
}

inline EvolveResult evolve_bloch_traced(const BlochState& state,
                                        const PulseSegment& seg,
                                        double member_detuning,
                                        const DecayRates& decay,
                                        const std::vector<double>& sample_times,
                                        const EvolveOptions& opt = {}) {
  EvolveResult out;
  out.state = detail::integrate_constant_drive(
      state, seg.rabi, member_detuning + seg.detuning_offset, seg.phase, 0.0,
      seg.duration, decay, opt.step_factor, sample_times.data(), sample_times.size(),
      [&out](double t, const BlochState& s) {
        out.trace.times.push_back(t);
        out.trace.values.push_back(s.pi1());
      });
  return out;
}

// Segment-by-segment evolution of a full sequence for one ensemble member.
inline BlochState evolve_sequence(const BlochState& state, const PulseSequence& seq,
                                  const MemberDrive& member, const DecayRates& decay,
                                  const EvolveOptions& opt = {}) {
  BlochState s = state;
  double t0 = 0.0;
  for (const auto& seg : seq.segments) {
    s = detail::integrate_constant_drive(
        s, seg.rabi * member.rabi_scale, member.detuning + seg.detuning_offset,
        seg.phase, t0, seg.duration, decay, opt.step_factor, nullptr, 0,
        [](double, const BlochState&) {});
    t0 += seg.duration;
  }
  return s;
}

// As evolve_sequence, recording Pi1 at the requested absolute times
// (ascending, within [0, total_duration]).
inline EvolveResult evolve_sequence_traced(const BlochState& state,
                                           const PulseSequence& seq,
                                           const MemberDrive& member,
                                           const DecayRates& decay,
                                           const std::vector<double>& sample_times,
                                           const EvolveOptions& opt = {}) {
  EvolveResult out;
  if (seq.segments.empty()) {
    out.state = state;
    for (double t : sample_times) {
      out.trace.times.push_back(t);
      out.trace.values.push_back(state.pi1());
    }
    return out;
  }
  BlochState s = state;
  double t0 = 0.0;
  std::size_t lo = 0;
  const double total = seq.total_duration();
  for (std::size_t iseg = 0; iseg < seq.segments.size(); ++iseg) {
    const auto& seg = seq.segments[iseg];
    const double t1 = (iseg + 1 == seq.segments.size()) ? total : t0 + seg.duration;
    // Samples belonging to this segment: (t0, t1], plus t=0 for the first.
    std::size_t hi = lo;
    while (hi < sample_times.size() && sample_times[hi] <= t1 + 1e-15 * std::max(1.0, t1))
      ++hi;
    s = detail::integrate_constant_drive(
        s, seg.rabi * member.rabi_scale, member.detuning + seg.detuning_offset,
        seg.phase, t0, seg.duration, decay, opt.step_factor, sample_times.data() + lo,
        hi - lo, [&out](double t, const BlochState& st) {
          out.trace.times.push_back(t);
          out.trace.values.push_back(st.pi1());
        });
    lo = hi;
    t0 += seg.duration;
  }
  if (lo != sample_times.size())
    throw std::logic_error("evolve_sequence_traced: sample times beyond sequence end");
  out.state = s;
  return out;
}

// Sample grid covering a sequence: `samples_per_period` points per nominal
// Rabi period, with every segment boundary included exactly.
inline std::vector<double> sequence_sample_grid(const PulseSequence& seq,
                                                double samples_per_period = 200.0,
                                                double nominal_rabi = 0.0) {
  const double chi = nominal_rabi > 0.0 ? nominal_rabi : seq.nominal_rabi();
  const double total = seq.total_duration();
  std::vector<double> grid;
  if (total <= 0.0) return {0.0};
  const double period = two_pi / chi;
  const std::size_t n = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::ceil(samples_per_period * total / period)) + 1);
  grid.reserve(n + seq.segments.size());
  for (std::size_t i = 0; i < n; ++i)
    grid.push_back(total * static_cast<double>(i) / static_cast<double>(n - 1));
  double boundary = 0.0;
  for (const auto& seg : seq.segments) {
    boundary += seg.duration;
    grid.push_back(std::min(boundary, total));
  }
  std::sort(grid.begin(), grid.end());
  const double tol = total * 1e-12;
  grid.erase(std::unique(grid.begin(), grid.end(),
                         [tol](double a, double b) { return b - a <= tol; }),
             grid.end());
  return grid;
}

}  // namespace blochsim
