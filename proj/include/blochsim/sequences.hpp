#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "blochsim/core.hpp"
#include "blochsim/dynamics.hpp"
#include "blochsim/ensemble.hpp"
#include "blochsim/units.hpp"

namespace blochsim {

// ---------------------------------------------------------------------------
// Pulse families
// ---------------------------------------------------------------------------

inline PulseSequence plain_pulse(double theta, double phase, double chi0) {
  if (!(theta > 0.0) || !(chi0 > 0.0))
    throw std::invalid_argument("plain_pulse: theta and chi0 must be positive");
  return {{{theta / chi0, chi0, phase, 0.0}}, "plain"};
}

// Alternating-phase (phi, phi+pi) blocks of angle theta.  theta = 2*pi also
// refocuses detuning spread, not just Rabi-rate spread.
inline PulseSequence rotary_echo(double theta, double phase, int repeats, double chi0) {
  if (repeats < 1)
    throw std::invalid_argument("rotary_echo: repeats must be >= 1");
  if (!(theta > 0.0) || !(chi0 > 0.0))
    throw std::invalid_argument("rotary_echo: theta and chi0 must be positive");
  PulseSequence seq;
  seq.label = "rotary";
  seq.segments.reserve(2 * static_cast<std::size_t>(repeats));
  for (int i = 0; i < repeats; ++i) {
    seq.segments.push_back({theta / chi0, chi0, phase, 0.0});
    seq.segments.push_back({theta / chi0, chi0, phase + pi, 0.0});
  }
  return seq;
}

// Three-segment off-resonance-compensating rotation by theta about the 1-axis.
// For theta = pi the angles reduce to (7/3, 5/3, 1/3) * pi at phases (0, pi, 0).
inline PulseSequence corpse(double theta, double chi0) {
  if (!(theta > 0.0) || theta > pi + 1e-12)
    throw std::invalid_argument("corpse: theta must lie in (0, pi]");
  if (!(chi0 > 0.0)) throw std::invalid_argument("corpse: chi0 must be positive");
  const double k = std::asin(std::sin(theta / 2.0) / 2.0);
  const double a1 = two_pi + theta / 2.0 - k;
  const double a2 = two_pi - 2.0 * k;
  const double a3 = theta / 2.0 - k;
  PulseSequence seq;
  seq.label = "corpse";
  seq.segments = {{a1 / chi0, chi0, 0.0, 0.0},
                  {a2 / chi0, chi0, pi, 0.0},
                  {a3 / chi0, chi0, 0.0, 0.0}};
  return seq;
}

// Three pi-pulses at phases (60, 300, 60) degrees: a pi rotation about the
// 1-axis with first-order rotation-angle errors cancelled.
inline PulseSequence scrofulous_pi(double chi0) {
  if (!(chi0 > 0.0)) throw std::invalid_argument("scrofulous_pi: chi0 must be positive");
  const double phi1 = pi / 3.0;
  const double phi2 = 5.0 * pi / 3.0;
  PulseSequence seq;
  seq.label = "scrofulous";
  seq.segments = {{pi / chi0, chi0, phi1, 0.0},
                  {pi / chi0, chi0, phi2, 0.0},
                  {pi / chi0, chi0, phi1, 0.0}};
  return seq;
}

enum class Bb1Order { correction_first, correction_last };

// Broadband theta-rotation about the 1-axis: the target pulse plus the
// (pi, 2pi, pi) correction triple at phases (phi1, 3*phi1, phi1) with
// phi1 = arccos(-theta / 4pi).  Ordering of the two blocks is free at this
// error order.
inline PulseSequence bb1(double theta, double chi0,
                         Bb1Order order = Bb1Order::correction_first) {
  if (!(theta > 0.0) || theta > pi + 1e-12)
    throw std::invalid_argument("bb1: theta must lie in (0, pi]");
  if (!(chi0 > 0.0)) throw std::invalid_argument("bb1: chi0 must be positive");
  const double phi1 = std::acos(-theta / (4.0 * pi));
  const std::vector<PulseSegment> correction = {{pi / chi0, chi0, phi1, 0.0},
                                                {two_pi / chi0, chi0, 3.0 * phi1, 0.0},
                                                {pi / chi0, chi0, phi1, 0.0}};
  const PulseSegment target{theta / chi0, chi0, 0.0, 0.0};
  PulseSequence seq;
  seq.label = "bb1";
  if (order == Bb1Order::correction_first) {
    seq.segments = correction;
    seq.segments.push_back(target);
  } else {
    seq.segments = {target};
    seq.segments.insert(seq.segments.end(), correction.begin(), correction.end());
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Fidelity functionals
// ---------------------------------------------------------------------------

// Fractional drive errors: f = Delta/chi0, eps = (chi - chi0)/chi0.
struct ErrorPoint {
  double f = 0.0;
  double eps = 0.0;
};

enum class FidelityKind { state_overlap, propagator_overlap };

struct FidelityMeasure {
  FidelityKind kind = FidelityKind::state_overlap;
  int initial_logical = 0;
};

inline Rotation pi_about_1() { return ideal_rotation({1.0, 0.0, 0.0}, pi); }

// Coherent composition of a sequence for one member: per-segment axis/angle
// from the effective (chi, Delta), multiplied up in time order.
inline Rotation sequence_rotation(const PulseSequence& seq, double rabi_scale = 1.0,
                                  double detuning = 0.0) {
  Rotation total;
  for (const auto& seg : seq.segments) {
    const double chi = seg.rabi * rabi_scale;
    const double delta = detuning + seg.detuning_offset;
    const double omega = std::hypot(chi, delta);
    const double angle = omega * seg.duration;
    if (angle == 0.0) continue;
    total = compose(total, ideal_rotation(rotation_axis(chi, delta, seg.phase), angle));
  }
  return total;
}

namespace detail {

inline double state_overlap_fidelity(const Vec3& actual, double population,
                                     const Vec3& target) {
  const double f = population * (1.0 + dot(actual, target)) / 2.0;
  return std::clamp(f, 0.0, 1.0);
}

}  // namespace detail

// Fidelity of one member's implementation of `target`.  Without decay the
// composition is exact; with decay the Bloch ODE is integrated and only the
// state-overlap measure is defined.
inline double sequence_fidelity(const PulseSequence& seq, const ErrorPoint& error,
                                const FidelityMeasure& measure = {},
                                const Rotation& target = pi_about_1(),
                                const DecayRates* decay = nullptr,
                                const EvolveOptions& opt = {}) {
  if (seq.segments.empty())
    throw std::invalid_argument("sequence_fidelity: empty sequence");
  if (!std::isfinite(error.f) || !std::isfinite(error.eps))
    throw std::invalid_argument("sequence_fidelity: non-finite error point");
  const double scale = 1.0 + error.eps;
  if (!(scale > 0.0))
    throw std::invalid_argument("sequence_fidelity: rabi error must keep chi positive");
  const double detuning = error.f * seq.nominal_rabi();

  const bool dissipative = decay != nullptr && !decay->lossless();
  if (measure.kind == FidelityKind::propagator_overlap) {
    if (dissipative)
      throw std::invalid_argument("propagator fidelity undefined with dissipation");
    const Rotation actual = sequence_rotation(seq, scale, detuning);
    return std::clamp(std::abs(actual.quaternion_dot(target)), 0.0, 1.0);
  }

  const BlochState initial = state_from_logical(measure.initial_logical);
  const Vec3 target_vec = target.apply(initial.vector());
  if (!dissipative) {
    const Rotation actual = sequence_rotation(seq, scale, detuning);
    return detail::state_overlap_fidelity(actual.apply(initial.vector()), initial.p,
                                          target_vec);
  }
  const BlochState final_state =
      evolve_sequence(initial, seq, {scale, detuning}, *decay, opt);
  return detail::state_overlap_fidelity(final_state.vector(), final_state.p, target_vec);
}

// Gaussian-weighted ensemble average of sequence_fidelity over (chi, Delta).
inline double ensemble_gate_fidelity(const PulseSequence& seq, const EnsembleSpec& spec,
                                     const DecayRates& decay,
                                     const FidelityMeasure& measure = {},
                                     const Rotation& target = pi_about_1(),
                                     int quad_order = 21, const EvolveOptions& opt = {}) {
  const double chi_nominal = seq.nominal_rabi();
  const auto nodes = gaussian_product_rule(spec, quad_order);
  double fbar = 0.0;
  for (const auto& node : nodes) {
    const ErrorPoint member{node.delta / chi_nominal, node.chi / chi_nominal - 1.0};
    fbar += node.weight * sequence_fidelity(seq, member, measure, target, &decay, opt);
  }
  return std::clamp(fbar, 0.0, 1.0);
}

enum class ScanAxis { detuning, angle };

struct ScanPoint {
  double error;
  double fidelity;
};

// Fidelity versus a deliberate error applied to the ensemble mean (Delta0 or
// chi0), with the intrinsic spreads held fixed.
inline std::vector<ScanPoint> robustness_scan(const PulseSequence& seq, ScanAxis axis,
                                              const std::vector<double>& errors,
                                              const EnsembleSpec& spec,
                                              const DecayRates& decay,
                                              const FidelityMeasure& measure = {},
                                              const Rotation& target = pi_about_1(),
                                              int quad_order = 21,
                                              const EvolveOptions& opt = {}) {
  if (errors.empty())
    throw std::invalid_argument("robustness_scan: empty error-point list");
  std::vector<ScanPoint> table;
  table.reserve(errors.size());
  for (double e : errors) {
    if (!std::isfinite(e))
      throw std::invalid_argument("robustness_scan: non-finite error point");
    EnsembleSpec shifted = spec;
    if (axis == ScanAxis::detuning)
      shifted.delta0 = spec.delta0 + e * spec.chi0;
    else
      shifted.chi0 = spec.chi0 * (1.0 + e);
    table.push_back({e, ensemble_gate_fidelity(seq, shifted, decay, measure, target,
                                               quad_order, opt)});
  }
  return table;
}

}  // namespace blochsim
