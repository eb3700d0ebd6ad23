#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "blochsim/core.hpp"
#include "blochsim/ensemble.hpp"
#include "blochsim/least_squares.hpp"
#include "blochsim/trace.hpp"

namespace blochsim {

// Recovered ensemble/signal model parameters.  Frequencies are angular (rad/s);
// covariance rows/columns follow the order (chi0, delta0, dchi, ddelta, s1, s0).
struct FitResult {
  double chi0 = 0.0;
  double delta0 = 0.0;
  double dchi = 0.0;
  double ddelta = 0.0;
  double s1 = 1.0;
  double s0 = 0.0;
  double residual_rms = 0.0;
  std::array<double, 36> covariance{};
  bool converged = false;
  int iterations = 0;
  std::vector<double> objective_history;

  EnsembleSpec ensemble_spec() const { return {chi0, delta0, dchi, ddelta, 0.0}; }
};

struct CoherenceFit {
  double a = 0.0;              // dimensionless
  double b = 0.0;              // 1/s
  double tau_asymptote = 0.0;  // s, infinite when unsaturated
  bool saturated = false;
};

namespace detail {

// Dominant angular frequency of a uniformly sampled trace via a Goertzel
// periodogram scan with parabolic peak refinement.
inline double dominant_angular_frequency(const TimedTrace& trace) {
  const std::size_t n_raw = trace.size();
  if (n_raw < 16) throw std::invalid_argument("trace too short for frequency estimate");

  const std::size_t stride = std::max<std::size_t>(1, n_raw / 4096);
  std::vector<double> y;
  y.reserve(n_raw / stride + 1);
  for (std::size_t i = 0; i < n_raw; i += stride) y.push_back(trace.values[i]);
  const std::size_t n = y.size();
  const double dt = (trace.times.back() - trace.times.front()) /
                    static_cast<double>(n_raw - 1) * static_cast<double>(stride);
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(n);
  for (double& v : y) v -= mean;

  const double span = trace.times.back() - trace.times.front();
  const double omega_min = two_pi * 2.0 / span;       // at least two cycles
  const double omega_max = 0.95 * pi / dt;            // below Nyquist
  if (!(omega_max > omega_min))
    throw std::invalid_argument("trace too short for frequency estimate");

  const std::size_t nf = 2048;
  std::vector<double> power(nf, 0.0);
  for (std::size_t f = 0; f < nf; ++f) {
    const double omega = omega_min + (omega_max - omega_min) *
                                         static_cast<double>(f) / static_cast<double>(nf - 1);
    const double c2 = 2.0 * std::cos(omega * dt);
    double s1 = 0.0, s2 = 0.0;
    for (double v : y) {
      const double s0 = v + c2 * s1 - s2;
      s2 = s1;
      s1 = s0;
    }
    power[f] = s1 * s1 + s2 * s2 - c2 * s1 * s2;
  }
  std::size_t best = 0;
  for (std::size_t f = 1; f < nf; ++f)
    if (power[f] > power[best]) best = f;

  const double dw = (omega_max - omega_min) / static_cast<double>(nf - 1);
  double omega = omega_min + dw * static_cast<double>(best);
  if (best > 0 && best + 1 < nf) {
    const double pm = power[best - 1], p0 = power[best], pp = power[best + 1];
    const double denom = pm - 2.0 * p0 + pp;
    if (denom < 0.0) omega += 0.5 * dw * (pm - pp) / denom;
  }
  return omega;
}

struct EnvelopeEstimate {
  double amp_first = 0.0, amp_last = 0.0;  // peak-to-peak in the two windows
  double t_first = 0.0, t_last = 0.0;      // window centers
  double base_first = 0.0;                 // minimum in first window
};

inline EnvelopeEstimate envelope_windows(const TimedTrace& trace, double omega) {
  EnvelopeEstimate est;
  const double period = two_pi / omega;
  const double window = std::max(2.0 * period, (trace.times.back() - trace.times.front()) * 0.02);
  double lo1 = std::numeric_limits<double>::max(), hi1 = -lo1;
  double lo2 = std::numeric_limits<double>::max(), hi2 = -lo2;
  const double t_begin = trace.times.front(), t_end = trace.times.back();
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const double t = trace.times[i], v = trace.values[i];
    if (t <= t_begin + window) {
      lo1 = std::min(lo1, v);
      hi1 = std::max(hi1, v);
    }
    if (t >= t_end - window) {
      lo2 = std::min(lo2, v);
      hi2 = std::max(hi2, v);
    }
  }
  est.amp_first = hi1 - lo1;
  est.amp_last = hi2 - lo2;
  est.t_first = t_begin + window / 2.0;
  est.t_last = t_end - window / 2.0;
  est.base_first = lo1;
  return est;
}

}  // namespace detail

struct RabiFitOptions {
  int quad_order = 21;
  LeastSquaresOptions lsq{};
};

// Six-parameter fit of a polarimetry trace to the ensemble-averaged signal
// model.  The homogeneous decay rates are not free parameters; they come from
// an independent rotary-echo measurement (see fit_rotary_trace).  Spreads are
// kept nonnegative through a squared reparameterization, and the model always
// uses the exact three-term population so model error never enters the
// residual.
inline FitResult fit_rabi_trace(const TimedTrace& trace, const DecayRates& decay,
                                const FitResult* guess = nullptr,
                                const RabiFitOptions& options = {}) {
  trace.validate();
  const std::size_t n = trace.size();
  if (n < 32) throw std::invalid_argument("fit_rabi_trace: trace too short");
  const auto [vmin_it, vmax_it] = std::minmax_element(trace.values.begin(), trace.values.end());
  if (*vmax_it - *vmin_it < 1e-12 + 1e-9 * std::abs(*vmax_it))
    throw std::invalid_argument("fit_rabi_trace: degenerate (constant) trace");

  // The frequency start always comes from the data: a fraction of a percent
  // of drift in chi0 over tens of periods is enough to strand the optimizer
  // in a washed-out local minimum, so a user guess only seeds the rest.
  double chi_guess, s1_guess, s0_guess;
  double dchi_guess, ddelta_guess, dchi_alt;
  if (guess) {
    chi_guess = detail::dominant_angular_frequency(trace);
    dchi_guess = std::max(guess->dchi, 2e-4 * chi_guess);
    ddelta_guess = std::max(guess->ddelta, 2e-3 * chi_guess);
    dchi_alt = dchi_guess;
    s1_guess = guess->s1;
    s0_guess = guess->s0;
  } else {
    chi_guess = detail::dominant_angular_frequency(trace);
    const auto env = detail::envelope_windows(trace, chi_guess);
    s1_guess = env.amp_first;
    s0_guess = env.base_first;
    const double elapsed = std::max(env.t_last - env.t_first, 1e-12);
    const double homog = std::exp(-(decay.gamma1 + decay.gamma2) * elapsed);
    double excess = 1.0;
    if (env.amp_first > 0.0 && homog > 0.0)
      excess = std::clamp(env.amp_last / (env.amp_first * homog), 1e-3, 1.0);
    // First start attributes the extra envelope decay to the detuning spread,
    // whose dephasing envelope is (1 + (t ddelta^2 / chi)^2)^(-1/4); the
    // alternative start attributes it to the Rabi spread's Gaussian envelope.
    const double arg = std::pow(excess, -4.0) - 1.0;
    ddelta_guess = std::sqrt(chi_guess * std::sqrt(std::max(arg, 0.0)) /
                             elapsed);
    ddelta_guess = std::clamp(ddelta_guess, 2e-3 * chi_guess, 0.2 * chi_guess);
    dchi_guess = 2e-3 * chi_guess;
    dchi_alt = std::clamp(std::sqrt(-2.0 * std::log(excess)) / elapsed,
                          2e-4 * chi_guess, 0.05 * chi_guess);
  }

  const double span = trace.times.back() - trace.times.front();
  if (span * chi_guess / two_pi < 10.0)
    throw std::invalid_argument("fit_rabi_trace: trace must span at least 10 Rabi periods");

  // Internal coordinates: q = (chi0, psi, q_m, q_chi, s1, s0) with
  //   delta0 = q_m^2 sin(psi),  ddelta = q_m^2 |cos(psi)|,  dchi = q_chi^2.
  // The polar pair (m, psi) aligns the shallow valley delta0^2 + ddelta^2 ~
  // const with a single coordinate, which a diagonally damped optimizer can
  // traverse; in Cartesian coordinates it crawls along the circle.  The
  // squared radius and spread keep both nonnegative.
  const auto residual = [&](const std::vector<double>& q) -> std::vector<double> {
    const double m = q[2] * q[2];
    const EnsembleSpec spec{q[0], m * std::sin(q[1]), q[3] * q[3],
                            m * std::abs(std::cos(q[1])), 0.0};
    std::vector<double> r(n, 0.0);
    try {
      const std::vector<double> model =
          averaged_torrey_population(trace.times, spec, decay, options.quad_order, true);
      for (std::size_t i = 0; i < n; ++i)
        r[i] = q[4] * model[i] + q[5] - trace.values[i];
    } catch (const std::exception&) {
      std::fill(r.begin(), r.end(), 1e120);  // reject unphysical excursions
    }
    return r;
  };

  LeastSquaresOptions lsq = options.lsq;
  lsq.fd_floor = {1e-3 * chi_guess,
                  0.05,
                  std::sqrt(1e-4 * chi_guess),
                  std::sqrt(1e-4 * chi_guess),
                  1e-2 * std::max(std::abs(s1_guess), 1.0),
                  1e-2 * std::max(std::abs(s1_guess), 1.0)};

  // Stage one fits on the psi = 0 axis (pure spread, no mean offset); the
  // two starts cover both attributions of the envelope decay.
  int total_iterations = 0;
  LeastSquaresOptions lsq5 = lsq;
  lsq5.fd_floor = {lsq.fd_floor[0], lsq.fd_floor[2], lsq.fd_floor[3],
                   lsq.fd_floor[4], lsq.fd_floor[5]};
  const auto residual5 = [&](const std::vector<double>& q5) {
    return residual({q5[0], 0.0, q5[1], q5[2], q5[3], q5[4]});
  };
  LeastSquaresResult stage_a;
  stage_a.rss = std::numeric_limits<double>::infinity();
  for (const auto& spreads :
       {std::array<double, 2>{dchi_guess, ddelta_guess},
        std::array<double, 2>{dchi_alt, 2e-3 * chi_guess}}) {
    const std::vector<double> q0 = {chi_guess, std::sqrt(spreads[1]),
                                    std::sqrt(spreads[0]), s1_guess, s0_guess};
    LeastSquaresResult r = levenberg_marquardt(residual5, q0, lsq5);
    total_iterations += r.iterations;
    if (r.rss < stage_a.rss) stage_a = std::move(r);
  }

  // Stage two releases psi.  The psi axis can hold two basins (mean-offset
  // versus pure-spread explanations of the same dephasing), separated by a
  // watershed, so a coarse one-dimensional scan at the stage-one parameters
  // locates the right basin before the full fit; a user-supplied offset adds
  // one more start.  At numerically equal objectives a cleanly converged run
  // wins over a stalled twin of the same point.
  // Probing a psi value fairly requires re-solving the parameters that trade
  // against it: the signal map (linear, closed form) and chi0, whose
  // fraction-of-a-percent frequency pull otherwise swamps the comparison
  // after tens of Rabi periods.  chi0 gets a three-point parabolic refine.
  const double q_m_a = stage_a.params[1], q_chi_a = stage_a.params[2];
  const double radius_a = q_m_a * q_m_a;
  struct PsiProbe {
    double rss = std::numeric_limits<double>::infinity();
    double chi = 0.0, s1 = 1.0, s0 = 0.0;
  };
  const auto signal_solved_rss = [&](double chi, double psi_k, double& s1_out,
                                     double& s0_out) -> double {
    const EnsembleSpec spec{chi, radius_a * std::sin(psi_k), q_chi_a * q_chi_a,
                            radius_a * std::abs(std::cos(psi_k)), 0.0};
    std::vector<double> model;
    try {
      model = averaged_torrey_population(trace.times, spec, decay,
                                         options.quad_order, true);
    } catch (const std::exception&) {
      return std::numeric_limits<double>::infinity();
    }
    double sm = 0.0, smm = 0.0, sy = 0.0, smy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sm += model[i];
      smm += model[i] * model[i];
      sy += trace.values[i];
      smy += model[i] * trace.values[i];
    }
    const double nn = static_cast<double>(n);
    const double det = nn * smm - sm * sm;
    if (!(std::abs(det) > 0.0)) return std::numeric_limits<double>::infinity();
    s1_out = (nn * smy - sm * sy) / det;
    s0_out = (sy - s1_out * sm) / nn;
    double rss_k = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = s1_out * model[i] + s0_out - trace.values[i];
      rss_k += r * r;
    }
    return rss_k;
  };
  const auto probe_psi = [&](double psi_k) -> PsiProbe {
    const double chi_a = stage_a.params[0];
    const double pull = radius_a * radius_a * std::sin(psi_k) * std::sin(psi_k) /
                        (2.0 * chi_a);
    const double h = std::max(pull, 2e-5 * chi_a);
    PsiProbe best_probe;
    double r3[3];
    const double chis[3] = {chi_a - h, chi_a, chi_a + h};
    for (int j = 0; j < 3; ++j) {
      double s1_j = 1.0, s0_j = 0.0;
      r3[j] = signal_solved_rss(chis[j], psi_k, s1_j, s0_j);
      if (r3[j] < best_probe.rss)
        best_probe = {r3[j], chis[j], s1_j, s0_j};
    }
    const double denom = r3[0] - 2.0 * r3[1] + r3[2];
    if (std::isfinite(denom) && denom > 0.0) {
      const double chi_v = chi_a - h * (r3[2] - r3[0]) / (2.0 * denom);
      if (chi_v > 0.5 * chi_a && chi_v < 1.5 * chi_a) {
        double s1_v = 1.0, s0_v = 0.0;
        const double rv = signal_solved_rss(chi_v, psi_k, s1_v, s0_v);
        if (rv < best_probe.rss) best_probe = {rv, chi_v, s1_v, s0_v};
      }
    }
    return best_probe;
  };
  double psi_scan_best = 0.0;
  PsiProbe scan_winner = probe_psi(0.0);
  {
    const bool debug = std::getenv("BLOCHSIM_FIT_DEBUG") != nullptr;
    if (debug)
      std::fprintf(stderr, "[fit] scan psi=0.00 rss=%.6e\n", scan_winner.rss);
    for (int k = 1; k <= 15; ++k) {
      const double psi_k = 0.1 * static_cast<double>(k);
      const PsiProbe probe = probe_psi(psi_k);
      if (debug)
        std::fprintf(stderr, "[fit] scan psi=%.2f rss=%.6e chi_rel=%+.2e\n", psi_k,
                     probe.rss, probe.chi / stage_a.params[0] - 1.0);
      if (probe.rss < scan_winner.rss) {
        scan_winner = probe;
        psi_scan_best = psi_k;
      }
    }
    if (debug)
      std::fprintf(stderr, "[fit] stage A rss=%.6e conv=%d; scan best psi=%.2f\n",
                   stage_a.rss, stage_a.converged ? 1 : 0, psi_scan_best);
  }
  std::vector<std::pair<double, int>> psi_starts;  // (psi0, iteration cap)
  if (psi_scan_best > 0.0)
    psi_starts.emplace_back(psi_scan_best, lsq.max_iterations);
  // Token tilt: cheap insurance when the scan prefers the symmetric point,
  // where a long crawl back to psi = 0 would be wasted effort.
  psi_starts.emplace_back(0.05, psi_scan_best > 0.0 ? lsq.max_iterations : 60);
  if (guess && (guess->delta0 != 0.0 || guess->ddelta > 0.0))
    psi_starts.emplace_back(
        std::atan2(std::abs(guess->delta0), std::max(guess->ddelta, 0.0)),
        lsq.max_iterations);
  LeastSquaresResult best;
  best.rss = std::numeric_limits<double>::infinity();
  for (const auto& [psi0, iter_cap] : psi_starts) {
    LeastSquaresOptions lsq_b = lsq;
    lsq_b.max_iterations = iter_cap;
    const bool from_scan = psi0 == psi_scan_best && psi_scan_best > 0.0;
    const std::vector<double> q0 = {from_scan ? scan_winner.chi : stage_a.params[0],
                                    psi0,
                                    stage_a.params[1],
                                    stage_a.params[2],
                                    from_scan ? scan_winner.s1 : stage_a.params[3],
                                    from_scan ? scan_winner.s0 : stage_a.params[4]};
    LeastSquaresResult r = levenberg_marquardt(residual, q0, lsq_b);
    total_iterations += r.iterations;
    const bool strictly_better = r.rss < best.rss * (1.0 - 1e-9);
    const bool tie_break = r.converged && !best.converged &&
                           r.rss <= best.rss * (1.0 + 1e-9);
    if (strictly_better || tie_break) best = std::move(r);
    if (best.converged && best.rss < 1e-16 * static_cast<double>(n)) break;
  }
  // When the mean offset sits at its symmetric optimum (psi ~ 0), the free
  // stage can only creep toward it: either it edges below the psi-frozen
  // objective (converged in everything but the flag), or the frozen solution
  // itself is the best point seen and stands as the answer with delta0 = 0.
  if (!best.converged && stage_a.converged &&
      best.rss <= stage_a.rss * (1.0 + 1e-9))
    best.converged = true;
  if (stage_a.rss < best.rss * (1.0 - 1e-12) ||
      (stage_a.converged && !best.converged && stage_a.rss <= best.rss)) {
    LeastSquaresResult from_a;
    from_a.params = {stage_a.params[0], 0.0, stage_a.params[1], stage_a.params[2],
                     stage_a.params[3], stage_a.params[4]};
    from_a.rss = stage_a.rss;
    from_a.converged = stage_a.converged;
    from_a.objective_history = stage_a.objective_history;
    best = std::move(from_a);
  }
  best.iterations = total_iterations;

  const double psi = best.params[1];
  const double radius = best.params[2] * best.params[2];

  FitResult out;
  out.chi0 = std::abs(best.params[0]);
  out.delta0 = radius * std::sin(psi);
  out.dchi = best.params[3] * best.params[3];
  out.ddelta = radius * std::abs(std::cos(psi));
  out.s1 = best.params[4];
  out.s0 = best.params[5];
  out.residual_rms = std::sqrt(best.rss / static_cast<double>(n));
  out.converged = best.converged;
  out.iterations = best.iterations;
  out.objective_history = std::move(best.objective_history);
  // Covariance reported directly in the external coordinates
  // (chi0, delta0, dchi, ddelta, s1, s0), regularized so a mean offset pinned
  // at its symmetric zero shows up as a large variance on delta0 alone.
  const auto residual_ext = [&](const std::vector<double>& u) -> std::vector<double> {
    const EnsembleSpec spec{u[0], u[1], std::abs(u[2]), std::abs(u[3]), 0.0};
    std::vector<double> r(n, 0.0);
    try {
      const std::vector<double> model =
          averaged_torrey_population(trace.times, spec, decay, options.quad_order, true);
      for (std::size_t i = 0; i < n; ++i)
        r[i] = u[4] * model[i] + u[5] - trace.values[i];
    } catch (const std::exception&) {
      std::fill(r.begin(), r.end(), 1e120);
    }
    return r;
  };
  const std::vector<double> u_star = {out.chi0, out.delta0, out.dchi,
                                      out.ddelta, out.s1, out.s0};
  const std::vector<double> ext_floor = {1e-3 * out.chi0,
                                         1e-2 * out.chi0,
                                         1e-4 * out.chi0,
                                         1e-4 * out.chi0,
                                         1e-2 * std::max(std::abs(out.s1), 1.0),
                                         1e-2 * std::max(std::abs(out.s1), 1.0)};
  const std::vector<double> cov = covariance_at(residual_ext, u_star, ext_floor);
  for (int a = 0; a < 36; ++a) out.covariance[a] = cov[a];
  return out;
}

struct RotaryFitResult {
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  double chi0 = 0.0;
  double s1 = 1.0;
  double s0 = 0.0;
  double residual_rms = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Fits a rotary-2pi echo trace with the homogeneous (zero-spread) Rabi model:
// the echo suppresses the inhomogeneous dephasing, so what remains measure
// gamma1 and gamma2.  By default the rates are constrained equal.
inline RotaryFitResult fit_rotary_trace(const TimedTrace& trace,
                                        bool constrain_equal_rates = true,
                                        const LeastSquaresOptions& lsq_in = {}) {
  trace.validate();
  const std::size_t n = trace.size();
  if (n < 32) throw std::invalid_argument("fit_rotary_trace: trace too short");
  const auto [vmin_it, vmax_it] = std::minmax_element(trace.values.begin(), trace.values.end());
  if (*vmax_it - *vmin_it < 1e-12 + 1e-9 * std::abs(*vmax_it))
    throw std::invalid_argument("fit_rotary_trace: degenerate (constant) trace");

  const double chi_guess = detail::dominant_angular_frequency(trace);
  const auto env = detail::envelope_windows(trace, chi_guess);
  const double elapsed = std::max(env.t_last - env.t_first, 1e-12);
  double rate_guess = 50.0;  // 1/s
  if (env.amp_first > 0.0 && env.amp_last > 0.0)
    rate_guess = std::max(std::log(env.amp_first / env.amp_last) / elapsed, 1e-3);
  const double gamma_guess = rate_guess / 2.0;  // oscillating part decays at g1+g2

  const auto model_residual = [&](double chi, double g1, double g2, double s1,
                                  double s0, std::vector<double>& r) {
    for (std::size_t i = 0; i < n; ++i) {
      const double t = trace.times[i];
      const double pi1 = 0.5 * std::exp(-g2 * t) -
                         0.5 * std::cos(chi * t) * std::exp(-(g1 + g2) * t);
      r[i] = s1 * pi1 + s0 - trace.values[i];
    }
  };

  LeastSquaresOptions lsq = lsq_in;
  std::vector<double> q0;
  std::function<std::vector<double>(const std::vector<double>&)> residual;
  if (constrain_equal_rates) {
    q0 = {chi_guess, std::sqrt(gamma_guess), env.amp_first, env.base_first};
    lsq.fd_floor = {1e-3 * chi_guess, 0.5, 1e-2, 1e-2};
    residual = [&, n](const std::vector<double>& q) {
      std::vector<double> r(n);
      const double g = q[1] * q[1];
      model_residual(q[0], g, g, q[2], q[3], r);
      return r;
    };
  } else {
    q0 = {chi_guess, std::sqrt(gamma_guess), std::sqrt(gamma_guess), env.amp_first,
          env.base_first};
    lsq.fd_floor = {1e-3 * chi_guess, 0.5, 0.5, 1e-2, 1e-2};
    residual = [&, n](const std::vector<double>& q) {
      std::vector<double> r(n);
      model_residual(q[0], q[1] * q[1], q[2] * q[2], q[3], q[4], r);
      return r;
    };
  }

  const LeastSquaresResult res = levenberg_marquardt(residual, q0, lsq);
  RotaryFitResult out;
  out.chi0 = std::abs(res.params[0]);
  if (constrain_equal_rates) {
    out.gamma1 = out.gamma2 = res.params[1] * res.params[1];
    out.s1 = res.params[2];
    out.s0 = res.params[3];
  } else {
    out.gamma1 = res.params[1] * res.params[1];
    out.gamma2 = res.params[2] * res.params[2];
    out.s1 = res.params[3];
    out.s0 = res.params[4];
  }
  out.residual_rms = std::sqrt(res.rss / static_cast<double>(n));
  out.converged = res.converged;
  out.iterations = res.iterations;
  return out;
}

// Least-squares fit of coherence time versus scattering time to
// tau_d = 1 / (a gamma_s + b).  b -> 0 means no saturation: the asymptote is
// reported as infinity and flagged.
inline CoherenceFit fit_coherence_saturation(
    const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3)
    throw std::invalid_argument("fit_coherence_saturation: need at least 3 points");
  double ts_min = std::numeric_limits<double>::max(), ts_max = 0.0;
  for (const auto& [ts, td] : points) {
    if (!(ts > 0.0) || !(td > 0.0) || !std::isfinite(ts) || !std::isfinite(td))
      throw std::invalid_argument("fit_coherence_saturation: times must be positive");
    ts_min = std::min(ts_min, ts);
    ts_max = std::max(ts_max, ts);
  }
  if (ts_max - ts_min <= 1e-12 * ts_max)
    throw std::invalid_argument(
        "fit_coherence_saturation: singular design (all scattering times equal)");

  // 1/tau_d is linear in gamma_s = 1/tau_s; ordinary regression seeds the fit.
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double np = static_cast<double>(points.size());
  for (const auto& [ts, td] : points) {
    const double x = 1.0 / ts, y = 1.0 / td;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double denom = np * sxx - sx * sx;
  double a0 = (np * sxy - sx * sy) / denom;
  double b0 = (sy - a0 * sx) / np;

  const auto residual = [&](const std::vector<double>& q) {
    std::vector<double> r(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double inv = q[0] / points[i].first + q[1];
      r[i] = (inv > 0.0 ? 1.0 / inv : 1e120) - points[i].second;
    }
    return r;
  };
  LeastSquaresOptions lsq;
  lsq.fd_floor = {std::max(std::abs(a0), 1e-3), std::max(std::abs(b0), 1e-3)};
  const LeastSquaresResult res = levenberg_marquardt(residual, {a0, b0}, lsq);

  CoherenceFit fit;
  fit.a = res.params[0];
  fit.b = res.params[1];
  double gs_med = 0.0;
  for (const auto& [ts, td] : points) gs_med += 1.0 / ts;
  gs_med /= np;
  fit.saturated = fit.b > 1e-10 * std::abs(fit.a) * gs_med;
  fit.tau_asymptote = fit.saturated ? 1.0 / fit.b
                                    : std::numeric_limits<double>::infinity();
  return fit;
}

// Ensemble-averaged Pi1 at the intended gate time, from fitted parameters and
// the lattice-only decay rates: the diagnostics-side pi-gate fidelity.
inline double estimate_pi_fidelity(const FitResult& fit, const DecayRates& decay,
                                   double gate_time, int quad_order = 21) {
  if (!fit.converged)
    throw std::invalid_argument("estimate_pi_fidelity: fit did not converge");
  if (!(gate_time > 0.0))
    throw std::invalid_argument("estimate_pi_fidelity: gate time must be positive");
  return averaged_torrey_population({gate_time}, fit.ensemble_spec(), decay,
                                    quad_order, true)[0];
}

// Average fidelity cost of imperfectly preset chi0 and Delta0: Gaussian rms
// errors on the means, averaged by quadrature.  Returns F(0,0) - <F>.
inline double pi_fidelity_preset_penalty(const EnsembleSpec& spec, const DecayRates& decay,
                                         double gate_time, double rms_rabi_rel = 0.01,
                                         double rms_detuning_rel = 0.048,
                                         int preset_order = 15, int quad_order = 21) {
  spec.validate();
  const double f0 =
      averaged_torrey_population({gate_time}, spec, decay, quad_order, true)[0];
  const QuadratureRule re = normal_rule(0.0, rms_rabi_rel, preset_order);
  const QuadratureRule rf = normal_rule(0.0, rms_detuning_rel, preset_order);
  double mean = 0.0;
  for (std::size_t i = 0; i < re.nodes.size(); ++i) {
    EnsembleSpec preset = spec;
    preset.chi0 = spec.chi0 * (1.0 + re.nodes[i]);
    for (std::size_t j = 0; j < rf.nodes.size(); ++j) {
      preset.delta0 = spec.delta0 + rf.nodes[j] * spec.chi0;
      mean += re.weights[i] * rf.weights[j] *
              averaged_torrey_population({gate_time}, preset, decay, quad_order, true)[0];
    }
  }
  return f0 - mean;
}

}  // namespace blochsim
