#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "blochsim/core.hpp"
#include "blochsim/dynamics.hpp"
#include "blochsim/quadrature.hpp"
#include "blochsim/trace.hpp"

namespace blochsim {

// Gaussian joint distribution of Rabi rate and detuning across the ensemble.
// chi and Delta are independent unless a correlation coefficient is set.
struct EnsembleSpec {
  double chi0 = 0.0;    // rad/s, > 0
  double delta0 = 0.0;  // rad/s
  double dchi = 0.0;    // rad/s, >= 0
  double ddelta = 0.0;  // rad/s, >= 0
  double correlation = 0.0;

  void validate() const {
    if (!(chi0 > 0.0) || !std::isfinite(chi0))
      throw std::invalid_argument("EnsembleSpec: chi0 must be positive");
    if (!(dchi >= 0.0) || !(ddelta >= 0.0) || !std::isfinite(dchi) || !std::isfinite(ddelta))
      throw std::invalid_argument("EnsembleSpec: spreads must be nonnegative");
    if (!std::isfinite(delta0))
      throw std::invalid_argument("EnsembleSpec: delta0 must be finite");
    if (!(std::abs(correlation) <= 1.0))
      throw std::invalid_argument("EnsembleSpec: |correlation| must be <= 1");
  }
};

// Linear polarimetry readout S = S1 * Pi1 + S0 with additive white noise.
struct SignalModel {
  double s1 = 1.0;
  double s0 = 0.0;
  double noise_sigma = 0.0;  // per sample, signal units

  void validate() const {
    if (!(noise_sigma >= 0.0))
      throw std::invalid_argument("SignalModel: noise_sigma must be nonnegative");
  }
};

struct GaussianNode {
  double chi;
  double delta;
  double weight;
};

// Tensor-product Gauss-Hermite discretization of the (chi, Delta) Gaussian.
// Unphysical nodes at chi <= 0 are rejected; for valid spreads the weight
// lost that way must stay below 1e-12 of the total, otherwise this throws.
inline std::vector<GaussianNode> gaussian_product_rule(const EnsembleSpec& spec,
                                                       int order) {
  spec.validate();
  if (order < 1)
    throw std::invalid_argument("gaussian_product_rule: order must be >= 1");

  constexpr double inv_sqrt_pi = 0.5641895835477563;
  const auto axis = [&](double sigma) -> QuadratureRule {
    if (sigma == 0.0) return {{0.0}, {1.0}};  // standard coordinate, weight 1
    QuadratureRule gh = gauss_hermite(order);
    for (auto& w : gh.weights) w *= inv_sqrt_pi;
    return gh;
  };
  const QuadratureRule ax = axis(spec.dchi);
  const QuadratureRule ay = axis(spec.ddelta);

  const double rho = spec.correlation;
  const double rho_perp = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  const double sq2 = std::sqrt(2.0);

  std::vector<GaussianNode> nodes;
  nodes.reserve(ax.nodes.size() * ay.nodes.size());
  double lost = 0.0;
  for (std::size_t i = 0; i < ax.nodes.size(); ++i) {
    const double x = ax.nodes[i];
    const double chi = spec.chi0 + sq2 * spec.dchi * x;
    for (std::size_t j = 0; j < ay.nodes.size(); ++j) {
      const double y = ay.nodes[j];
      const double delta = spec.delta0 + sq2 * spec.ddelta * (rho * x + rho_perp * y);
      const double w = ax.weights[i] * ay.weights[j];
      if (chi <= 0.0) {
        lost += w;
        continue;
      }
      nodes.push_back({chi, delta, w});
    }
  }
  if (lost >= 1e-12)
    throw std::domain_error(
        "gaussian_product_rule: more than 1e-12 of the distribution lies at chi <= 0");
  return nodes;
}

// Deterministic normal sampler (Box-Muller over mt19937_64), independent of
// any library's normal_distribution implementation.
class GaussianSampler {
 public:
  explicit GaussianSampler(std::uint64_t seed) : rng_(seed) {}

  double uniform01() {  // (0, 1]
    return (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;
  }

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform01()));
    const double a = two_pi * uniform01();
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

enum class AverageMethod { quadrature, montecarlo };

namespace detail {

inline std::pair<double, double> sample_member(const EnsembleSpec& spec,
                                               GaussianSampler& gauss) {
  const double rho = spec.correlation;
  const double rho_perp = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double zx = gauss();
    const double zy = gauss();
    const double chi = spec.chi0 + spec.dchi * zx;
    if (chi <= 0.0) continue;
    const double delta = spec.delta0 + spec.ddelta * (rho * zx + rho_perp * zy);
    return {chi, delta};
  }
  throw std::runtime_error("ensemble sampling: chi distribution mass at chi <= 0");
}

}  // namespace detail

// Ensemble average of a per-member observable on a shared time grid.
// evaluator(chi, delta) must return one value per grid time.
template <typename Evaluator>
TimedTrace average_population(const std::vector<double>& times, const EnsembleSpec& spec,
                              Evaluator&& evaluator,
                              AverageMethod method = AverageMethod::quadrature,
                              long long order_or_samples = 21,
                              std::uint64_t seed = 0) {
  spec.validate();
  TimedTrace out;
  out.times = times;
  out.values.assign(times.size(), 0.0);

  const auto accumulate = [&](double chi, double delta, double weight,
                              std::size_t index) {
    std::vector<double> vals;
    try {
      vals = evaluator(chi, delta);
    } catch (const std::exception& e) {
      throw std::runtime_error("ensemble member #" + std::to_string(index) +
                               " (chi=" + format_double(chi) +
                               ", delta=" + format_double(delta) + "): " + e.what());
    }
    if (vals.size() != times.size())
      throw std::logic_error("ensemble evaluator returned wrong number of samples");
    for (std::size_t k = 0; k < vals.size(); ++k) out.values[k] += weight * vals[k];
  };

  if (method == AverageMethod::quadrature) {
    const auto nodes = gaussian_product_rule(spec, static_cast<int>(order_or_samples));
    for (std::size_t i = 0; i < nodes.size(); ++i)
      accumulate(nodes[i].chi, nodes[i].delta, nodes[i].weight, i);
  } else {
    if (order_or_samples < 1)
      throw std::invalid_argument("average_population: sample count must be >= 1");
    GaussianSampler gauss(seed);
    const double w = 1.0 / static_cast<double>(order_or_samples);
    for (long long i = 0; i < order_or_samples; ++i) {
      const auto [chi, delta] = detail::sample_member(spec, gauss);
      accumulate(chi, delta, w, static_cast<std::size_t>(i));
    }
  }
  return out;
}

// Monte Carlo average with per-point standard errors (the brute-force cross
// check for the quadrature path).
template <typename Evaluator>
std::pair<TimedTrace, std::vector<double>> montecarlo_average_se(
    const std::vector<double>& times, const EnsembleSpec& spec, Evaluator&& evaluator,
    long long samples, std::uint64_t seed) {
  spec.validate();
  if (samples < 2)
    throw std::invalid_argument("montecarlo_average_se: need at least 2 samples");
  TimedTrace mean;
  mean.times = times;
  mean.values.assign(times.size(), 0.0);
  std::vector<double> sumsq(times.size(), 0.0);
  GaussianSampler gauss(seed);
  for (long long i = 0; i < samples; ++i) {
    const auto [chi, delta] = detail::sample_member(spec, gauss);
    const std::vector<double> vals = evaluator(chi, delta);
    for (std::size_t k = 0; k < vals.size(); ++k) {
      mean.values[k] += vals[k];
      sumsq[k] += vals[k] * vals[k];
    }
  }
  const double n = static_cast<double>(samples);
  std::vector<double> se(times.size(), 0.0);
  for (std::size_t k = 0; k < se.size(); ++k) {
    mean.values[k] /= n;
    const double var = std::max(0.0, sumsq[k] / n - mean.values[k] * mean.values[k]);
    se[k] = std::sqrt(var / (n - 1.0));
  }
  return {std::move(mean), std::move(se)};
}

// Ensemble-averaged closed-form population on a time grid.  On uniform grids
// the oscillatory node sum runs through a Chebyshev cosine recurrence, which
// keeps the six-parameter fit loop cheap.
inline std::vector<double> averaged_torrey_population(const std::vector<double>& times,
                                                      const EnsembleSpec& spec,
                                                      const DecayRates& decay,
                                                      int quad_order = 21,
                                                      bool exact = true) {
  const auto nodes = gaussian_product_rule(spec, quad_order);
  const std::size_t nt = times.size();
  std::vector<double> out(nt, 0.0);
  if (nt == 0) return out;

  const double g1 = decay.gamma1, g2 = decay.gamma2;

  // Per-node constants: population =
  //   a * e^{-g2 t} + c * e^{-(2 g1/3 + g2) t} - b * cos(Omega t) e^{-(g1+g2) t}
  std::size_t m = nodes.size();
  std::vector<double> omega(m), bcoef(m);
  double a_sum = 0.0, c_sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double o2 = nodes[i].chi * nodes[i].chi + nodes[i].delta * nodes[i].delta;
    const double d = nodes[i].delta * nodes[i].delta / o2;
    omega[i] = std::sqrt(o2);
    bcoef[i] = 0.5 * nodes[i].weight * (1.0 - d);       // chi^2/Omega^2 / 2
    if (exact) {
      a_sum += nodes[i].weight * 0.5 * (1.0 - 2.0 * d);
      c_sum += nodes[i].weight * 0.5 * d;
    } else {
      a_sum += nodes[i].weight * 0.5;
    }
  }

  bool uniform = nt >= 3;
  const double dt = nt >= 2 ? (times.back() - times.front()) / static_cast<double>(nt - 1) : 0.0;
  if (uniform) {
    for (std::size_t k = 0; k < nt; ++k)
      if (std::abs(times[k] - (times.front() + dt * static_cast<double>(k))) >
          1e-6 * std::max(dt, 1e-300)) {
        uniform = false;
        break;
      }
  }

  const auto envelopes = [&](double t, double& e2, double& e23, double& e12) {
    e2 = std::exp(-g2 * t);
    e23 = exact ? std::exp(-(2.0 * g1 / 3.0 + g2) * t) : 0.0;
    e12 = std::exp(-(g1 + g2) * t);
  };

  if (uniform && dt > 0.0) {
    std::vector<double> cur(m), prev(m), step2(m);
    const double t0 = times.front();
    for (std::size_t i = 0; i < m; ++i) {
      cur[i] = std::cos(omega[i] * t0);
      prev[i] = std::cos(omega[i] * (t0 - dt));
      step2[i] = 2.0 * std::cos(omega[i] * dt);
    }
    for (std::size_t k = 0; k < nt; ++k) {
      double osc = 0.0;
      for (std::size_t i = 0; i < m; ++i) osc += bcoef[i] * cur[i];
      double e2, e23, e12;
      envelopes(times[k], e2, e23, e12);
      out[k] = a_sum * e2 + c_sum * e23 - osc * e12;
      for (std::size_t i = 0; i < m; ++i) {
        const double next = step2[i] * cur[i] - prev[i];
        prev[i] = cur[i];
        cur[i] = next;
      }
    }
  } else {
    for (std::size_t k = 0; k < nt; ++k) {
      double osc = 0.0;
      for (std::size_t i = 0; i < m; ++i) osc += bcoef[i] * std::cos(omega[i] * times[k]);
      double e2, e23, e12;
      envelopes(times[k], e2, e23, e12);
      out[k] = a_sum * e2 + c_sum * e23 - osc * e12;
    }
  }
  for (auto& v : out) {
    if (v < -1e-9 || v > 1.0 + 1e-9)
      throw std::runtime_error("averaged_torrey_population: result outside [0,1]");
    v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

// S(t) = S1 * Pi1(t) + S0 plus i.i.d. Gaussian noise; deterministic per seed.
inline TimedTrace synthesize_signal(const TimedTrace& population, const SignalModel& model,
                                    std::uint64_t seed = 0) {
  population.validate();
  model.validate();
  TimedTrace out = population;
  GaussianSampler gauss(seed);
  for (auto& v : out.values) {
    v = model.s1 * v + model.s0;
    if (model.noise_sigma > 0.0) v += model.noise_sigma * gauss();
  }
  return out;
}

// Ensemble average of the full sequence dynamics (evolve_sequence per member)
// on a grid that always contains the segment boundaries.
inline TimedTrace average_sequence_population(
    const PulseSequence& seq, const EnsembleSpec& spec, const DecayRates& decay,
    AverageMethod method = AverageMethod::quadrature, long long order_or_samples = 21,
    std::uint64_t seed = 0, double samples_per_period = 200.0,
    const EvolveOptions& opt = {}) {
  spec.validate();
  const std::vector<double> grid = sequence_sample_grid(seq, samples_per_period, spec.chi0);
  const BlochState initial = state_from_logical(0);
  const double chi_nominal = seq.segments.empty() ? spec.chi0 : seq.nominal_rabi();
  auto evaluator = [&](double chi, double delta) {
    const MemberDrive member{chi / chi_nominal, delta};
    return evolve_sequence_traced(initial, seq, member, decay, grid, opt).trace.values;
  };
  TimedTrace out = average_population(grid, spec, evaluator, method, order_or_samples, seed);
  for (auto& v : out.values) {
    if (v < -1e-9 || v > 1.0 + 1e-9)
      throw std::runtime_error("average_sequence_population: result outside [0,1]");
    v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

}  // namespace blochsim
