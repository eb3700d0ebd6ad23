#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace blochsim {

// Physicists' Gauss-Hermite rule: sum_i w_i f(x_i) ~ int e^{-x^2} f(x) dx,
// exact for polynomials up to degree 2n-1.  Weights sum to sqrt(pi).
struct QuadratureRule {
  std::vector<double> nodes;    // ascending
  std::vector<double> weights;
};

inline QuadratureRule gauss_hermite(int order) {
  if (order < 1)
    throw std::invalid_argument("gauss_hermite: order must be >= 1");
  const int n = order;
  QuadratureRule rule;
  rule.nodes.assign(n, 0.0);
  rule.weights.assign(n, 0.0);

  constexpr double pim4 = 0.7511255444649425;  // pi^{-1/4}
  constexpr double eps = 1e-14;
  constexpr int max_newton = 100;
  const int m = (n + 1) / 2;

  std::vector<double> root(m, 0.0);  // positive roots, descending
  double z = 0.0;
  for (int i = 0; i < m; ++i) {
    // Asymptotic first guesses, refined from previously found roots.
    if (i == 0)
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -1.0 / 6.0);
    else if (i == 1)
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    else if (i == 2)
      z = 1.86 * z - 0.86 * root[0];
    else if (i == 3)
      z = 1.91 * z - 0.91 * root[1];
    else
      z = 2.0 * z - root[i - 2];

    double pp = 0.0;
    int it = 0;
    for (; it < max_newton; ++it) {
      // Orthonormal Hermite recurrence; stable for large order.
      double p1 = pim4, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1.0)) * p2 -
             std::sqrt(static_cast<double>(j) / (j + 1.0)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z_old = z;
      z = z_old - p1 / pp;
      if (std::abs(z - z_old) <= eps) break;
    }
    if (it >= max_newton)
      throw std::runtime_error("gauss_hermite: Newton iteration did not converge");
    root[i] = z;
    const double w = 2.0 / (pp * pp);
    rule.nodes[n - 1 - i] = z;
    rule.nodes[i] = -z;
    rule.weights[n - 1 - i] = w;
    rule.weights[i] = w;
  }
  return rule;
}

// Nodes/weights for averaging over N(mean, sigma): weights sum to 1, nodes at
// mean + sqrt(2) sigma x_i.  sigma = 0 collapses to the mean with weight 1.
inline QuadratureRule normal_rule(double mean, double sigma, int order) {
  if (sigma < 0.0)
    throw std::invalid_argument("normal_rule: sigma must be nonnegative");
  QuadratureRule out;
  if (sigma == 0.0) {
    out.nodes.push_back(mean);
    out.weights.push_back(1.0);
    return out;
  }
  const QuadratureRule gh = gauss_hermite(order);
  constexpr double inv_sqrt_pi = 0.5641895835477563;
  const double s = std::sqrt(2.0) * sigma;
  out.nodes.reserve(gh.nodes.size());
  out.weights.reserve(gh.nodes.size());
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
    out.nodes.push_back(mean + s * gh.nodes[i]);
    out.weights.push_back(gh.weights[i] * inv_sqrt_pi);
  }
  return out;
}

}  // namespace blochsim
