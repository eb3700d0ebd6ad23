#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace blochsim {

struct LeastSquaresOptions {
  int max_iterations = 500;
  double ftol = 1e-10;  // relative objective decrease on near-Gauss-Newton steps
  double gtol = 1e-8;   // scaled gradient norm, relative to the objective
  double xtol = 1e-11;  // proposed step size relative to parameter scales
  double fd_rel_step = 1e-6;  // central-difference relative step
  std::vector<double> fd_floor;  // per-parameter absolute step floors
  double lambda0 = 1e-3;
};

struct LeastSquaresResult {
  std::vector<double> params;
  double rss = 0.0;
  bool converged = false;
  int iterations = 0;
  std::vector<double> covariance;         // p x p row-major, rss/(n-p) (J^T J)^-1
  std::vector<double> objective_history;  // accepted objective values
  std::string message;
};

namespace detail {

// Solves A x = b in place by Gaussian elimination with partial pivoting.
// Returns false when the system is numerically singular.
inline bool solve_dense(std::vector<double> a, std::vector<double> b, std::size_t p,
                        std::vector<double>& x) {
  std::vector<std::size_t> perm(p);
  for (std::size_t i = 0; i < p; ++i) perm[i] = i;
  for (std::size_t col = 0; col < p; ++col) {
    std::size_t pivot = col;
    double best = std::abs(a[perm[col] * p + col]);
    for (std::size_t r = col + 1; r < p; ++r) {
      const double v = std::abs(a[perm[r] * p + col]);
      if (v > best) {
        best = v;
        pivot = r;
      }
    }
    if (!(best > 0.0) || !std::isfinite(best)) return false;
    std::swap(perm[col], perm[pivot]);
    const double diag = a[perm[col] * p + col];
    for (std::size_t r = col + 1; r < p; ++r) {
      const double factor = a[perm[r] * p + col] / diag;
      if (factor == 0.0) continue;
      for (std::size_t c = col; c < p; ++c) a[perm[r] * p + c] -= factor * a[perm[col] * p + c];
      b[perm[r]] -= factor * b[perm[col]];
    }
  }
  x.assign(p, 0.0);
  for (std::size_t ri = p; ri-- > 0;) {
    double s = b[perm[ri]];
    for (std::size_t c = ri + 1; c < p; ++c) s -= a[perm[ri] * p + c] * x[c];
    x[ri] = s / a[perm[ri] * p + ri];
    if (!std::isfinite(x[ri])) return false;
  }
  return true;
}

inline double sum_squares(const std::vector<double>& r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return s;
}

}  // namespace detail

// Damped (Levenberg-Marquardt) iterative nonlinear least squares with a
// numerically estimated Jacobian.  The damping factor moves by 10x on
// reject/accept; convergence on relative objective change or gradient norm.
inline LeastSquaresResult levenberg_marquardt(
    const std::function<std::vector<double>(const std::vector<double>&)>& residual_fn,
    std::vector<double> params, const LeastSquaresOptions& opt = {}) {
  const std::size_t p = params.size();
  if (p == 0) throw std::invalid_argument("levenberg_marquardt: no parameters");

  LeastSquaresResult result;
  std::vector<double> r = residual_fn(params);
  const std::size_t n = r.size();
  if (n < p) throw std::invalid_argument("levenberg_marquardt: fewer residuals than parameters");
  double rss = detail::sum_squares(r);
  result.objective_history.push_back(rss);

  double lambda = opt.lambda0;
  std::vector<double> jac(n * p), jtj(p * p), g(p), step(p), trial(p);
  std::string why;
  bool converged = false;
  int iter = 0;
  int tiny_drops = 0;

  const auto scale_of = [&](std::size_t j) {
    // The floor keeps steps meaningful for parameters sitting at zero.
    double floor_j = j < opt.fd_floor.size() ? opt.fd_floor[j] : 0.0;
    return std::max({std::abs(params[j]), floor_j, 1.0});
  };

  for (; iter < opt.max_iterations && !converged; ++iter) {
    // Central-difference Jacobian.
    for (std::size_t j = 0; j < p; ++j) {
      const double h = opt.fd_rel_step * scale_of(j);
      trial = params;
      trial[j] = params[j] + h;
      const std::vector<double> rp = residual_fn(trial);
      trial[j] = params[j] - h;
      const std::vector<double> rm = residual_fn(trial);
      for (std::size_t i = 0; i < n; ++i) jac[i * p + j] = (rp[i] - rm[i]) / (2.0 * h);
    }
    // Normal equations pieces.
    for (std::size_t a = 0; a < p; ++a) {
      g[a] = 0.0;
      for (std::size_t i = 0; i < n; ++i) g[a] += jac[i * p + a] * r[i];
      for (std::size_t b = a; b < p; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += jac[i * p + a] * jac[i * p + b];
        jtj[a * p + b] = s;
        jtj[b * p + a] = s;
      }
    }
    // Stationarity in scaled units, relative to the objective: parameters of
    // wildly different magnitudes share one meaningful threshold.
    double g_rel = 0.0;
    for (std::size_t a = 0; a < p; ++a)
      g_rel = std::max(g_rel, std::abs(g[a]) * scale_of(a));
    g_rel /= std::max(rss, 1e-300);
    if (g_rel < opt.gtol) {
      converged = true;
      why = "scaled gradient below tolerance";
      break;
    }

    // Scale-normalized diagonal for the Marquardt damping; dead columns
    // (e.g. a spread parameter collapsed to zero) inherit a floor from the
    // live ones so their steps shrink with lambda like everything else.
    double dnorm_max = 1e-300;
    for (std::size_t a = 0; a < p; ++a)
      dnorm_max = std::max(dnorm_max, jtj[a * p + a] * scale_of(a) * scale_of(a));

    bool accepted = false;
    while (!accepted) {
      std::vector<double> damped = jtj;
      for (std::size_t a = 0; a < p; ++a) {
        const double floor_a = 1e-12 * dnorm_max / (scale_of(a) * scale_of(a));
        const double d = std::max(jtj[a * p + a], floor_a);
        damped[a * p + a] = jtj[a * p + a] + lambda * d;
      }
      std::vector<double> rhs(p);
      for (std::size_t a = 0; a < p; ++a) rhs[a] = -g[a];
      const bool ok = detail::solve_dense(damped, rhs, p, step);
      if (ok) {
        double step_rel = 0.0;
        for (std::size_t a = 0; a < p; ++a)
          step_rel = std::max(step_rel, std::abs(step[a]) / scale_of(a));
        if (step_rel < opt.xtol) {
          // Proposals this small cannot move the parameters meaningfully.
          converged = true;
          why = "step size below tolerance";
          break;
        }
        for (std::size_t a = 0; a < p; ++a) trial[a] = params[a] + step[a];
        const std::vector<double> r_new = residual_fn(trial);
        const double rss_new = detail::sum_squares(r_new);
        if (std::isfinite(rss_new) && rss_new < rss) {
          params = trial;
          r = r_new;
          const double drop = rss - rss_new;
          rss = rss_new;
          result.objective_history.push_back(rss);
          lambda = std::max(lambda / 10.0, 1e-14);
          accepted = true;
          // Declare convergence on a tiny improvement only in the
          // near-Gauss-Newton regime, or once such improvements persist: a
          // single micro-step accepted under heavy damping is not
          // stationarity, but a run of them is an exhausted descent.
          if (drop <= opt.ftol * std::max(rss, 1e-300)) {
            ++tiny_drops;
            if (lambda <= opt.lambda0 || tiny_drops >= 3) {
              converged = true;
              why = "relative objective change below tolerance";
            }
          } else {
            tiny_drops = 0;
          }
          break;
        }
      }
      lambda *= 10.0;
      if (lambda > 1e14) break;  // stalled at this Jacobian
    }
    if (converged || !accepted) {
      if (!converged && !accepted) why = "stalled: no downhill step found";
      break;
    }
  }
  if (!converged && why.empty()) why = "maximum iterations reached";

  // Covariance from the final Jacobian: rss/(n-p) * (J^T J)^{-1}.
  result.covariance.assign(p * p, 0.0);
  if (n > p) {
    const double variance = rss / static_cast<double>(n - p);
    std::vector<double> col(p), e(p);
    std::vector<double> inv(p * p, 0.0);
    bool invertible = true;
    for (std::size_t c = 0; c < p && invertible; ++c) {
      std::fill(e.begin(), e.end(), 0.0);
      e[c] = 1.0;
      invertible = detail::solve_dense(jtj, e, p, col);
      for (std::size_t rrow = 0; rrow < p; ++rrow) inv[rrow * p + c] = col[rrow];
    }
    if (invertible) {
      for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b)
          result.covariance[a * p + b] =
              variance * 0.5 * (inv[a * p + b] + inv[b * p + a]);
    }
  }

  result.params = std::move(params);
  result.rss = rss;
  result.converged = converged;
  result.iterations = iter;
  result.message = why;
  return result;
}

// Covariance rss/(n-p) (J^T J)^{-1} of `residual_fn` about `params`, with a
// scale-floored Tikhonov term: directions carrying no first-order information
// (e.g. a parameter pinned at a symmetric point) report a large finite
// variance instead of breaking the inverse or polluting the live directions.
inline std::vector<double> covariance_at(
    const std::function<std::vector<double>(const std::vector<double>&)>& residual_fn,
    const std::vector<double>& params, const std::vector<double>& fd_floor,
    double fd_rel_step = 1e-6) {
  const std::size_t p = params.size();
  const std::vector<double> r0 = residual_fn(params);
  const std::size_t n = r0.size();
  std::vector<double> cov(p * p, 0.0);
  if (n <= p) return cov;

  const auto scale_of = [&](std::size_t j) {
    const double floor_j = j < fd_floor.size() ? fd_floor[j] : 0.0;
    return std::max({std::abs(params[j]), floor_j, 1.0});
  };
  std::vector<double> jac(n * p), trial(p);
  for (std::size_t j = 0; j < p; ++j) {
    const double h = fd_rel_step * scale_of(j);
    trial = params;
    trial[j] = params[j] + h;
    const std::vector<double> rp = residual_fn(trial);
    trial[j] = params[j] - h;
    const std::vector<double> rm = residual_fn(trial);
    for (std::size_t i = 0; i < n; ++i) jac[i * p + j] = (rp[i] - rm[i]) / (2.0 * h);
  }
  std::vector<double> jtj(p * p, 0.0);
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = a; b < p; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += jac[i * p + a] * jac[i * p + b];
      jtj[a * p + b] = s;
      jtj[b * p + a] = s;
    }
  double dnorm_max = 1e-300;
  for (std::size_t a = 0; a < p; ++a)
    dnorm_max = std::max(dnorm_max, jtj[a * p + a] * scale_of(a) * scale_of(a));
  for (std::size_t a = 0; a < p; ++a)
    jtj[a * p + a] += 1e-10 * dnorm_max / (scale_of(a) * scale_of(a));

  double rss = 0.0;
  for (double v : r0) rss += v * v;
  const double variance = rss / static_cast<double>(n - p);
  std::vector<double> inv(p * p, 0.0), e(p), col(p);
  for (std::size_t c = 0; c < p; ++c) {
    std::fill(e.begin(), e.end(), 0.0);
    e[c] = 1.0;
    if (!detail::solve_dense(jtj, e, p, col)) return cov;
    for (std::size_t rrow = 0; rrow < p; ++rrow) inv[rrow * p + c] = col[rrow];
  }
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = 0; b < p; ++b)
      cov[a * p + b] = variance * 0.5 * (inv[a * p + b] + inv[b * p + a]);
  return cov;
}

}  // namespace blochsim
