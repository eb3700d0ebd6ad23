#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "blochsim/units.hpp"

namespace blochsim {

using Vec3 = std::array<double, 3>;

inline double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}

inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

// Pseudospin state of a single ensemble member.  The inversion convention is
// w = Pi1 - Pi0 on the surviving population, so logical |0> sits at the south
// pole (w = -1).  p is the total two-level population and decays at gamma2.
struct BlochState {
  double u = 0.0;
  double v = 0.0;
  double w = -1.0;
  double p = 1.0;

  double pi1() const { return p * (1.0 + w) / 2.0; }
  double pi0() const { return p * (1.0 - w) / 2.0; }
  Vec3 vector() const { return {u, v, w}; }
};

inline BlochState state_from_logical(int bit) {
  if (bit != 0 && bit != 1)
    throw std::invalid_argument("state_from_logical: bit must be 0 or 1");
  BlochState s;
  s.w = bit ? 1.0 : -1.0;
  return s;
}

// Homogeneous relaxation.  gamma1 = 3/(4 T1) damps the pseudospin; gamma2
// drains the total two-level population.  T2' = 2 T1 is fixed throughout
// (closed two-level system subject only to optical pumping).
struct DecayRates {
  double gamma1 = 0.0;  // 1/s
  double gamma2 = 0.0;  // 1/s

  double t1() const { return 3.0 / (4.0 * gamma1); }
  double t2_prime() const { return 2.0 * t1(); }
  // Rate forms stay finite at gamma1 = 0.
  double rate_t1() const { return 4.0 * gamma1 / 3.0; }
  double rate_t2_prime() const { return 2.0 * gamma1 / 3.0; }
  bool lossless() const { return gamma1 == 0.0 && gamma2 == 0.0; }

  static DecayRates from_coherence_time(double tau_d) {
    if (!(tau_d > 0.0))
      throw std::invalid_argument("DecayRates: coherence time must be positive");
    const double g = 1.0 / (2.0 * tau_d);
    return {g, g};
  }
};

// One piecewise-constant slice of a drive waveform.
struct PulseSegment {
  double duration = 0.0;         // s, >= 0
  double rabi = 0.0;             // rad/s, >= 0
  double phase = 0.0;            // rad, stored unreduced
  double detuning_offset = 0.0;  // rad/s, added to the member detuning
};

struct PulseSequence {
  std::vector<PulseSegment> segments;
  std::string label;

  double total_duration() const {
    double t = 0.0;
    for (const auto& seg : segments) t += seg.duration;
    return t;
  }

  // The constructors in sequences.hpp all emit uniform-amplitude sequences,
  // so the first segment carries the nominal Rabi frequency.
  double nominal_rabi() const {
    if (segments.empty())
      throw std::logic_error("PulseSequence: empty sequence has no nominal Rabi rate");
    return segments.front().rabi;
  }
};

// Proper rotation stored as a unit quaternion.  Composition keeps the SU(2)
// sign, which the propagator-overlap fidelity in sequences.hpp relies on.
class Rotation {
 public:
  Rotation() = default;

  static Rotation from_axis_angle(const Vec3& axis, double angle) {
    const double n = norm(axis);
    if (std::abs(n - 1.0) > 1e-9)
      throw std::invalid_argument("Rotation: axis must be a unit vector");
    const double h = 0.5 * angle;
    const double s = std::sin(h) / n;
    return Rotation(std::cos(h), s * axis[0], s * axis[1], s * axis[2]);
  }

  double angle() const { return 2.0 * std::atan2(vector_norm(), qw_); }

  Vec3 axis() const {
    const double n = vector_norm();
    if (n == 0.0) return {1.0, 0.0, 0.0};  // identity: any axis
    return {qx_ / n, qy_ / n, qz_ / n};
  }

  Vec3 apply(const Vec3& r) const {
    // v' = v + 2 q x (q x v + qw v)
    const Vec3 q{qx_, qy_, qz_};
    const Vec3 qxr = cross(q, r);
    const Vec3 inner{qxr[0] + qw_ * r[0], qxr[1] + qw_ * r[1], qxr[2] + qw_ * r[2]};
    const Vec3 t = cross(q, inner);
    return {r[0] + 2.0 * t[0], r[1] + 2.0 * t[1], r[2] + 2.0 * t[2]};
  }

  BlochState apply(const BlochState& s) const {
    const Vec3 r = apply(Vec3{s.u, s.v, s.w});
    return {r[0], r[1], r[2], s.p};
  }

  std::array<Vec3, 3> matrix() const {
    const double w = qw_, x = qx_, y = qy_, z = qz_;
    return {Vec3{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
            Vec3{2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
            Vec3{2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
  }

  Rotation inverse() const { return Rotation(qw_, -qx_, -qy_, -qz_); }

  // 4-component quaternion dot product.  For the corresponding SU(2)
  // propagators, |dot| = |Tr(U1^dag U2)| / 2.
  double quaternion_dot(const Rotation& o) const {
    return qw_ * o.qw_ + qx_ * o.qx_ + qy_ * o.qy_ + qz_ * o.qz_;
  }

  friend Rotation compose(const Rotation& first, const Rotation& second);

 private:
  Rotation(double w, double x, double y, double z) : qw_(w), qx_(x), qy_(y), qz_(z) {}

  double vector_norm() const {
    return std::sqrt(qx_ * qx_ + qy_ * qy_ + qz_ * qz_);
  }

  void renormalize() {
    const double n = std::sqrt(qw_ * qw_ + qx_ * qx_ + qy_ * qy_ + qz_ * qz_);
    qw_ /= n;
    qx_ /= n;
    qy_ /= n;
    qz_ /= n;
  }

  double qw_ = 1.0, qx_ = 0.0, qy_ = 0.0, qz_ = 0.0;
};

// Applies `first`, then `second` (quaternion product second * first).
inline Rotation compose(const Rotation& first, const Rotation& second) {
  const Rotation& a = second;
  const Rotation& b = first;
  Rotation r(a.qw_ * b.qw_ - a.qx_ * b.qx_ - a.qy_ * b.qy_ - a.qz_ * b.qz_,
             a.qw_ * b.qx_ + a.qx_ * b.qw_ + a.qy_ * b.qz_ - a.qz_ * b.qy_,
             a.qw_ * b.qy_ - a.qx_ * b.qz_ + a.qy_ * b.qw_ + a.qz_ * b.qx_,
             a.qw_ * b.qz_ + a.qx_ * b.qy_ - a.qy_ * b.qx_ + a.qz_ * b.qw_);
  r.renormalize();
  return r;
}

// Rotation axis of a constant drive: in-plane along the drive phase, tilted
// out of the equatorial plane by the detuning.
inline Vec3 rotation_axis(double rabi, double detuning, double phase) {
  if (rabi < 0.0)
    throw std::invalid_argument("rotation_axis: rabi must be nonnegative");
  const double omega = std::hypot(rabi, detuning);
  if (omega == 0.0) throw std::domain_error("no rotation axis defined");
  const double c = std::abs(rabi) / omega;
  return {c * std::cos(phase), c * std::sin(phase), detuning / omega};
}

inline Rotation ideal_rotation(const Vec3& axis, double angle) {
  return Rotation::from_axis_angle(axis, angle);
}

}  // namespace blochsim
