#include <cmath>
#include <random>

#include "blochsim/core.hpp"
#include "blochsim/units.hpp"
#include "doctest.h"

using namespace blochsim;

namespace {

Vec3 random_unit(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  while (true) {
    Vec3 v{u(rng), u(rng), u(rng)};
    const double n = norm(v);
    if (n > 0.1 && n <= 1.0) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

double max_matrix_diff(const Rotation& a, const Rotation& b) {
  const auto ma = a.matrix(), mb = b.matrix();
  double d = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) d = std::max(d, std::abs(ma[i][j] - mb[i][j]));
  return d;
}

}  // namespace

TEST_CASE("rotation_axis basic directions") {
  const Vec3 a = rotation_axis(1.0, 0.0, 0.0);
  CHECK(a[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(a[1]) < 1e-12);
  CHECK(std::abs(a[2]) < 1e-12);

  const Vec3 b = rotation_axis(1.0, 0.0, pi / 2.0);
  CHECK(std::abs(b[0]) < 1e-12);
  CHECK(b[1] == doctest::Approx(1.0).epsilon(1e-12));

  const Vec3 c = rotation_axis(1.0, 1.0, 0.0);
  CHECK(c[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(std::abs(c[1]) < 1e-12);
  CHECK(c[2] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("rotation_axis degenerate input") {
  CHECK_THROWS_AS(rotation_axis(0.0, 0.0, 0.3), std::domain_error);
  CHECK_THROWS_AS(rotation_axis(-1.0, 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("rotation_axis with no drive points along the 3-axis") {
  const Vec3 up = rotation_axis(0.0, 2.5, 1.234);
  CHECK(up[0] == 0.0);
  CHECK(up[1] == 0.0);
  CHECK(up[2] == 1.0);
  const Vec3 down = rotation_axis(0.0, -2.5, 0.0);
  CHECK(down[2] == -1.0);
}

TEST_CASE("rotation_axis is unit and phase flip inverts in-plane part") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const double chi = u(rng) * 2.0;
    const double delta = (u(rng) - 0.5) * 2.0;
    const double phase = (u(rng) - 0.5) * 20.0;
    if (std::hypot(chi, delta) < 1e-6) continue;
    const Vec3 ax = rotation_axis(chi, delta, phase);
    CHECK(std::abs(norm(ax) - 1.0) < 1e-12);
    const Vec3 flipped = rotation_axis(chi, delta, phase + pi);
    CHECK(flipped[0] == doctest::Approx(-ax[0]).epsilon(1e-10));
    CHECK(flipped[1] == doctest::Approx(-ax[1]).epsilon(1e-10));
    CHECK(flipped[2] == doctest::Approx(ax[2]).epsilon(1e-12));
  }
}

TEST_CASE("ideal_rotation examples") {
  const Rotation flip = ideal_rotation({1.0, 0.0, 0.0}, pi);
  const Vec3 up = flip.apply(Vec3{0.0, 0.0, -1.0});
  CHECK(std::abs(up[0]) < 1e-12);
  CHECK(std::abs(up[1]) < 1e-12);
  CHECK(up[2] == doctest::Approx(1.0).epsilon(1e-12));

  const Rotation id = ideal_rotation({0.0, 1.0, 0.0}, 0.0);
  const auto m = id.matrix();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(m[i][j] == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-15));

  const Rotation z90 = ideal_rotation({0.0, 0.0, 1.0}, pi / 2.0);
  const Vec3 y = z90.apply(Vec3{1.0, 0.0, 0.0});
  CHECK(std::abs(y[0]) < 1e-12);
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(ideal_rotation({0.5, 0.0, 0.0}, 1.0), std::invalid_argument);
}

TEST_CASE("rotation preserves Bloch norm and p") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-pi, pi);
  for (int i = 0; i < 1000000; ++i) {
    const Vec3 axis = random_unit(rng);
    const double angle = u(rng) * 2.0;
    const Vec3 v = random_unit(rng);
    const Vec3 r = ideal_rotation(axis, angle).apply(v);
    if (std::abs(norm(r) - norm(v)) > 1e-12) {
      REQUIRE(std::abs(norm(r) - norm(v)) <= 1e-12);
    }
  }
  const BlochState s{0.2, -0.3, 0.5, 0.7};
  const BlochState rs = ideal_rotation({0.0, 1.0, 0.0}, 1.234).apply(s);
  CHECK(rs.p == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("compose order, identity and inverses") {
  const Rotation rx90 = ideal_rotation({1.0, 0.0, 0.0}, pi / 2.0);
  const Rotation rx180 = ideal_rotation({1.0, 0.0, 0.0}, pi);
  CHECK(max_matrix_diff(compose(rx90, rx90), rx180) < 1e-12);

  const Rotation r = ideal_rotation({0.0, 1.0, 0.0}, 0.787);
  CHECK(max_matrix_diff(compose(r, Rotation{}), r) < 1e-15);
  CHECK(max_matrix_diff(compose(r, r.inverse()), Rotation{}) < 1e-12);
}

TEST_CASE("resonant composite of (7/3, 5/3, 1/3) pi segments is a pi flip") {
  // On resonance the +x and -x axes coincide up to sign, so the three angles
  // collapse to a net pi rotation about the 1-axis.
  const Vec3 plus_x{1.0, 0.0, 0.0};
  const Vec3 minus_x{-1.0, 0.0, 0.0};
  Rotation total;
  total = compose(total, ideal_rotation(plus_x, pi / 3.0));
  total = compose(total, ideal_rotation(minus_x, 5.0 * pi / 3.0));
  total = compose(total, ideal_rotation(plus_x, 7.0 * pi / 3.0));
  CHECK(max_matrix_diff(total, ideal_rotation(plus_x, pi)) < 1e-12);
}

TEST_CASE("compose is associative") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-two_pi, two_pi);
  for (int i = 0; i < 500; ++i) {
    const Rotation a = ideal_rotation(random_unit(rng), u(rng));
    const Rotation b = ideal_rotation(random_unit(rng), u(rng));
    const Rotation c = ideal_rotation(random_unit(rng), u(rng));
    CHECK(max_matrix_diff(compose(compose(a, b), c), compose(a, compose(b, c))) < 1e-12);
  }
}

TEST_CASE("rotation matrices are proper orthogonal") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-two_pi, two_pi);
  for (int i = 0; i < 200; ++i) {
    const auto m = ideal_rotation(random_unit(rng), u(rng)).matrix();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += m[r][k] * m[c][k];
        CHECK(std::abs(s - (r == c ? 1.0 : 0.0)) < 1e-12);
      }
    const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                       m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                       m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    CHECK(det == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("logical states and population map") {
  const BlochState zero = state_from_logical(0);
  CHECK(zero.u == 0.0);
  CHECK(zero.v == 0.0);
  CHECK(zero.w == -1.0);
  CHECK(zero.p == 1.0);
  CHECK(zero.pi1() == 0.0);
  CHECK(zero.pi0() == 1.0);

  const BlochState one = state_from_logical(1);
  CHECK(one.w == 1.0);
  CHECK(one.pi1() == 1.0);

  CHECK_THROWS_AS(state_from_logical(2), std::invalid_argument);
}

TEST_CASE("decay rate conversions") {
  const DecayRates d{90.9, 45.0};
  CHECK(d.t1() == doctest::Approx(3.0 / (4.0 * 90.9)).epsilon(1e-15));
  CHECK(d.t2_prime() == doctest::Approx(2.0 * d.t1()).epsilon(1e-15));
  CHECK(d.rate_t1() * d.t1() == doctest::Approx(1.0).epsilon(1e-15));

  const DecayRates from_tau = DecayRates::from_coherence_time(5.5e-3);
  CHECK(from_tau.gamma1 == doctest::Approx(90.909090909).epsilon(1e-9));
  CHECK(from_tau.gamma2 == from_tau.gamma1);
  CHECK(DecayRates{}.lossless());
  CHECK_THROWS_AS(DecayRates::from_coherence_time(0.0), std::invalid_argument);
}

TEST_CASE("pulse sequence bookkeeping") {
  PulseSequence seq;
  seq.segments = {{1.0e-5, 2.0, 0.0, 0.0}, {2.0e-5, 2.0, pi, 0.0}};
  CHECK(seq.total_duration() == doctest::Approx(3.0e-5).epsilon(1e-15));
  CHECK(seq.nominal_rabi() == 2.0);
  CHECK_THROWS_AS(PulseSequence{}.nominal_rabi(), std::logic_error);
}

TEST_CASE("unit conversions match the 18 us pi-time benchmark") {
  const double chi0 = khz_to_angular(27.78);
  CHECK(pi / chi0 == doctest::Approx(18.0e-6).epsilon(1e-3));
  CHECK(angular_to_khz(chi0) == doctest::Approx(27.78).epsilon(1e-12));
}
