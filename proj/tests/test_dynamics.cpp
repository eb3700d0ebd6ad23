#include <cmath>
#include <random>

#include "blochsim/core.hpp"
#include "blochsim/dynamics.hpp"
#include "blochsim/leakage.hpp"
#include "blochsim/sequences.hpp"
#include "blochsim/units.hpp"
#include "doctest.h"

using namespace blochsim;

namespace {

const double kChi0 = khz_to_angular(27.78);
const DecayRates kPaperDecay{90.9, 90.9};

double bloch_norm(const BlochState& s) { return norm(Vec3{s.u, s.v, s.w}); }

}  // namespace

TEST_CASE("torrey_inversion closed form") {
  const DriveParams drive{kChi0, 0.1 * kChi0};
  CHECK(torrey_inversion(0.0, drive, 123.0) == doctest::Approx(1.0).epsilon(1e-12));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double chi = 0.5 + u(rng);
    const double t = u(rng) * 20.0;
    CHECK(torrey_inversion(t, {chi, 0.0}, 0.0) ==
          doctest::Approx(std::cos(chi * t)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(torrey_inversion(1.0, {0.0, 0.0}, 0.0), std::domain_error);
}

TEST_CASE("torrey_inversion matches the Bloch ODE with the documented sign map") {
  // Oracle: fixed-step RK4 at dt = 1e-4 * 2pi/chi (step_factor 1e4).
  const DriveParams drive{kChi0, 0.1 * kChi0};
  const double gamma1 = 90.9;
  const PulseSegment seg{1.0e-3, drive.rabi, 0.0, drive.detuning};
  const BlochState end =
      evolve_bloch(state_from_logical(0), seg, 0.0, {gamma1, 0.0}, {1.0e4});
  const double closed = torrey_inversion(1.0e-3, drive, gamma1);
  CHECK(std::abs(-end.w - closed) < 5.0e-3);
}

TEST_CASE("torrey_population limits") {
  const double chi = kChi0;
  CHECK(torrey_population(pi / chi, {chi, 0.0}, {0.0, 0.0}, true) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(torrey_population(0.0, {chi, 0.0}, {0.0, 0.0}, true) ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(torrey_population(1.0, {0.0, 0.0}, {0.0, 0.0}, true),
                  std::domain_error);
}

TEST_CASE("torrey_population lossless limit reduces to the Rabi formula") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const DriveParams d{0.3 + u(rng), (u(rng) - 0.5) * 2.0};
    const double t = u(rng) * 30.0;
    const double omega = d.generalized_rabi();
    const double expected =
        (d.rabi * d.rabi) / (omega * omega) * std::sin(omega * t / 2.0) *
        std::sin(omega * t / 2.0);
    CHECK(torrey_population(t, d, {0.0, 0.0}, true) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("exact vs approximate population differ at the 1e-3 scale") {
  const DriveParams drive{kChi0, 0.1 * kChi0};
  double max_diff = 0.0;
  for (int i = 0; i <= 6000; ++i) {
    const double t = 3.0e-3 * i / 6000.0;
    const double exact = torrey_population(t, drive, kPaperDecay, true);
    const double approx = torrey_population(t, drive, kPaperDecay, false);
    max_diff = std::max(max_diff, std::abs(exact - approx));
  }
  CHECK(max_diff <= 5.0e-3);
  CHECK(max_diff >= 1.0e-4);
}

TEST_CASE("evolve_bloch: lossless pi pulse flips the qubit") {
  const PulseSegment seg{pi, 1.0, 0.0, 0.0};
  const BlochState end = evolve_bloch(state_from_logical(0), seg, 0.0, {}, {2000.0});
  CHECK(std::abs(end.u) < 1e-9);
  CHECK(std::abs(end.v) < 1e-9);
  CHECK(end.w == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(end.p == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("evolve_bloch: free decay drains only the total population") {
  const PulseSegment seg{2.0e-3, 0.0, 0.0, 0.0};
  const DecayRates decay{0.0, 250.0};
  const BlochState end = evolve_bloch(state_from_logical(0), seg, 0.0, decay);
  CHECK(end.u == doctest::Approx(0.0));
  CHECK(end.v == doctest::Approx(0.0));
  CHECK(end.w == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(end.p == doctest::Approx(std::exp(-250.0 * 2.0e-3)).epsilon(1e-10));
}

TEST_CASE("evolve_bloch rejects non-finite input") {
  PulseSegment seg{1.0, 1.0, 0.0, 0.0};
  BlochState bad = state_from_logical(0);
  bad.u = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(evolve_bloch(bad, seg, 0.0, {}), std::invalid_argument);
  seg.duration = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(evolve_bloch(state_from_logical(0), seg, 0.0, {}),
                  std::invalid_argument);
}

TEST_CASE("resonant Rabi oscillation reproduces the exact closed form") {
  // Cross-oracle: ODE against the exact closed-form population over 3 ms.
  const DriveParams drive{kChi0, 0.1 * kChi0};
  const PulseSegment seg{3.0e-3, drive.rabi, 0.0, drive.detuning};
  std::vector<double> samples;
  for (int i = 0; i <= 600; ++i) samples.push_back(3.0e-3 * i / 600.0);
  const EvolveResult res = evolve_bloch_traced(state_from_logical(0), seg, 0.0,
                                               kPaperDecay, samples, {200.0});
  double max_diff = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double closed = torrey_population(samples[i], drive, kPaperDecay, true);
    max_diff = std::max(max_diff, std::abs(closed - res.trace.values[i]));
  }
  CHECK(max_diff < 5.0e-3);
}

TEST_CASE("lossless evolution conserves the Bloch norm and population") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const PulseSegment seg{u(rng) * 4.0 * pi, 1.0, u(rng) * two_pi,
                           (u(rng) - 0.5) * 0.8};
    BlochState s{0.3, -0.2, std::sqrt(1.0 - 0.13), 1.0};
    const double n0 = bloch_norm(s);
    const BlochState e = evolve_bloch(s, seg, 0.0, {}, {2000.0});
    CHECK(std::abs(bloch_norm(e) - n0) < 1e-9);
    CHECK(std::abs(e.p - 1.0) < 1e-12);
  }
}

TEST_CASE("evolve_sequence equals composed ideal rotations when lossless") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    PulseSequence seq;
    const int nseg = 1 + static_cast<int>(u(rng) * 3.0);
    for (int k = 0; k < nseg; ++k)
      seq.segments.push_back({u(rng) * two_pi, 1.0, u(rng) * two_pi, 0.0});
    const MemberDrive member{0.8 + 0.4 * u(rng), (u(rng) - 0.5) * 0.6};

    const BlochState ode =
        evolve_sequence(state_from_logical(0), seq, member, {}, {2000.0});
    const Rotation composed =
        sequence_rotation(seq, member.rabi_scale, member.detuning);
    const Vec3 expected = composed.apply(Vec3{0.0, 0.0, -1.0});
    CHECK(std::abs(ode.u - expected[0]) < 1e-9);
    CHECK(std::abs(ode.v - expected[1]) < 1e-9);
    CHECK(std::abs(ode.w - expected[2]) < 1e-9);
  }
}

TEST_CASE("segment detuning offsets add to the member detuning") {
  const PulseSegment offset_seg{2.0e-4, kChi0, 0.3, 0.05 * kChi0};
  PulseSegment plain_seg = offset_seg;
  plain_seg.detuning_offset = 0.0;
  const BlochState via_offset =
      evolve_bloch(state_from_logical(0), offset_seg, 0.02 * kChi0, kPaperDecay);
  const BlochState via_member =
      evolve_bloch(state_from_logical(0), plain_seg, 0.07 * kChi0, kPaperDecay);
  CHECK(via_offset.u == doctest::Approx(via_member.u).epsilon(1e-14));
  CHECK(via_offset.v == doctest::Approx(via_member.v).epsilon(1e-14));
  CHECK(via_offset.w == doctest::Approx(via_member.w).epsilon(1e-14));
}

TEST_CASE("empty sequence leaves the state unchanged") {
  const BlochState s{0.1, 0.2, -0.5, 0.9};
  const BlochState e = evolve_sequence(s, PulseSequence{}, {}, kPaperDecay);
  CHECK(e.u == s.u);
  CHECK(e.v == s.v);
  CHECK(e.w == s.w);
  CHECK(e.p == s.p);
}

TEST_CASE("CORPSE pi on resonance is an exact flip") {
  const PulseSequence seq = corpse(pi, kChi0);
  const BlochState e = evolve_sequence(state_from_logical(0), seq, {}, {}, {2000.0});
  CHECK(std::abs(e.u) < 1e-9);
  CHECK(std::abs(e.v) < 1e-9);
  CHECK(e.w == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("CORPSE pi at f = 0.3 matches the rotation-composition oracle") {
  const PulseSequence seq = corpse(pi, kChi0);
  const double detuning = 0.3 * kChi0;
  const BlochState ode = evolve_sequence(state_from_logical(0), seq,
                                         {1.0, detuning}, {}, {2000.0});
  const Rotation composed = sequence_rotation(seq, 1.0, detuning);
  const Vec3 expected = composed.apply(Vec3{0.0, 0.0, -1.0});
  CHECK(std::abs(ode.u - expected[0]) < 1e-9);
  CHECK(std::abs(ode.v - expected[1]) < 1e-9);
  CHECK(std::abs(ode.w - expected[2]) < 1e-9);

  // Fig.-5-style behavior: despite the large detuning the final population is
  // close to one, far above the plain pulse's.
  const double pi1 = ode.pi1();
  CHECK(pi1 > 0.99);
  const BlochState plain = evolve_sequence(
      state_from_logical(0), plain_pulse(pi, 0.0, kChi0), {1.0, detuning}, {});
  CHECK(pi1 > plain.pi1());
}

TEST_CASE("trace grid hits segment boundaries exactly") {
  const PulseSequence seq = corpse(pi, kChi0);
  const auto grid = sequence_sample_grid(seq, 50.0);
  double boundary = 0.0;
  for (const auto& seg : seq.segments) {
    boundary += seg.duration;
    bool found = false;
    for (double t : grid)
      if (std::abs(t - boundary) < 1e-18 + 1e-12 * boundary) found = true;
    CHECK(found);
  }
  const EvolveResult res = evolve_sequence_traced(
      state_from_logical(0), seq, {1.0, 0.3 * kChi0}, {}, grid);
  CHECK(res.trace.times.size() == grid.size());
  res.trace.validate();
}

TEST_CASE("halving the ODE step moves populations by less than 1e-8") {
  const PulseSegment seg{pi / kChi0, kChi0, 0.0, 0.1 * kChi0};
  std::vector<double> samples;
  for (int i = 0; i <= 100; ++i) samples.push_back(pi / kChi0 * i / 100.0);
  const EvolveResult coarse = evolve_bloch_traced(state_from_logical(0), seg, 0.0,
                                                  kPaperDecay, samples, {200.0});
  const EvolveResult fine = evolve_bloch_traced(state_from_logical(0), seg, 0.0,
                                                kPaperDecay, samples, {400.0});
  double max_diff = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    max_diff = std::max(max_diff,
                        std::abs(coarse.trace.values[i] - fine.trace.values[i]));
  CHECK(max_diff < 1e-8);
}

TEST_CASE("leakage: no channels means no leaked population") {
  const auto res = leakage_populations(kChi0, 18.0e-6, {});
  CHECK(res.max_combined == 0.0);
  CHECK(res.final_combined == 0.0);
  for (double v : res.combined.values) CHECK(v == 0.0);
  // Even with coarse steps relative to the sample grid the recorded trace
  // must stay strictly increasing in time.
  res.combined.validate();
}

TEST_CASE("leakage: single channel without qubit drive is off-resonant Rabi") {
  const double chi = khz_to_angular(3.0);
  const double delta = khz_to_angular(130.0);
  const double omega = std::hypot(chi, delta);
  // Run long enough to reach the first population maximum.
  const auto res = leakage_populations(0.0, pi / omega * 2.5, {{chi, delta, ""}},
                                       400.0);
  const double expected = chi * chi / (omega * omega);
  CHECK(res.max_combined == doctest::Approx(expected).epsilon(1e-4));
}

TEST_CASE("leakage at the benchmark channel parameters") {
  const std::vector<LeakageChannel> channels = {
      {khz_to_angular(3.0), khz_to_angular(130.0), "F4m2"},
      {khz_to_angular(3.0), khz_to_angular(260.0), "F4m3"}};
  const auto res = leakage_populations(kChi0, pi / kChi0, channels);
  CHECK(res.max_combined > 3.5e-4);
  CHECK(res.max_combined < 1.4e-3);

  // Perturbative sanity bound.
  double bound = 0.0;
  for (const auto& ch : channels)
    bound += ch.rabi * ch.rabi / (ch.rabi * ch.rabi + ch.detuning * ch.detuning);
  CHECK(res.max_combined <= 1.1 * bound);

  // Doubling the detunings (stronger bias field) suppresses roughly 4x.
  const std::vector<LeakageChannel> doubled = {
      {khz_to_angular(3.0), khz_to_angular(260.0), ""},
      {khz_to_angular(3.0), khz_to_angular(520.0), ""}};
  const auto res2 = leakage_populations(kChi0, pi / kChi0, doubled);
  const double ratio = res.max_combined / res2.max_combined;
  CHECK(ratio > 3.0);
  CHECK(ratio < 5.0);
}

TEST_CASE("leakage input validation") {
  CHECK_THROWS_AS(leakage_populations(kChi0, 0.0, {}), std::invalid_argument);
  CHECK_THROWS_AS(
      leakage_populations(kChi0, 1e-5, {{-1.0, khz_to_angular(100.0), ""}}),
      std::invalid_argument);
}
