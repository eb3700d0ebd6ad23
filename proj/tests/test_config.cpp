#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "blochsim/config.hpp"
#include "blochsim/svg.hpp"
#include "blochsim/trace.hpp"
#include "blochsim/units.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace blochsim;
using nlohmann::json;

TEST_CASE("config defaults and full parse") {
  const RunConfig empty = parse_config(json::object());
  CHECK(empty.chi0 == doctest::Approx(khz_to_angular(27.78)));
  CHECK(empty.family == "plain");
  CHECK(empty.quad_order == 21);
  CHECK(empty.decay.lossless());

  const json full = {
      {"drive", {{"chi0_khz", 27.78}, {"delta0_khz", 0.5}}},
      {"ensemble", {{"dchi_rel", 0.003}, {"ddelta_rel", 0.073}}},
      {"decay", {{"tau_d_ms", 5.5}}},
      {"signal", {{"s1", 1.0}, {"s0", 0.1}, {"noise_sigma", 0.02}}},
      {"numerics",
       {{"quad_order", 15}, {"ode_step_factor", 100}, {"seed", 42}}},
      {"sequence",
       {{"family", "corpse"}, {"theta", pi}, {"deliberate_f", 0.1}}},
      {"leakage",
       {{"channels",
         json::array({{{"rabi_khz", 3.0}, {"detuning_khz", 130.0}, {"label", "a"}},
                      {{"rabi_khz", 3.0}, {"detuning_khz", 260.0}}})}}}};
  const RunConfig cfg = parse_config(full);
  CHECK(cfg.delta0 == doctest::Approx(khz_to_angular(0.5)));
  CHECK(cfg.decay.gamma1 == doctest::Approx(1.0 / (2.0 * 5.5e-3)));
  CHECK(cfg.decay.gamma2 == cfg.decay.gamma1);
  CHECK(cfg.signal.noise_sigma == 0.02);
  CHECK(cfg.quad_order == 15);
  REQUIRE(cfg.seed.has_value());
  CHECK(*cfg.seed == 42);
  CHECK(cfg.family == "corpse");
  CHECK(cfg.channels.size() == 2);
  CHECK(cfg.channels[0].rabi == doctest::Approx(khz_to_angular(3.0)));
  CHECK(cfg.channels[0].label == "a");

  const EnsembleSpec spec = cfg.ensemble_spec();
  CHECK(spec.delta0 == doctest::Approx(cfg.delta0 + 0.1 * cfg.chi0));
  CHECK(spec.dchi == doctest::Approx(0.003 * cfg.chi0));

  const PulseSequence seq = cfg.make_sequence();
  CHECK(seq.label == "corpse");
  CHECK(seq.segments.size() == 3);
}

TEST_CASE("unknown keys are rejected with the offending field named") {
  const auto expect_field = [](const json& j, const std::string& field) {
    try {
      parse_config(j);
      FAIL("expected ConfigError for ", field);
    } catch (const ConfigError& e) {
      CHECK(e.field() == field);
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  expect_field({{"drvie", json::object()}}, "drvie");
  expect_field({{"drive", {{"chi0_mhz", 1.0}}}}, "drive.chi0_mhz");
  expect_field({{"numerics", {{"workers", 4}}}}, "numerics.workers");
  expect_field({{"sequence", {{"family", "grape"}}}}, "sequence.family");
  expect_field({{"drive", {{"chi0_khz", -3.0}}}}, "drive.chi0_khz");
  expect_field({{"ensemble", {{"ddelta_rel", -0.1}}}}, "ensemble.ddelta_rel");
  expect_field({{"decay", {{"tau_d_ms", 5.5}, {"gamma1_hz", 90.0}}}}, "decay.tau_d_ms");
  expect_field({{"sequence", {{"theta", pi}, {"family", "scrofulous"}, {"repeats", 0}}}},
               "sequence.repeats");
}

TEST_CASE("seed is required once noise or Monte Carlo is on") {
  CHECK_THROWS_AS(parse_config({{"signal", {{"noise_sigma", 0.1}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config({{"numerics", {{"mc_samples", 1000}}}}), ConfigError);
  CHECK_NOTHROW(parse_config(
      {{"signal", {{"noise_sigma", 0.1}}}, {"numerics", {{"seed", 7}}}}));
}

TEST_CASE("trace CSV round-trip preserves data and metadata") {
  TimedTrace t;
  for (int i = 0; i < 50; ++i) {
    t.times.push_back(1.0e-6 * i);
    t.values.push_back(std::sin(0.37 * i) * 1e-4);
  }
  t.meta = {{"chi0_khz", "27.78"}, {"note", "round-trip"}};

  std::ostringstream buffer;
  write_trace_csv(buffer, t, "pi1");
  const std::string text = buffer.str();
  CHECK(text.find("# chi0_khz=27.78\n") != std::string::npos);
  CHECK(text.find("time_s,pi1\n") != std::string::npos);

  std::istringstream in(text);
  const TimedTrace back = read_trace_csv(in);
  REQUIRE(back.size() == t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(back.times[i] == t.times[i]);    // exact: %.12g round-trips these
    CHECK(back.values[i] == doctest::Approx(t.values[i]).epsilon(1e-12));
  }
  REQUIRE(back.meta.size() == 2);
  CHECK(back.meta[0].first == "chi0_khz");
  bool found = false;
  CHECK(trace_meta_value(back, "chi0_khz", found) == doctest::Approx(27.78));
  CHECK(found);
}

TEST_CASE("trace validation catches malformed series") {
  TimedTrace bad;
  bad.times = {0.0, 1.0, 1.0};
  bad.values = {0.0, 0.0, 0.0};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.times = {0.0, 1.0};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.times = {-1.0, 0.0, 1.0};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("svg writer emits a well-formed plot") {
  const auto path = std::filesystem::temp_directory_path() / "blochsim_svg_test.svg";
  SvgSeries s;
  s.name = "demo";
  for (int i = 0; i < 100; ++i) {
    s.x.push_back(i * 0.01);
    s.y.push_back(std::cos(i * 0.2));
  }
  write_svg_lineplot(path.string(), "demo plot", "x", "y", {s});
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string svg = ss.str();
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  std::filesystem::remove(path);
}
