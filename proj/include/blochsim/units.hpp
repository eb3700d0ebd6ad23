#pragma once

#include <numbers>

namespace blochsim {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * pi;

// All frequencies and rates are angular (rad/s) inside the library.  External
// interfaces quote cyclic kHz; these helpers are the only conversion points.
constexpr double khz_to_angular(double khz) { return two_pi * 1.0e3 * khz; }
constexpr double angular_to_khz(double w) { return w / (two_pi * 1.0e3); }
constexpr double hz_to_angular(double hz) { return two_pi * hz; }
constexpr double angular_to_hz(double w) { return w / two_pi; }

}  // namespace blochsim
