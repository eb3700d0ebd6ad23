#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace blochsim {

// Uniformly handled time series: population, inversion or signal samples.
// Serializes to two-column CSV with a `# key=value` comment header.
struct TimedTrace {
  std::vector<double> times;   // s, strictly increasing, times[0] >= 0
  std::vector<double> values;  // dimensionless
  std::vector<std::pair<std::string, std::string>> meta;

  std::size_t size() const { return times.size(); }

  void validate() const {
    if (times.size() != values.size())
      throw std::invalid_argument("TimedTrace: times/values length mismatch");
    if (!times.empty() && times.front() < 0.0)
      throw std::invalid_argument("TimedTrace: times must start at >= 0");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1]))
        throw std::invalid_argument("TimedTrace: times must be strictly increasing");
  }
};

// Shortest representation that parses back bit-exactly; the same bytes come
// out on every run.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  if (std::strtod(buf, nullptr) != x) std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_trace_csv(std::ostream& out, const TimedTrace& trace,
                            const std::string& value_label = "value") {
  for (const auto& [k, v] : trace.meta) out << "# " << k << "=" << v << "\n";
  out << "time_s," << value_label << "\n";
  for (std::size_t i = 0; i < trace.times.size(); ++i)
    out << format_double(trace.times[i]) << "," << format_double(trace.values[i]) << "\n";
}

inline void write_trace_csv(const std::string& path, const TimedTrace& trace,
                            const std::string& value_label = "value") {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_trace_csv(out, trace, value_label);
}

inline TimedTrace read_trace_csv(std::istream& in) {
  TimedTrace trace;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      std::string body = line.substr(1);
      const auto start = body.find_first_not_of(' ');
      if (start == std::string::npos) continue;
      body = body.substr(start);
      const auto eq = body.find('=');
      if (eq != std::string::npos)
        trace.meta.emplace_back(body.substr(0, eq), body.substr(eq + 1));
      continue;
    }
    if (!header_seen) {  // column header row
      header_seen = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("trace CSV: malformed row: " + line);
    try {
      trace.times.push_back(std::stod(line.substr(0, comma)));
      trace.values.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw std::runtime_error("trace CSV: non-numeric row: " + line);
    }
  }
  trace.validate();
  return trace;
}

inline TimedTrace read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file: " + path);
  return read_trace_csv(in);
}

inline double trace_meta_value(const TimedTrace& trace, const std::string& key,
                               bool& found) {
  for (const auto& [k, v] : trace.meta)
    if (k == key) {
      found = true;
      return std::stod(v);
    }
  found = false;
  return 0.0;
}

}  // namespace blochsim
