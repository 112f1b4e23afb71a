#include "sfilter/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace sfilter {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trajectory_to_csv(const Trajectory& traj) {
  std::string out = "t";
  const long n = traj.empty() ? 0 : traj.waypoints.front().q.size();
  for (long i = 1; i <= n; ++i) out += ",q_" + std::to_string(i);
  out += "\n";
  for (const auto& wp : traj.waypoints) {
    out += format_double(wp.t);
    for (long i = 0; i < wp.q.size(); ++i) out += "," + format_double(wp.q(i));
    out += "\n";
  }
  return out;
}

void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
  write_text_file(path, trajectory_to_csv(traj));
}

Trajectory trajectory_from_csv(const std::string& text, const std::string& behavior) {
  Trajectory traj;
  traj.behavior = behavior;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> values;
    std::istringstream row(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(row, cell, ',')) {
      try {
        size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used == 0) throw std::invalid_argument("empty");
        values.push_back(v);
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) continue;  // header line
    if (values.size() < 2) throw std::invalid_argument("trajectory row needs t and q");
    Trajectory::Waypoint wp;
    wp.t = values[0];
    wp.q.resize(static_cast<long>(values.size()) - 1);
    for (size_t i = 1; i < values.size(); ++i) wp.q(static_cast<long>(i) - 1) = values[i];
    traj.waypoints.push_back(std::move(wp));
  }
  traj.validate();
  return traj;
}

Trajectory read_trajectory_csv(const std::string& path, const std::string& behavior) {
  return trajectory_from_csv(read_text_file(path), behavior);
}

std::string trace_to_csv(const std::vector<TraceRow>& trace) {
  std::string out = "t";
  const long n = trace.empty() ? 0 : trace.front().q.size();
  for (long i = 1; i <= n; ++i) out += ",q_" + std::to_string(i);
  for (long i = 1; i <= n; ++i) out += ",v_" + std::to_string(i);
  out += ",h_min,nearest_pair,qp_status,event\n";
  for (const TraceRow& row : trace) {
    out += format_double(row.t);
    for (long i = 0; i < row.q.size(); ++i) out += "," + format_double(row.q(i));
    for (long i = 0; i < row.v.size(); ++i) out += "," + format_double(row.v(i));
    out += "," + format_double(row.h_min);
    out += "," + row.nearest_pair + "," + row.qp_status + "," + row.event + "\n";
  }
  return out;
}

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path) {
  write_text_file(path, trace_to_csv(trace));
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << text;
}

}  // namespace sfilter
