#pragma once

#include <string>
#include <vector>

#include "sfilter/tracker.hpp"

namespace sfilter {

/// Shortest representation that parses back to the same double.
std::string format_double(double v);

/// Rows `t,q_1..q_n` with a header line; identical schema for reference
/// input and filtered output.
std::string trajectory_to_csv(const Trajectory& traj);
void write_trajectory_csv(const Trajectory& traj, const std::string& path);
Trajectory trajectory_from_csv(const std::string& text, const std::string& behavior = "");
Trajectory read_trajectory_csv(const std::string& path, const std::string& behavior = "");

/// Rows `t,q_1..q_n,v_1..v_n,h_min,nearest_pair,qp_status,event`.
std::string trace_to_csv(const std::vector<TraceRow>& trace);
void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace sfilter
