#pragma once

// Text helpers shared by the CSV writers and readers.

#include <string>
#include <string_view>
#include <vector>

namespace rmlab {

/// Shortest decimal form that round-trips to the same double.
std::string fmt_double(double v);
double parse_double(std::string_view s);
std::vector<std::string> split_csv(std::string_view line);

}  // namespace rmlab
