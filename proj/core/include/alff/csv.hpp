#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace alff {

/// Shortest decimal text that parses back to exactly the same double.
std::string format_number(double v);

/// Splits on commas and trims surrounding spaces; no quoting.
std::vector<std::string_view> split_csv(std::string_view line);

/// Whole-field parse; returns false on trailing garbage or overflow.
bool parse_double(std::string_view text, double* out);
bool parse_int(std::string_view text, long long* out);

}  // namespace alff
