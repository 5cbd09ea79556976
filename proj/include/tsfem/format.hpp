#pragma once

#include <string>
#include <string_view>

namespace tsfem {

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);

/// Strict parse of a full token; throws FormatError on trailing garbage.
double parse_double(std::string_view token);

} // namespace tsfem
