#include "tsfem/format.hpp"

#include "tsfem/error.hpp"

#include <array>
#include <charconv>

namespace tsfem {

std::string format_double(double value)
{
  std::array<char, 32> buffer{};
  const auto [end, ec] = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
  if (ec != std::errc{})
    throw FormatError("cannot format floating point value");
  return std::string(buffer.data(), end);
}

double parse_double(std::string_view token)
{
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || ptr != token.data() + token.size())
    throw FormatError("malformed number '" + std::string(token) + "'");
  return value;
}

} // namespace tsfem
