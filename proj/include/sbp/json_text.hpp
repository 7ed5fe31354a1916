#pragma once

#include <span>
#include <string>

namespace sbp::json_text {

// Decimal scientific notation with 17 significant digits; round-trips exactly.
// Non-finite values are written as null.
std::string number(double value);
std::string array(std::span<const double> values);
std::string quoted(const std::string& value);

}  // namespace sbp::json_text
