#include "sbp/json_text.hpp"

#include <cmath>
#include <cstdio>

#include "json.hpp"

namespace sbp::json_text {

std::string number(double value) {
  if (!std::isfinite(value)) return "null";
  char buffer[40];
  std::snprintf(buffer, sizeof buffer, "%.16e", value);
  return buffer;
}

std::string array(std::span<const double> values) {
  std::string out = "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    out += number(values[i]);
  }
  out += ']';
  return out;
}

std::string quoted(const std::string& value) { return nlohmann::json(value).dump(); }

}  // namespace sbp::json_text
