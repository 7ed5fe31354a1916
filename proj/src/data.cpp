#include "sbp/data.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <regex>
#include <sstream>
#include <tuple>

#include "json.hpp"
#include "sbp/gpd.hpp"
#include "sbp/json_text.hpp"

namespace sbp {

namespace {

[[noreturn]] void fail(DataErrorKind kind, const std::string& message) { throw DataError(kind, message); }

template <class... F>
struct overloaded : F... {
  using F::operator()...;
};
template <class... F>
overloaded(F...) -> overloaded<F...>;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) return out;
    start = comma + 1;
  }
}

std::optional<double> parse_double(std::string_view text) {
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) return std::nullopt;
  return value;
}

using TimeKey = std::tuple<int, int, int, int, int, double>;

std::optional<TimeKey> parse_timestamp(const std::string& text) {
  static const std::regex pattern(
      R"(^(\d{4})-(\d{2})-(\d{2})(?:[ T](\d{2}):(\d{2})(?::(\d{2}(?:\.\d+)?))?)?Z?$)");
  std::smatch m;
  if (!std::regex_match(text, m, pattern)) return std::nullopt;
  auto field = [&m](std::size_t i) { return m[i].matched ? std::stoi(m[i].str()) : 0; };
  const TimeKey key{field(1), field(2), field(3), field(4), field(5), m[6].matched ? std::stod(m[6].str()) : 0.0};
  const auto [y, mo, d, h, mi, s] = key;
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || s >= 61.0) return std::nullopt;
  (void)y;
  return key;
}

void check_positive(double value, const char* what) {
  if (!(value > 0.0) || !std::isfinite(value)) fail(DataErrorKind::InvalidConfig, std::string("synth config: ") + what + " must be > 0");
}

}  // namespace

void validate(const SynthConfig& config) {
  if (config.period < 2) fail(DataErrorKind::InvalidConfig, "synth config: period must be >= 2");
  if (!std::isfinite(config.amplitude)) fail(DataErrorKind::InvalidConfig, "synth config: amplitude must be finite");
  std::visit(overloaded{
                 [](const StudentTNoise& n) {
                   check_positive(n.nu, "nu");
                   check_positive(n.scale, "scale");
                 },
                 [](const GaussianNoise& n) {
                   if (!(n.sigma >= 0.0) || !std::isfinite(n.sigma)) {
                     fail(DataErrorKind::InvalidConfig, "synth config: sigma must be >= 0");
                   }
                 },
                 [](const ParetoMixNoise& n) {
                   check_positive(n.beta, "beta");
                   if (!std::isfinite(n.xi) || n.xi < 0.0) fail(DataErrorKind::InvalidConfig, "synth config: xi must be >= 0");
                   if (!(n.contamination >= 0.0 && n.contamination <= 1.0)) {
                     fail(DataErrorKind::InvalidConfig, "synth config: contamination must lie in [0, 1]");
                   }
                 },
             },
             config.noise);
}

std::string noise_name(const NoiseSpec& noise) {
  return std::visit(overloaded{
                        [](const StudentTNoise&) { return std::string("student_t"); },
                        [](const GaussianNoise&) { return std::string("gaussian"); },
                        [](const ParetoMixNoise&) { return std::string("pareto_mix"); },
                    },
                    noise);
}

SynthConfig synth_config_from_json(std::string_view text) {
  try {
    const nlohmann::json doc = nlohmann::json::parse(text);
    SynthConfig config;
    config.length = doc.value("length", config.length);
    config.amplitude = doc.value("amplitude", config.amplitude);
    config.period = doc.value("period", config.period);
    config.seed = doc.value("seed", config.seed);
    if (doc.contains("noise")) {
      const auto& n = doc.at("noise");
      const std::string kind = n.at("kind").get<std::string>();
      if (kind == "student_t") {
        StudentTNoise s;
        config.noise = StudentTNoise{n.value("nu", s.nu), n.value("scale", s.scale)};
      } else if (kind == "gaussian") {
        config.noise = GaussianNoise{n.value("sigma", GaussianNoise{}.sigma)};
      } else if (kind == "pareto_mix") {
        ParetoMixNoise p;
        config.noise = ParetoMixNoise{n.value("xi", p.xi), n.value("beta", p.beta), n.value("contamination", p.contamination)};
      } else {
        fail(DataErrorKind::InvalidConfig, "synth config: unknown noise kind '" + kind + "'");
      }
    }
    validate(config);
    return config;
  } catch (const nlohmann::json::exception& e) {
    fail(DataErrorKind::InvalidConfig, std::string("synth config: ") + e.what());
  }
}

std::string to_json(const SynthConfig& config) {
  using json_text::number;
  std::string noise = std::visit(
      overloaded{
          [](const StudentTNoise& n) {
            return "{\"kind\":\"student_t\",\"nu\":" + number(n.nu) + ",\"scale\":" + number(n.scale) + "}";
          },
          [](const GaussianNoise& n) { return "{\"kind\":\"gaussian\",\"sigma\":" + number(n.sigma) + "}"; },
          [](const ParetoMixNoise& n) {
            return "{\"kind\":\"pareto_mix\",\"xi\":" + number(n.xi) + ",\"beta\":" + number(n.beta) +
                   ",\"contamination\":" + number(n.contamination) + "}";
          },
      },
      config.noise);
  return "{\"length\":" + std::to_string(config.length) + ",\"amplitude\":" + number(config.amplitude) +
         ",\"period\":" + std::to_string(config.period) + ",\"noise\":" + noise +
         ",\"seed\":" + std::to_string(config.seed) + "}";
}

double draw_gamma(double shape, CounterRng& rng) {
  if (shape < 1.0) {
    const double g = draw_gamma(shape + 1.0, rng);
    return g * std::pow(rng.uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    const double x = rng.normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = rng.uniform();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

double draw_chi_square(double nu, CounterRng& rng) {
  if (nu == std::floor(nu) && nu <= 1e6) {
    double sum = 0.0;
    for (int k = 0; k < static_cast<int>(nu); ++k) {
      const double z = rng.normal();
      sum += z * z;
    }
    return sum;
  }
  return 2.0 * draw_gamma(0.5 * nu, rng);
}

double draw_noise(const NoiseSpec& noise, CounterRng& rng) {
  return std::visit(overloaded{
                        [&rng](const StudentTNoise& n) {
                          const double z = rng.normal();
                          const double g = draw_chi_square(n.nu, rng);
                          return n.scale * z / std::sqrt(g / n.nu);
                        },
                        [&rng](const GaussianNoise& n) { return n.sigma == 0.0 ? 0.0 : n.sigma * rng.normal(); },
                        [&rng](const ParetoMixNoise& n) {
                          double e = n.beta * rng.normal();
                          if (rng.uniform() < n.contamination) {
                            const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
                            e += sign * GeneralizedPareto(n.xi, n.beta).isf(rng.uniform());
                          }
                          return e;
                        },
                    },
                    noise);
}

SeriesFrame gen_synthetic(const SynthConfig& config) {
  validate(config);
  CounterRng rng(derive_seed(config.seed, seed_offset::kSynth));
  SeriesFrame frame;
  frame.name = "synthetic_" + noise_name(config.noise);
  frame.values.resize(config.length);
  const double omega = 2.0 * std::numbers::pi / static_cast<double>(config.period);
  for (std::size_t t = 0; t < config.length; ++t) {
    frame.values[t] = config.amplitude * std::sin(omega * static_cast<double>(t)) + draw_noise(config.noise, rng);
  }
  return frame;
}

SeriesFrame load_csv(const std::filesystem::path& path, const CsvColumns& columns) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(DataErrorKind::MissingFile, "cannot open data file '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) fail(DataErrorKind::MalformedHeader, "malformed header: empty file");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_fields(line);
  std::optional<std::size_t> time_col;
  std::optional<std::size_t> value_col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!columns.timestamp.empty() && header[i] == columns.timestamp) time_col = i;
    if (header[i] == columns.value) value_col = i;
  }
  if (!value_col) fail(DataErrorKind::MalformedHeader, "malformed header: no column named '" + columns.value + "'");

  SeriesFrame frame;
  frame.name = path.stem().string();
  if (time_col) frame.timestamps.emplace();
  std::optional<TimeKey> previous;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    const std::string where = "row " + std::to_string(row);
    if (fields.size() != header.size()) {
      fail(DataErrorKind::BadValue, where + ": expected " + std::to_string(header.size()) + " fields");
    }
    const auto value = parse_double(fields[*value_col]);
    if (!value || !std::isfinite(*value)) {
      fail(DataErrorKind::BadValue, where + ": bad value '" + std::string(fields[*value_col]) + "'");
    }
    if (time_col) {
      std::string stamp(fields[*time_col]);
      const auto key = parse_timestamp(stamp);
      if (!key) fail(DataErrorKind::BadTimestamp, where + ": bad timestamp '" + stamp + "'");
      if (previous && !(*previous < *key)) {
        fail(DataErrorKind::NonMonotoneTimestamps, "non-monotone timestamps at " + where);
      }
      previous = key;
      frame.timestamps->push_back(std::move(stamp));
    }
    frame.values.push_back(*value);
  }
  return frame;
}

std::string format_value(double value) {
  std::array<char, 64> buffer{};
  const auto [ptr, ec] = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
  return std::string(buffer.data(), ptr);
}

void write_csv(const SeriesFrame& frame, const std::filesystem::path& path) {
  const bool stamped = frame.timestamps.has_value();
  if (stamped && frame.timestamps->size() != frame.values.size()) {
    throw std::invalid_argument("write_csv: timestamps and values differ in length");
  }
  std::ostringstream out;
  out << (stamped ? "timestamp,value\n" : "value\n");
  for (std::size_t i = 0; i < frame.values.size(); ++i) {
    if (stamped) out << (*frame.timestamps)[i] << ',';
    out << format_value(frame.values[i]) << '\n';
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error("cannot write '" + path.string() + "'");
  file << out.str();
  if (!file) throw std::runtime_error("write failed for '" + path.string() + "'");
}

WindowedSplit split_and_window(const SeriesFrame& frame, double train_fraction, std::size_t context_length) {
  const std::size_t n = frame.values.size();
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    fail(DataErrorKind::InvalidConfig, "train fraction must lie in (0, 1)");
  }
  if (context_length == 0) fail(DataErrorKind::InvalidConfig, "context length must be >= 1");
  if (n <= context_length + 10) fail(DataErrorKind::TooShort, "series too short for the context length");
  WindowedSplit split;
  split.values = frame.values;
  split.context_length = context_length;
  split.n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  if (split.n_train <= context_length || split.n_train >= n) {
    fail(DataErrorKind::TooShort, "training split leaves no windows on one side");
  }
  for (std::size_t t = context_length; t < split.n_train; ++t) split.train_targets.push_back(t);
  for (std::size_t t = split.n_train; t < n; ++t) split.test_targets.push_back(t);
  return split;
}

}  // namespace sbp
