#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sbp/rng.hpp"

namespace sbp {

enum class DataErrorKind {
  MissingFile,
  MalformedHeader,
  BadValue,
  BadTimestamp,
  NonMonotoneTimestamps,
  TooShort,
  InvalidConfig,
};

class DataError : public std::invalid_argument {
 public:
  DataError(DataErrorKind kind, const std::string& message) : std::invalid_argument(message), kind_(kind) {}
  DataErrorKind kind() const noexcept { return kind_; }

 private:
  DataErrorKind kind_;
};

struct SeriesFrame {
  std::optional<std::vector<std::string>> timestamps;
  std::vector<double> values;
  std::string name;
};

struct StudentTNoise {
  double nu = 3.0;
  double scale = 0.3;
};

// sigma = 0 gives a noiseless series.
struct GaussianNoise {
  double sigma = 1.0;
};

// Gaussian core N(0, beta^2); with probability `contamination` a GPD(xi, beta)
// jump with a random sign is added on top.
struct ParetoMixNoise {
  double xi = 0.3;
  double beta = 0.3;
  double contamination = 0.05;
};

using NoiseSpec = std::variant<StudentTNoise, GaussianNoise, ParetoMixNoise>;

struct SynthConfig {
  std::size_t length = 20000;
  double amplitude = 1.0;
  std::size_t period = 96;
  NoiseSpec noise = StudentTNoise{};
  std::uint64_t seed = 7;
};

void validate(const SynthConfig& config);
std::string noise_name(const NoiseSpec& noise);

// {"length":..,"amplitude":..,"period":..,"noise":{"kind":"student_t","nu":..,"scale":..},"seed":..}
// with kind one of student_t, gaussian (sigma), pareto_mix (xi, beta, contamination).
SynthConfig synth_config_from_json(std::string_view text);
std::string to_json(const SynthConfig& config);

double draw_noise(const NoiseSpec& noise, CounterRng& rng);
// Chi-square by summed squared normals for integer nu, Marsaglia-Tsang gamma otherwise.
double draw_chi_square(double nu, CounterRng& rng);
double draw_gamma(double shape, CounterRng& rng);

// x_t = amplitude sin(2 pi t / period) + noise_t, t = 0 .. length-1.
SeriesFrame gen_synthetic(const SynthConfig& config);

struct CsvColumns {
  std::string timestamp = "timestamp";
  std::string value = "value";
};

// Header row required and must name the value column. The timestamp column is
// optional; when present its entries must be ISO-8601 date-times in strictly
// increasing order. Row numbers in errors are 1-based file lines.
SeriesFrame load_csv(const std::filesystem::path& path, const CsvColumns& columns = {});
void write_csv(const SeriesFrame& frame, const std::filesystem::path& path);
std::string format_value(double value);  // shortest exact decimal

struct WindowedSplit {
  std::vector<double> values;
  std::size_t context_length = 0;
  std::size_t n_train = 0;
  std::vector<std::size_t> train_targets;  // indices into values
  std::vector<std::size_t> test_targets;

  std::span<const double> context(std::size_t target) const {
    return std::span<const double>(values).subspan(target - context_length, context_length);
  }
  std::span<const double> train_values() const { return std::span<const double>(values).first(n_train); }
};

// n_train = floor(train_fraction * N). Train targets have their whole context
// inside the training part; test targets are n_train .. N-1 and may look back
// across the boundary.
WindowedSplit split_and_window(const SeriesFrame& frame, double train_fraction, std::size_t context_length);

}  // namespace sbp
