#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sbp/evt.hpp"
#include "sbp/train.hpp"

namespace sbp {

enum class GridKind { Tail, Full };

// Tail: 100 equally spaced levels on [0.90, 0.999]. Full: 0.01, 0.02, ..., 0.99.
std::vector<double> level_grid(GridKind kind);
std::string_view to_string(GridKind kind) noexcept;
GridKind grid_from_string(std::string_view name);

struct CalibrationReport {
  std::string model;
  std::vector<double> levels;
  std::vector<double> coverages;
  double mae = 0.0;
  std::size_t n_points = 0;
  // Steps at which some level fell inside the observed peaks (detectors only).
  std::size_t inside_peaks_steps = 0;

  std::string to_json() const;
  static CalibrationReport from_json(std::string_view text);
};

// One-step-ahead predictive quantiles over a test stream. quantiles() is asked
// for the next target before observe() reveals it.
class QuantileForecaster {
 public:
  virtual ~QuantileForecaster() = default;
  virtual void quantiles(std::span<const double> levels, std::span<double> out) = 0;
  virtual void observe(double x) = 0;
  // True when the last quantiles() call hit a level inside the observed peaks.
  virtual bool inside_peaks() const { return false; }
};

// y_level = (1/T) sum_t 1[x_t < F_t^-1(level)].
std::vector<double> empirical_coverage(QuantileForecaster& model, std::span<const double> targets,
                                       std::span<const double> levels, std::size_t* inside_peaks_steps = nullptr);
std::vector<double> empirical_coverage(const std::function<double(std::size_t, double)>& quantile,
                                       std::span<const double> targets, std::span<const double> levels);

// Mean |coverage - level|; throws std::invalid_argument on empty or unequal input.
double calibration_mae(std::span<const double> levels, std::span<const double> coverages);

CalibrationReport evaluate_calibration(std::string model_name, QuantileForecaster& model,
                                       std::span<const double> targets, std::span<const double> levels);

// Writes <stem>.csv (level,coverage) and <stem>.svg next to each other.
void emit_pp_plot(const CalibrationReport& report, const std::filesystem::path& csv_path,
                  const std::filesystem::path& svg_path);
std::string pp_csv(const CalibrationReport& report);
std::string pp_svg(const CalibrationReport& report);
// Reads the level,coverage CSV back; mae is recomputed.
CalibrationReport read_pp_csv(const std::filesystem::path& path, std::string model_name = {});

enum class DetectorFamily { Spot, Dspot, TcnSpot };

struct AdapterConfig {
  DetectorConfig detector;  // side and tau_level are set per tail
  double upper_tau_level = 0.8;
  double lower_tau_level = 0.2;
};

// Upper detector for levels >= 0.5 (exceedance 1 - level), lower detector
// otherwise. DSPOT adds its drift mean; TCN-SPOT runs on forecast residuals and
// adds the point forecast. Detectors are calibrated on `history` and stepped
// on each revealed target.
std::unique_ptr<QuantileForecaster> adapt_detector_to_quantiles(DetectorFamily family, std::span<const double> history,
                                                                const AdapterConfig& config,
                                                                const TrainedModel* point_model = nullptr);

// SBP predictive quantiles; the context is the last context_length values seen.
std::unique_ptr<QuantileForecaster> sbp_quantiles(const TrainedModel& model, std::span<const double> history);

// Two mirrored SPOT detectors on r_t = x_t - forecast_t. The first `calibration`
// residuals initialise both; the remaining steps are scored. Outcome i covers
// series[first_index + i]. config.tau_level is the upper level; the lower side
// mirrors it. Combined z_q is in data units (forecast plus residual threshold).
struct TcnSpotResult {
  std::vector<StepOutcome> upper;
  std::vector<StepOutcome> lower;
  std::vector<StepOutcome> combined;
  std::size_t first_index = 0;
};
TcnSpotResult tcn_spot_detect(const TrainedModel& model, std::span<const double> series, std::size_t calibration,
                              const DetectorConfig& config);

// Residuals x_t - forecast_t for t in [context, series.size()).
std::vector<double> forecast_residuals(const TrainedModel& model, std::span<const double> series);

}  // namespace sbp
