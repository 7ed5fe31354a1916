#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sbp/gpd.hpp"

namespace sbp {

// Failures of the EVT machinery that depend on the data rather than on the
// caller's arguments ("degenerate excesses", "insufficient peaks", ...).
class EvtError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GrimshawOptions {
  std::size_t grid_points = 1000;  // per sign of theta
  double delta = 1e-8;
};

// Search range for the Grimshaw variable theta = xi / beta. Fixed when a
// fitter is created so that streaming refits can keep per-grid running sums.
struct GrimshawGrid {
  double negative_near = 0;  // smallest |theta| on the negative side
  double negative_far = 0;   // support bound 1/max; the grid stops delta short of it
  double positive_near = 0;
  double positive_far = 0;
  std::size_t points = 0;

  static GrimshawGrid for_excesses(std::span<const double> excesses, const GrimshawOptions& options);
};

// Maximum-likelihood GPD fit through the one-dimensional Grimshaw reduction.
//
// With u(t) = mean(1 / (1 + t y)) and v(t) = 1 + mean(log(1 + t y)), every
// interior stationary point of the likelihood is a root of w(t) = u(t) v(t) - 1
// and maps back to xi = v(t) - 1, beta = xi / t. Roots are bracketed on a
// geometric grid of t on each side of zero and refined with TOMS 748; the best
// root (or the exponential fit, t -> 0) by likelihood wins. Without any
// interior root the method-of-moments estimate is used if it beats the
// exponential fit.
//
// The fitter keeps running sums of log1p(t_j y) and 1/(1 + t_j y) for each grid
// point t_j, so adding an excess costs O(grid) and a refit costs O(grid) plus
// O(n) per root-finder evaluation.
class GpdFitter {
 public:
  explicit GpdFitter(std::span<const double> excesses, GrimshawOptions options = {});
  GpdFitter(std::span<const double> excesses, const GrimshawGrid& grid, GrimshawOptions options = {});

  void add(double excess);
  // Throws EvtError("degenerate excesses") with fewer than 2 distinct values.
  GeneralizedPareto fit() const;

  std::span<const double> excesses() const noexcept { return excesses_; }
  const GrimshawGrid& grid() const noexcept { return grid_; }
  const GrimshawOptions& options() const noexcept { return options_; }

 private:
  struct GridPoint {
    double theta;
    double sum_inverse = 0.0;
    double sum_log = 0.0;
    bool valid = true;
  };

  void build_grid();
  void accumulate(GridPoint& point, double excess) const;
  double score(double theta, double* sum_log = nullptr) const;  // w(theta), O(n)

  GrimshawOptions options_;
  GrimshawGrid grid_;
  std::vector<double> excesses_;
  double sum_ = 0.0;
  std::vector<GridPoint> points_;  // ascending theta; negative side first
  std::size_t negative_count_ = 0;
  double min_ = 0.0;
  double max_ = 0.0;
  bool distinct_ = false;
};

GeneralizedPareto fit_gpd_mle(std::span<const double> excesses, const GrimshawOptions& options = {});
// Hosking-Wallis moment estimator; throws EvtError for degenerate input.
GeneralizedPareto fit_gpd_moments(std::span<const double> excesses);
double gpd_log_likelihood(std::span<const double> excesses, const GeneralizedPareto& g);

struct PotQuantile {
  double value;
  // q T / N_tau >= 1: the requested level lies inside the observed peaks and
  // the threshold itself is returned.
  bool inside_peaks;
};

// z_q = tau + beta/xi * ((q T / N_tau)^(-xi) - 1), exponential limit for small xi.
PotQuantile pot_quantile(const GeneralizedPareto& g, double tau, double q, std::size_t n_total,
                         std::size_t n_peaks);

// Empirical quantile with linear interpolation between order statistics.
double empirical_quantile(std::span<const double> values, double level);

enum class Side { Upper, Lower };
enum class StepKind { Normal, Peak, Anomaly };

std::string_view to_string(Side side) noexcept;
std::string_view to_string(StepKind kind) noexcept;

struct StepOutcome {
  StepKind kind;
  double z_q_after;
  friend bool operator==(const StepOutcome&, const StepOutcome&) = default;
};

struct DetectorConfig {
  double q_level = 1e-3;
  // Threshold level on the original scale; defaults to 0.95 (upper) / 0.05 (lower).
  std::optional<double> tau_level;
  Side side = Side::Upper;
  std::size_t refit_every = 1;
  std::size_t drift_depth = 20;  // DSPOT only
  GrimshawOptions grimshaw;
};

// Streaming SPOT/DSPOT state. Internally a lower-side detector works on the
// negated stream; accessors report thresholds on the original scale.
class DetectorState {
 public:
  double tau() const noexcept { return sign() * tau_; }
  double z_q() const noexcept { return sign() * z_q_; }
  std::span<const double> excesses() const noexcept { return fitter_.excesses(); }
  std::size_t n_total() const noexcept { return n_total_; }
  std::size_t n_peaks() const noexcept { return excesses().size(); }
  double q_level() const noexcept { return q_level_; }
  Side side() const noexcept { return side_; }
  const std::deque<double>& drift_window() const noexcept { return drift_window_; }
  std::size_t drift_depth() const noexcept { return drift_depth_; }
  const GeneralizedPareto& gpd() const noexcept { return gpd_; }
  bool z_q_inside_peaks() const noexcept { return inside_peaks_; }

  // Mean of the drift window summed oldest to newest; 0 when empty.
  double drift_mean() const noexcept;

  // Quantile of the current tail model at exceedance probability q in the
  // original orientation, without the drift offset.
  PotQuantile quantile_at(double q) const;

  std::string to_json() const;
  static DetectorState from_json(std::string_view text);

 private:
  friend DetectorState spot_init(std::span<const double>, const DetectorConfig&);
  friend DetectorState dspot_init(std::span<const double>, const DetectorConfig&);
  friend StepOutcome spot_step(DetectorState&, double);
  friend StepOutcome dspot_step(DetectorState&, double);

  DetectorState(GpdFitter fitter, GeneralizedPareto gpd) : fitter_(std::move(fitter)), gpd_(gpd) {}

  double sign() const noexcept { return side_ == Side::Upper ? 1.0 : -1.0; }
  void recompute_z();

  GpdFitter fitter_;
  GeneralizedPareto gpd_;
  double tau_ = 0.0;  // mirrored scale
  double z_q_ = 0.0;  // mirrored scale
  bool inside_peaks_ = false;
  std::size_t n_total_ = 0;
  double q_level_ = 1e-3;
  Side side_ = Side::Upper;
  std::size_t refit_every_ = 1;
  std::size_t peaks_since_refit_ = 0;
  std::size_t drift_depth_ = 0;
  std::deque<double> drift_window_;
};

// Threshold at the empirical tau level of the calibration data, GPD fitted to
// the excesses, z_q from pot_quantile. Throws EvtError("insufficient data")
// below 100 points and EvtError("insufficient peaks") below 10 excesses.
DetectorState spot_init(std::span<const double> calibration, const DetectorConfig& config);
StepOutcome spot_step(DetectorState& state, double x);

// SPOT on x - mean(last d normal values). Calibration fills the window with
// its first d points and detrends the rest, which must number at least 100.
DetectorState dspot_init(std::span<const double> calibration, const DetectorConfig& config);
StepOutcome dspot_step(DetectorState& state, double x);

}  // namespace sbp
