#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbp/spliced.hpp"
#include "sbp/tcn.hpp"

namespace sbp {

// Non-finite losses or parameters during optimisation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// z = (x - center) / scale with the median as center and IQR / 1.349 as scale
// (1 when the IQR vanishes).
struct Standardization {
  double center = 0.0;
  double scale = 1.0;

  static Standardization fit(std::span<const double> values);
  double apply(double x) const noexcept { return (x - center) / scale; }
  double invert(double z) const noexcept { return center + scale * z; }
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  double gradient_clip = 10.0;  // global L2 norm
  double tail_mass = 0.05;
  double validation_fraction = 0.1;
  double bin_span_sigmas = 5.0;  // bins cover mean +- k sd of the standardized training data

  void validate() const;
};

enum class HeadKind { Distribution, Point };

struct TrainedModel {
  HeadKind kind = HeadKind::Distribution;
  ModelParams params;
  Standardization standardization;
  std::vector<double> edges;  // standardized scale; empty for point models
  double tail_mass = 0.05;
};

struct EpochLog {
  std::size_t epoch;
  double train_nll;  // mean loss on the training windows after the epoch
  double val_nll;    // mean loss on the validation windows after the epoch
};

struct TrainResult {
  TrainedModel model;  // parameters of the best validation epoch
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
};

// Windows (x[t - context .. t-1], x[t]) over the training series; the last
// validation_fraction of them are held out. Adam (0.9, 0.999, 1e-8).
TrainResult train(std::span<const double> series, const TcnConfig& tcn, const TrainConfig& tc);
// Same loop with a single-output head and squared error.
TrainResult point_forecast_train(std::span<const double> series, const TcnConfig& tcn, const TrainConfig& tc);

std::string training_log_csv(const std::vector<EpochLog>& log);

// Predictive distribution on the standardized scale for the value after
// `context` (original units, context_length values).
SplicedBinnedPareto predictive(const TrainedModel& model, std::span<const double> context);
// Quantile of the predictive distribution in original units.
double predictive_quantile(const TrainedModel& model, const SplicedBinnedPareto& standardized, double level);
// Point forecast in original units (point models only).
double point_forecast(const TrainedModel& model, std::span<const double> context);

// "SBPM" container: magic, u32 version, then per tensor u32 name length,
// name, u32 rank, u64 dims, little-endian doubles.
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);
std::vector<unsigned char> serialize_model(const TrainedModel& model);
TrainedModel deserialize_model(std::span<const unsigned char> bytes);

}  // namespace sbp
