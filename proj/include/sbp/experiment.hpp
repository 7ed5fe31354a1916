#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sbp/data.hpp"
#include "sbp/evaluation.hpp"
#include "sbp/tcn.hpp"
#include "sbp/train.hpp"

namespace sbp {

// Everything a run depends on. JSON sections are optional; missing keys keep
// the defaults below.
struct RunConfig {
  std::uint64_t seed = 7;
  SynthConfig synth;
  double train_fraction = 0.8;
  CsvColumns columns;
  TcnConfig tcn;
  TrainConfig train;
  AdapterConfig adapter;  // adapter.detector drives the detect command too
  GridKind grid = GridKind::Tail;

  // Fans the run seed out to the generator and the model.
  void set_seed(std::uint64_t value);
  void validate() const;
  std::string to_json() const;
  static RunConfig from_json(std::string_view text);
};

enum class Method { Spot, Dspot, TcnSpot, Sbp };

std::string_view method_name(Method method) noexcept;  // "SPOT", "DSPOT", "TCN-SPOT", "SBP"
Method method_from_string(std::string_view name);      // case-insensitive, also "tcn_spot"

struct Split {
  std::vector<double> train;
  std::vector<double> test;
};
Split chronological_split(const SeriesFrame& frame, const RunConfig& config);

// Trains what the method needs on split.train, then scores one-step quantiles
// on split.test. `model` (distribution or point) skips training when given.
CalibrationReport evaluate_method(Method method, const Split& split, const RunConfig& config,
                                  const TrainedModel* model = nullptr);

struct Comparison {
  std::vector<CalibrationReport> reports;  // SPOT, DSPOT, TCN-SPOT, SBP
  std::vector<EpochLog> sbp_log;
  std::vector<EpochLog> point_log;
};
Comparison compare_methods(const SeriesFrame& frame, const RunConfig& config);
std::string comparison_csv(const Comparison& comparison);  // model,mae

}  // namespace sbp
