#include "sbp/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <json.hpp>
#include <optional>
#include <stdexcept>

namespace sbp {

namespace {

using ordered = nlohmann::ordered_json;

template <typename T>
void read(const nlohmann::json& section, const char* key, T& target) {
  if (section.contains(key)) target = section.at(key).get<T>();
}

}  // namespace

void RunConfig::set_seed(std::uint64_t value) {
  seed = value;
  synth.seed = value;
  tcn.seed = value;
}

void RunConfig::validate() const {
  sbp::validate(synth);
  tcn.validate();
  train.validate();
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("config: train_fraction must lie in (0, 1)");
  }
  const auto& d = adapter.detector;
  if (!(d.q_level > 0.0 && d.q_level < 1.0)) throw std::invalid_argument("config: detector q must lie in (0, 1)");
  if (d.tau_level && !(*d.tau_level > 0.0 && *d.tau_level < 1.0)) {
    throw std::invalid_argument("config: detector tau_level must lie in (0, 1)");
  }
  if (d.refit_every == 0) throw std::invalid_argument("config: refit_every must be positive");
  if (!(adapter.upper_tau_level > 0.5 && adapter.upper_tau_level < 1.0) ||
      !(adapter.lower_tau_level > 0.0 && adapter.lower_tau_level < 0.5)) {
    throw std::invalid_argument("config: evaluation thresholds must lie in (0.5, 1) and (0, 0.5)");
  }
}

std::string RunConfig::to_json() const {
  ordered doc;
  doc["seed"] = seed;
  doc["synth"] = ordered::parse(sbp::to_json(synth));
  doc["data"] = {{"train_fraction", train_fraction},
                 {"timestamp_column", columns.timestamp},
                 {"value_column", columns.value}};
  doc["model"] = {{"context", tcn.context_length}, {"channels", tcn.channels}, {"kernel", tcn.kernel_size},
                  {"dilations", tcn.dilations},    {"bins", tcn.n_bins}};
  doc["train"] = {{"learning_rate", train.learning_rate},
                  {"batch_size", train.batch_size},
                  {"epochs", train.epochs},
                  {"gradient_clip", train.gradient_clip},
                  {"q", train.tail_mass},
                  {"validation_fraction", train.validation_fraction},
                  {"bin_span_sigmas", train.bin_span_sigmas}};
  const auto& d = adapter.detector;
  doc["detector"] = {{"q", d.q_level},
                     {"tau_level", d.tau_level ? ordered(*d.tau_level) : ordered(nullptr)},
                     {"refit_every", d.refit_every},
                     {"drift_depth", d.drift_depth},
                     {"grid_points", d.grimshaw.grid_points},
                     {"eval_upper_tau_level", adapter.upper_tau_level},
                     {"eval_lower_tau_level", adapter.lower_tau_level}};
  doc["grid"] = std::string(to_string(grid));
  return doc.dump(2) + "\n";
}

RunConfig RunConfig::from_json(std::string_view text) {
  const auto doc = nlohmann::json::parse(text.begin(), text.end(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw std::invalid_argument("config: malformed JSON");
  RunConfig c;
  try {
    if (doc.contains("synth")) c.synth = synth_config_from_json(doc.at("synth").dump());
    if (doc.contains("seed")) c.set_seed(doc.at("seed").get<std::uint64_t>());
    if (doc.contains("data")) {
      const auto& s = doc.at("data");
      read(s, "train_fraction", c.train_fraction);
      read(s, "timestamp_column", c.columns.timestamp);
      read(s, "value_column", c.columns.value);
    }
    if (doc.contains("model")) {
      const auto& s = doc.at("model");
      read(s, "context", c.tcn.context_length);
      read(s, "channels", c.tcn.channels);
      read(s, "kernel", c.tcn.kernel_size);
      read(s, "dilations", c.tcn.dilations);
      read(s, "bins", c.tcn.n_bins);
    }
    if (doc.contains("train")) {
      const auto& s = doc.at("train");
      read(s, "learning_rate", c.train.learning_rate);
      read(s, "batch_size", c.train.batch_size);
      read(s, "epochs", c.train.epochs);
      read(s, "gradient_clip", c.train.gradient_clip);
      read(s, "q", c.train.tail_mass);
      read(s, "validation_fraction", c.train.validation_fraction);
      read(s, "bin_span_sigmas", c.train.bin_span_sigmas);
    }
    if (doc.contains("detector")) {
      const auto& s = doc.at("detector");
      auto& d = c.adapter.detector;
      read(s, "q", d.q_level);
      if (s.contains("tau_level") && !s.at("tau_level").is_null()) d.tau_level = s.at("tau_level").get<double>();
      read(s, "refit_every", d.refit_every);
      read(s, "drift_depth", d.drift_depth);
      read(s, "grid_points", d.grimshaw.grid_points);
      read(s, "eval_upper_tau_level", c.adapter.upper_tau_level);
      read(s, "eval_lower_tau_level", c.adapter.lower_tau_level);
    }
    if (doc.contains("grid")) c.grid = grid_from_string(doc.at("grid").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string_view method_name(Method method) noexcept {
  switch (method) {
    case Method::Spot: return "SPOT";
    case Method::Dspot: return "DSPOT";
    case Method::TcnSpot: return "TCN-SPOT";
    case Method::Sbp: return "SBP";
  }
  return "?";
}

Method method_from_string(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (lower == "spot") return Method::Spot;
  if (lower == "dspot") return Method::Dspot;
  if (lower == "tcn-spot" || lower == "tcn_spot") return Method::TcnSpot;
  if (lower == "sbp") return Method::Sbp;
  throw std::invalid_argument("unknown model kind '" + std::string(name) + "' (expected spot, dspot, tcn-spot or sbp)");
}

Split chronological_split(const SeriesFrame& frame, const RunConfig& config) {
  const auto windows = split_and_window(frame, config.train_fraction, config.tcn.context_length);
  Split split;
  split.train.assign(windows.values.begin(), windows.values.begin() + static_cast<std::ptrdiff_t>(windows.n_train));
  split.test.assign(windows.values.begin() + static_cast<std::ptrdiff_t>(windows.n_train), windows.values.end());
  return split;
}

CalibrationReport evaluate_method(Method method, const Split& split, const RunConfig& config,
                                  const TrainedModel* model) {
  const auto levels = level_grid(config.grid);
  const std::string name(method_name(method));
  switch (method) {
    case Method::Spot:
    case Method::Dspot: {
      const auto family = method == Method::Spot ? DetectorFamily::Spot : DetectorFamily::Dspot;
      auto forecaster = adapt_detector_to_quantiles(family, split.train, config.adapter);
      return evaluate_calibration(name, *forecaster, split.test, levels);
    }
    case Method::TcnSpot: {
      std::optional<TrainedModel> trained;
      if (model == nullptr) model = &trained.emplace(point_forecast_train(split.train, config.tcn, config.train).model);
      if (model->kind != HeadKind::Point) throw std::invalid_argument("TCN-SPOT needs a point-forecast model");
      auto forecaster = adapt_detector_to_quantiles(DetectorFamily::TcnSpot, split.train, config.adapter, model);
      return evaluate_calibration(name, *forecaster, split.test, levels);
    }
    case Method::Sbp: {
      std::optional<TrainedModel> trained;
      if (model == nullptr) model = &trained.emplace(train(split.train, config.tcn, config.train).model);
      if (model->kind != HeadKind::Distribution) throw std::invalid_argument("SBP needs a distribution model");
      auto forecaster = sbp_quantiles(*model, split.train);
      return evaluate_calibration(name, *forecaster, split.test, levels);
    }
  }
  throw std::invalid_argument("unknown method");
}

Comparison compare_methods(const SeriesFrame& frame, const RunConfig& config) {
  const Split split = chronological_split(frame, config);
  Comparison out;
  out.reports.push_back(evaluate_method(Method::Spot, split, config));
  out.reports.push_back(evaluate_method(Method::Dspot, split, config));
  const TrainResult point = point_forecast_train(split.train, config.tcn, config.train);
  out.reports.push_back(evaluate_method(Method::TcnSpot, split, config, &point.model));
  out.point_log = point.log;
  const TrainResult sbp = train(split.train, config.tcn, config.train);
  out.reports.push_back(evaluate_method(Method::Sbp, split, config, &sbp.model));
  out.sbp_log = sbp.log;
  return out;
}

std::string comparison_csv(const Comparison& comparison) {
  std::string out = "model,mae\n";
  for (const auto& r : comparison.reports) out += r.model + "," + format_value(r.mae) + "\n";
  return out;
}

}  // namespace sbp
