#include "sbp/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "sbp/data.hpp"
#include "sbp/json_text.hpp"

namespace sbp {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out.flush()) throw std::runtime_error("write failed for '" + path.string() + "'");
}

class DetectorQuantiles final : public QuantileForecaster {
 public:
  DetectorQuantiles(DetectorFamily family, std::span<const double> history, const AdapterConfig& config,
                    const TrainedModel* point_model)
      : family_(family), point_model_(point_model), values_(history.begin(), history.end()) {
    DetectorConfig upper = config.detector;
    upper.side = Side::Upper;
    upper.tau_level = config.upper_tau_level;
    DetectorConfig lower = config.detector;
    lower.side = Side::Lower;
    lower.tau_level = config.lower_tau_level;

    std::vector<double> calibration(history.begin(), history.end());
    if (family_ == DetectorFamily::TcnSpot) {
      if (point_model_ == nullptr || point_model_->kind != HeadKind::Point) {
        throw std::invalid_argument("TCN-SPOT needs a point-forecast model");
      }
      calibration = forecast_residuals(*point_model_, history);
    }
    const auto init = family_ == DetectorFamily::Dspot ? dspot_init : spot_init;
    upper_ = std::make_unique<DetectorState>(init(calibration, upper));
    lower_ = std::make_unique<DetectorState>(init(calibration, lower));
  }

  void quantiles(std::span<const double> levels, std::span<double> out) override {
    inside_ = false;
    offset_upper_ = offset_lower_ = 0.0;
    if (family_ == DetectorFamily::Dspot) {
      offset_upper_ = upper_->drift_mean();
      offset_lower_ = lower_->drift_mean();
    } else if (family_ == DetectorFamily::TcnSpot) {
      const std::size_t context = point_model_->params.config().context_length;
      forecast_ = point_forecast(*point_model_, std::span<const double>(values_).last(context));
      forecast_ready_ = true;
      offset_upper_ = offset_lower_ = forecast_;
    }
    for (std::size_t i = 0; i < levels.size(); ++i) {
      const bool upper = levels[i] >= 0.5;
      const PotQuantile pq = upper ? upper_->quantile_at(1.0 - levels[i]) : lower_->quantile_at(levels[i]);
      inside_ = inside_ || pq.inside_peaks;
      out[i] = pq.value + (upper ? offset_upper_ : offset_lower_);
    }
  }

  void observe(double x) override {
    switch (family_) {
      case DetectorFamily::Spot:
        spot_step(*upper_, x);
        spot_step(*lower_, x);
        break;
      case DetectorFamily::Dspot:
        dspot_step(*upper_, x);
        dspot_step(*lower_, x);
        break;
      case DetectorFamily::TcnSpot: {
        const std::size_t context = point_model_->params.config().context_length;
        if (!forecast_ready_) forecast_ = point_forecast(*point_model_, std::span<const double>(values_).last(context));
        const double residual = x - forecast_;
        spot_step(*upper_, residual);
        spot_step(*lower_, residual);
        break;
      }
    }
    values_.push_back(x);
    forecast_ready_ = false;
  }

  bool inside_peaks() const override { return inside_; }

 private:
  DetectorFamily family_;
  const TrainedModel* point_model_;
  std::vector<double> values_;
  std::unique_ptr<DetectorState> upper_;
  std::unique_ptr<DetectorState> lower_;
  double offset_upper_ = 0.0;
  double offset_lower_ = 0.0;
  double forecast_ = 0.0;
  bool forecast_ready_ = false;
  bool inside_ = false;
};

class SbpQuantiles final : public QuantileForecaster {
 public:
  SbpQuantiles(const TrainedModel& model, std::span<const double> history)
      : model_(model), values_(history.begin(), history.end()) {
    if (model.kind != HeadKind::Distribution) throw std::invalid_argument("SBP quantiles need a distribution model");
    if (values_.size() < model.params.config().context_length) {
      throw std::invalid_argument("SBP quantiles: history shorter than the context length");
    }
  }

  void quantiles(std::span<const double> levels, std::span<double> out) override {
    const std::size_t context = model_.params.config().context_length;
    const auto dist = predictive(model_, std::span<const double>(values_).last(context));
    for (std::size_t i = 0; i < levels.size(); ++i) out[i] = predictive_quantile(model_, dist, levels[i]);
  }

  void observe(double x) override { values_.push_back(x); }

 private:
  const TrainedModel& model_;
  std::vector<double> values_;
};

}  // namespace

std::vector<double> level_grid(GridKind kind) {
  std::vector<double> levels;
  if (kind == GridKind::Tail) {
    for (int i = 0; i < 100; ++i) levels.push_back(0.90 + (0.999 - 0.90) * i / 99.0);
  } else {
    for (int i = 1; i <= 99; ++i) levels.push_back(i / 100.0);
  }
  return levels;
}

std::string_view to_string(GridKind kind) noexcept { return kind == GridKind::Tail ? "tail" : "full"; }

GridKind grid_from_string(std::string_view name) {
  if (name == "tail") return GridKind::Tail;
  if (name == "full") return GridKind::Full;
  throw std::invalid_argument("unknown grid '" + std::string(name) + "' (expected tail or full)");
}

std::vector<double> empirical_coverage(QuantileForecaster& model, std::span<const double> targets,
                                       std::span<const double> levels, std::size_t* inside_peaks_steps) {
  std::vector<std::size_t> below(levels.size(), 0);
  std::vector<double> q(levels.size());
  std::size_t inside = 0;
  for (double x : targets) {
    model.quantiles(levels, q);
    inside += model.inside_peaks();
    for (std::size_t i = 0; i < levels.size(); ++i) below[i] += x < q[i];
    model.observe(x);
  }
  if (inside_peaks_steps) *inside_peaks_steps = inside;
  std::vector<double> coverage(levels.size(), 0.0);
  if (targets.empty()) return coverage;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    coverage[i] = static_cast<double>(below[i]) / static_cast<double>(targets.size());
  }
  return coverage;
}

std::vector<double> empirical_coverage(const std::function<double(std::size_t, double)>& quantile,
                                       std::span<const double> targets, std::span<const double> levels) {
  std::vector<double> coverage(levels.size(), 0.0);
  if (targets.empty()) return coverage;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    std::size_t below = 0;
    for (std::size_t t = 0; t < targets.size(); ++t) below += targets[t] < quantile(t, levels[i]);
    coverage[i] = static_cast<double>(below) / static_cast<double>(targets.size());
  }
  return coverage;
}

double calibration_mae(std::span<const double> levels, std::span<const double> coverages) {
  if (levels.empty()) throw std::invalid_argument("calibration MAE: empty grid");
  if (levels.size() != coverages.size()) throw std::invalid_argument("calibration MAE: length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < levels.size(); ++i) sum += std::abs(coverages[i] - levels[i]);
  return sum / static_cast<double>(levels.size());
}

CalibrationReport evaluate_calibration(std::string model_name, QuantileForecaster& model,
                                       std::span<const double> targets, std::span<const double> levels) {
  CalibrationReport report;
  report.model = std::move(model_name);
  report.levels.assign(levels.begin(), levels.end());
  report.coverages = empirical_coverage(model, targets, levels, &report.inside_peaks_steps);
  report.mae = calibration_mae(report.levels, report.coverages);
  report.n_points = targets.size();
  return report;
}

std::string CalibrationReport::to_json() const {
  std::string out = "{\"model\":" + json_text::quoted(model);
  out += ",\"levels\":" + json_text::array(levels);
  out += ",\"coverages\":" + json_text::array(coverages);
  out += ",\"mae\":" + json_text::number(mae);
  out += ",\"n_points\":" + std::to_string(n_points);
  out += ",\"inside_peaks_steps\":" + std::to_string(inside_peaks_steps);
  out += "}\n";
  return out;
}

CalibrationReport CalibrationReport::from_json(std::string_view text) {
  const auto doc = nlohmann::json::parse(text.begin(), text.end(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw std::invalid_argument("report: malformed JSON");
  try {
    CalibrationReport r;
    r.model = doc.at("model").get<std::string>();
    r.levels = doc.at("levels").get<std::vector<double>>();
    r.coverages = doc.at("coverages").get<std::vector<double>>();
    r.mae = doc.at("mae").get<double>();
    r.n_points = doc.value("n_points", std::size_t{0});
    r.inside_peaks_steps = doc.value("inside_peaks_steps", std::size_t{0});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("report: ") + e.what());
  }
}

std::string pp_csv(const CalibrationReport& report) {
  std::string out = "level,coverage\n";
  for (std::size_t i = 0; i < report.levels.size(); ++i) {
    out += format_value(report.levels[i]) + "," + format_value(report.coverages[i]) + "\n";
  }
  return out;
}

std::string pp_svg(const CalibrationReport& report) {
  constexpr double size = 400.0, margin = 50.0;
  double lo = report.levels.empty() ? 0.0 : report.levels.front();
  double hi = report.levels.empty() ? 1.0 : report.levels.back();
  for (double c : report.coverages) {
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  if (!(hi > lo)) hi = lo + 1.0;
  const auto px = [&](double v) { return margin + (v - lo) / (hi - lo) * size; };
  const auto py = [&](double v) { return margin + size - (v - lo) / (hi - lo) * size; };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" height=\"500\" viewBox=\"0 0 500 500\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"500\" height=\"500\" fill=\"white\"/>\n";
  s += "<rect x=\"50\" y=\"50\" width=\"400\" height=\"400\" fill=\"none\" stroke=\"black\"/>\n";
  s += "<line class=\"diagonal\" x1=\"" + fixed(px(lo), 3) + "\" y1=\"" + fixed(py(lo), 3) + "\" x2=\"" +
       fixed(px(hi), 3) + "\" y2=\"" + fixed(py(hi), 3) + "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  s += "<polyline class=\"coverage\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < report.levels.size(); ++i) {
    if (i) s += ' ';
    s += fixed(px(report.levels[i]), 3) + "," + fixed(py(report.coverages[i]), 3);
  }
  s += "\"/>\n";
  s += "<text x=\"50\" y=\"470\" font-size=\"12\">" + fixed(lo, 3) + "</text>\n";
  s += "<text x=\"450\" y=\"470\" font-size=\"12\" text-anchor=\"end\">" + fixed(hi, 3) + "</text>\n";
  s += "<text x=\"250\" y=\"490\" font-size=\"12\" text-anchor=\"middle\">level</text>\n";
  s += "<text x=\"15\" y=\"250\" font-size=\"12\" transform=\"rotate(-90 15 250)\" text-anchor=\"middle\">coverage</text>\n";
  s += "<text x=\"250\" y=\"30\" font-size=\"14\" text-anchor=\"middle\">" + report.model + " MAE " +
       fixed(report.mae, 6) + "</text>\n";
  s += "</svg>\n";
  return s;
}

void emit_pp_plot(const CalibrationReport& report, const std::filesystem::path& csv_path,
                  const std::filesystem::path& svg_path) {
  write_text(csv_path, pp_csv(report));
  write_text(svg_path, pp_svg(report));
}

CalibrationReport read_pp_csv(const std::filesystem::path& path, std::string model_name) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != "level,coverage") {
    throw std::invalid_argument("PP csv: expected header 'level,coverage'");
  }
  CalibrationReport report;
  report.model = std::move(model_name);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    double level = 0.0, coverage = 0.0;
    const char* end = line.data() + line.size();
    if (comma == std::string::npos ||
        std::from_chars(line.data(), line.data() + comma, level).ec != std::errc{} ||
        std::from_chars(line.data() + comma + 1, end, coverage).ec != std::errc{}) {
      throw std::invalid_argument("PP csv: bad row '" + line + "'");
    }
    report.levels.push_back(level);
    report.coverages.push_back(coverage);
  }
  report.mae = calibration_mae(report.levels, report.coverages);
  return report;
}

std::unique_ptr<QuantileForecaster> adapt_detector_to_quantiles(DetectorFamily family, std::span<const double> history,
                                                                const AdapterConfig& config,
                                                                const TrainedModel* point_model) {
  return std::make_unique<DetectorQuantiles>(family, history, config, point_model);
}

std::unique_ptr<QuantileForecaster> sbp_quantiles(const TrainedModel& model, std::span<const double> history) {
  return std::make_unique<SbpQuantiles>(model, history);
}

std::vector<double> forecast_residuals(const TrainedModel& model, std::span<const double> series) {
  const std::size_t context = model.params.config().context_length;
  std::vector<double> residuals;
  if (series.size() <= context) return residuals;
  residuals.reserve(series.size() - context);
  for (std::size_t t = context; t < series.size(); ++t) {
    residuals.push_back(series[t] - point_forecast(model, series.subspan(t - context, context)));
  }
  return residuals;
}

TcnSpotResult tcn_spot_detect(const TrainedModel& model, std::span<const double> series, std::size_t calibration,
                              const DetectorConfig& config) {
  const auto residuals = forecast_residuals(model, series);
  if (calibration > residuals.size()) throw std::invalid_argument("TCN-SPOT: calibration longer than the residuals");
  const std::span<const double> r(residuals);
  DetectorConfig upper_config = config;
  upper_config.side = Side::Upper;
  DetectorConfig lower_config = config;
  lower_config.side = Side::Lower;
  if (config.tau_level) lower_config.tau_level = 1.0 - *config.tau_level;
  DetectorState upper = spot_init(r.first(calibration), upper_config);
  DetectorState lower = spot_init(r.first(calibration), lower_config);

  TcnSpotResult result;
  result.first_index = model.params.config().context_length + calibration;
  const std::size_t context = model.params.config().context_length;
  for (std::size_t i = calibration; i < r.size(); ++i) {
    const double forecast = series[context + i] - r[i];
    const StepOutcome up = spot_step(upper, r[i]);
    const StepOutcome down = spot_step(lower, r[i]);
    result.upper.push_back(up);
    result.lower.push_back(down);
    // Anomaly before peak before normal; the upper side wins ties.
    const auto rank = [](StepKind k) { return k == StepKind::Anomaly ? 2 : k == StepKind::Peak ? 1 : 0; };
    const StepOutcome& pick = rank(down.kind) > rank(up.kind) ? down : up;
    result.combined.push_back({pick.kind, forecast + pick.z_q_after});
  }
  return result;
}

}  // namespace sbp
