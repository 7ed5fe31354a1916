// sbp_cli: synthetic data, model fitting, streaming detection and calibration
// comparison. Exit codes: 0 success, 2 usage or configuration error, 3 runtime
// or numerical failure.

#include <CLI11.hpp>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sbp/data.hpp"
#include "sbp/evaluation.hpp"
#include "sbp/evt.hpp"
#include "sbp/experiment.hpp"
#include "sbp/train.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 3;

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Flags shared by every subcommand. Unset flags leave the config untouched.
struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> q;
  std::optional<std::size_t> bins;
  std::optional<std::size_t> context;
  std::optional<std::size_t> epochs;
  std::optional<std::string> grid;
  std::string out = ".";

  std::string data;
  std::string model_kind;
  std::string model_file;
  std::string head = "distribution";
  std::string detector = "spot";
  std::string side = "upper";
  std::size_t calibration = 1000;
  std::optional<std::size_t> stop;
  std::string resume;

  ordered_json to_json() const {
    ordered_json j;
    j["data"] = data;
    j["model"] = model_kind;
    j["model_file"] = model_file;
    j["head"] = head;
    j["detector"] = detector;
    j["side"] = side;
    j["calibration"] = calibration;
    j["stop"] = stop ? ordered_json(*stop) : ordered_json(nullptr);
    j["resume"] = resume;
    return j;
  }

  void from_json(const nlohmann::json& j) {
    data = j.value("data", data);
    model_kind = j.value("model", model_kind);
    model_file = j.value("model_file", model_file);
    head = j.value("head", head);
    detector = j.value("detector", detector);
    side = j.value("side", side);
    calibration = j.value("calibration", calibration);
    if (j.contains("stop") && !j.at("stop").is_null()) stop = j.at("stop").get<std::size_t>();
    resume = j.value("resume", resume);
  }
};

sbp::RunConfig resolve_config(const Options& o) {
  sbp::RunConfig c;
  if (!o.config_path.empty()) {
    const std::string text = read_file(o.config_path);
    const auto doc = nlohmann::json::parse(text, nullptr, false);
    // A run manifest carries its config under "config".
    if (!doc.is_discarded() && doc.is_object() && doc.contains("config") && doc.contains("command")) {
      c = sbp::RunConfig::from_json(doc.at("config").dump());
    } else {
      c = sbp::RunConfig::from_json(text);
    }
  }
  if (o.seed) c.set_seed(*o.seed);
  if (o.q) {
    c.train.tail_mass = *o.q;
    c.adapter.detector.q_level = *o.q;
  }
  if (o.bins) c.tcn.n_bins = *o.bins;
  if (o.context) c.tcn.context_length = *o.context;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.grid) c.grid = sbp::grid_from_string(*o.grid);
  c.validate();
  return c;
}

// Writes artifacts under the output directory and records their checksums.
class Run {
 public:
  Run(std::string command, const Options& options, sbp::RunConfig config)
      : command_(std::move(command)), options_(options), config_(std::move(config)),
        out_(options.out), start_(std::chrono::steady_clock::now()) {
    fs::create_directories(out_);
  }

  const sbp::RunConfig& config() const { return config_; }

  void write(const std::string& name, std::string_view bytes) {
    write_atomic(out_ / name, bytes);
    artifacts_.push_back({name, hex(fnv1a64(bytes)), bytes.size()});
  }

  void finish() {
    ordered_json m;
    m["command"] = command_;
    m["config"] = ordered_json::parse(config_.to_json());
    m["seeds"] = {{"run", config_.seed}, {"synth", config_.synth.seed}, {"model", config_.tcn.seed}};
    m["options"] = options_.to_json();
    ordered_json outputs = ordered_json::object();
    for (const auto& a : artifacts_) {
      outputs[a.name] = {{"path", (out_ / a.name).string()}, {"fnv1a64", a.checksum}, {"bytes", a.size}};
    }
    m["outputs"] = outputs;
    m["duration_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_atomic(out_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  struct Artifact {
    std::string name;
    std::string checksum;
    std::size_t size;
  };

  static void write_atomic(const fs::path& path, std::string_view bytes) {
    const fs::path tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!out.flush()) throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
  }

  std::string command_;
  Options options_;
  sbp::RunConfig config_;
  fs::path out_;
  std::chrono::steady_clock::time_point start_;
  std::vector<Artifact> artifacts_;
};

sbp::SeriesFrame load_series(const Options& o, const sbp::RunConfig& c) {
  if (o.data.empty()) return sbp::gen_synthetic(c.synth);
  return sbp::load_csv(o.data, c.columns);
}

std::string bytes_to_string(const std::vector<unsigned char>& bytes) { return {bytes.begin(), bytes.end()}; }

void write_report(Run& run, const sbp::CalibrationReport& report, const std::string& suffix) {
  run.write("report" + suffix + ".json", report.to_json());
  run.write("pp" + suffix + ".csv", sbp::pp_csv(report));
  run.write("pp" + suffix + ".svg", sbp::pp_svg(report));
}

void cmd_synth(const Options& o) {
  Run run("synth", o, resolve_config(o));
  const auto frame = sbp::gen_synthetic(run.config().synth);
  const fs::path tmp = fs::path(o.out) / "series.csv.partial";
  sbp::write_csv(frame, tmp);
  const std::string bytes = read_file(tmp);
  fs::remove(tmp);
  run.write("series.csv", bytes);
  run.finish();
  std::cout << "wrote " << frame.values.size() << " rows to " << (fs::path(o.out) / "series.csv").string() << "\n";
}

void cmd_fit(const Options& o) {
  Run run("fit", o, resolve_config(o));
  const auto& c = run.config();
  const auto split = sbp::chronological_split(load_series(o, c), c);
  if (o.head != "distribution" && o.head != "point") {
    throw std::invalid_argument("unknown head '" + o.head + "' (expected distribution or point)");
  }
  const sbp::TrainResult result = o.head == "point" ? sbp::point_forecast_train(split.train, c.tcn, c.train)
                                                    : sbp::train(split.train, c.tcn, c.train);
  run.write("model.sbpm", bytes_to_string(sbp::serialize_model(result.model)));
  run.write("training_log.csv", sbp::training_log_csv(result.log));
  run.finish();
  std::cout << "best epoch " << result.best_epoch << ", validation nll "
            << result.log[result.best_epoch - 1].val_nll << "\n";
}

void cmd_evaluate(const Options& o) {
  if (o.model_kind.empty()) throw std::invalid_argument("evaluate: --model is required");
  const sbp::Method method = sbp::method_from_string(o.model_kind);
  Run run("evaluate", o, resolve_config(o));
  const auto& c = run.config();
  const auto split = sbp::chronological_split(load_series(o, c), c);
  std::optional<sbp::TrainedModel> model;
  if (!o.model_file.empty()) model = sbp::load_model(o.model_file);
  const auto report = sbp::evaluate_method(method, split, c, model ? &*model : nullptr);
  write_report(run, report, "");
  run.finish();
  std::cout << report.model << " " << sbp::to_string(c.grid) << "-grid mae " << report.mae << "\n";
}

// Snapshot for detect --stop / --resume.
struct DetectSnapshot {
  std::size_t next_index;
  std::string family;
  std::string state;
};

std::string snapshot_json(const DetectSnapshot& s) {
  ordered_json j;
  j["version"] = 1;
  j["next_index"] = s.next_index;
  j["detector"] = s.family;
  j["state"] = ordered_json::parse(s.state);
  return j.dump(2) + "\n";
}

DetectSnapshot read_snapshot(const std::string& path) {
  const auto j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("state") || !j.contains("next_index")) {
    throw std::invalid_argument("resume: malformed snapshot '" + path + "'");
  }
  return {j.at("next_index").get<std::size_t>(), j.value("detector", std::string("spot")), j.at("state").dump()};
}

std::string outcome_row(std::size_t index, const sbp::StepOutcome& out) {
  return std::to_string(index) + "," + std::string(sbp::to_string(out.kind)) + "," + sbp::format_value(out.z_q_after) +
         "\n";
}

void cmd_detect(const Options& o) {
  Run run("detect", o, resolve_config(o));
  const auto& c = run.config();
  const auto frame = load_series(o, c);
  const auto& xs = frame.values;
  std::string outcomes = "index,kind,z_q\n";
  std::size_t anomalies = 0, scored = 0;

  if (o.detector == "tcn-spot" || o.detector == "tcn_spot") {
    if (o.model_file.empty()) throw std::invalid_argument("detect: tcn-spot needs --model-file");
    if (!o.resume.empty() || o.stop) throw std::invalid_argument("detect: tcn-spot does not support --stop/--resume");
    const auto model = sbp::load_model(o.model_file);
    auto dc = c.adapter.detector;
    const auto result = sbp::tcn_spot_detect(model, xs, o.calibration, dc);
    for (std::size_t i = 0; i < result.combined.size(); ++i) {
      outcomes += outcome_row(result.first_index + i, result.combined[i]);
      anomalies += result.combined[i].kind == sbp::StepKind::Anomaly;
    }
    scored = result.combined.size();
    run.write("outcomes.csv", outcomes);
  } else {
    const bool drift = o.detector == "dspot";
    if (!drift && o.detector != "spot") {
      throw std::invalid_argument("unknown detector '" + o.detector + "' (expected spot, dspot or tcn-spot)");
    }
    std::optional<sbp::DetectorState> state;
    std::size_t start = 0;
    if (!o.resume.empty()) {
      const auto snap = read_snapshot(o.resume);
      if (snap.family != o.detector) throw std::invalid_argument("resume: snapshot is for " + snap.family);
      state = sbp::DetectorState::from_json(snap.state);
      start = snap.next_index;
    } else {
      auto dc = c.adapter.detector;
      if (o.side == "lower") {
        dc.side = sbp::Side::Lower;
      } else if (o.side != "upper") {
        throw std::invalid_argument("unknown side '" + o.side + "' (expected upper or lower)");
      }
      if (o.calibration > xs.size()) throw std::invalid_argument("detect: calibration longer than the series");
      const std::span<const double> calib(xs.data(), o.calibration);
      state = drift ? sbp::dspot_init(calib, dc) : sbp::spot_init(calib, dc);
      start = o.calibration;
    }
    const std::size_t stop = std::min(xs.size(), o.stop.value_or(xs.size()));
    for (std::size_t i = start; i < stop; ++i) {
      const auto out = drift ? sbp::dspot_step(*state, xs[i]) : sbp::spot_step(*state, xs[i]);
      outcomes += outcome_row(i, out);
      anomalies += out.kind == sbp::StepKind::Anomaly;
      ++scored;
    }
    run.write("outcomes.csv", outcomes);
    run.write("state.json", snapshot_json({std::max(start, stop), o.detector, state->to_json()}));
  }
  run.finish();
  std::cout << scored << " steps, " << anomalies << " anomalies";
  if (scored) std::cout << " (rate " << static_cast<double>(anomalies) / static_cast<double>(scored) << ")";
  std::cout << "\n";
}

void cmd_compare(const Options& o) {
  Run run("compare", o, resolve_config(o));
  const auto& c = run.config();
  const auto comparison = sbp::compare_methods(load_series(o, c), c);
  ordered_json reports = ordered_json::array();
  for (const auto& r : comparison.reports) {
    reports.push_back(ordered_json::parse(r.to_json()));
    std::string suffix = "_" + r.model;
    for (auto& ch : suffix) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    run.write("pp" + suffix + ".csv", sbp::pp_csv(r));
    run.write("pp" + suffix + ".svg", sbp::pp_svg(r));
  }
  ordered_json doc;
  doc["grid"] = std::string(sbp::to_string(c.grid));
  doc["reports"] = reports;
  run.write("report.json", doc.dump(2) + "\n");
  run.write("comparison.csv", sbp::comparison_csv(comparison));
  run.finish();
  std::cout << sbp::comparison_csv(comparison);
}

// Re-executes the command recorded in a manifest into a new output directory.
void cmd_rerun(const std::string& manifest_path, const std::string& out);

void dispatch(const std::string& command, const Options& o) {
  if (command == "synth") return cmd_synth(o);
  if (command == "fit") return cmd_fit(o);
  if (command == "evaluate") return cmd_evaluate(o);
  if (command == "detect") return cmd_detect(o);
  if (command == "compare") return cmd_compare(o);
  throw std::invalid_argument("unknown command '" + command + "'");
}

void cmd_rerun(const std::string& manifest_path, const std::string& out) {
  const auto m = nlohmann::json::parse(read_file(manifest_path), nullptr, false);
  if (m.is_discarded() || !m.is_object() || !m.contains("command") || !m.contains("config")) {
    throw std::invalid_argument("rerun: '" + manifest_path + "' is not a run manifest");
  }
  Options o;
  o.config_path = manifest_path;
  o.out = out;
  if (m.contains("options")) o.from_json(m.at("options"));
  dispatch(m.at("command").get<std::string>(), o);
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "JSON config (or a run manifest)");
  cmd->add_option("--seed", o.seed, "run seed, fanned out to data and model");
  cmd->add_option("--q", o.q, "tail mass for SBP, exceedance level for detectors");
  cmd->add_option("--bins", o.bins, "number of bins");
  cmd->add_option("--context", o.context, "context length");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--grid", o.grid, "evaluation grid: tail or full");
  cmd->add_option("--out", o.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spliced binned-Pareto forecasting and EVT baselines"};
  app.require_subcommand(1);
  Options o;
  std::string manifest;

  auto* synth = app.add_subcommand("synth", "generate the synthetic sine benchmark");
  add_common(synth, o);

  auto* fit = app.add_subcommand("fit", "train a TCN on the training split");
  add_common(fit, o);
  fit->add_option("--data", o.data, "input CSV (synthetic benchmark when omitted)");
  fit->add_option("--head", o.head, "distribution or point");

  auto* evaluate = app.add_subcommand("evaluate", "calibration report for one method");
  add_common(evaluate, o);
  evaluate->add_option("--data", o.data, "input CSV (synthetic benchmark when omitted)");
  evaluate->add_option("--model", o.model_kind, "spot, dspot, tcn-spot or sbp")->required();
  evaluate->add_option("--model-file", o.model_file, "trained model (.sbpm); trained on the fly when omitted");

  auto* detect = app.add_subcommand("detect", "stream a detector over a series");
  add_common(detect, o);
  detect->add_option("--data", o.data, "input CSV (synthetic benchmark when omitted)");
  detect->add_option("--detector", o.detector, "spot, dspot or tcn-spot");
  detect->add_option("--side", o.side, "upper or lower");
  detect->add_option("--calibration", o.calibration, "points used to initialise the detector");
  detect->add_option("--stop", o.stop, "stop before this index and write a snapshot");
  detect->add_option("--resume", o.resume, "continue from a state.json snapshot");
  detect->add_option("--model-file", o.model_file, "point-forecast model for tcn-spot");

  auto* compare = app.add_subcommand("compare", "SPOT, DSPOT, TCN-SPOT and SBP side by side");
  add_common(compare, o);
  compare->add_option("--data", o.data, "input CSV (synthetic benchmark when omitted)");

  auto* rerun = app.add_subcommand("rerun", "repeat the run recorded in a manifest");
  rerun->add_option("--manifest", manifest, "manifest.json of an earlier run")->required();
  rerun->add_option("--out", o.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (rerun->parsed()) {
      cmd_rerun(manifest, o.out);
    } else {
      dispatch(app.get_subcommands().front()->get_name(), o);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return 0;
}
