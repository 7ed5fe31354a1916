#include "sbp/evt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include <boost/math/tools/toms748_solve.hpp>

#include "json.hpp"
#include "sbp/json_text.hpp"

namespace sbp {

namespace {

// Relative bracket width 2^-40, about 1e-12.
constexpr int kRootBits = 40;
constexpr std::uintmax_t kMaxRootIterations = 200;

double mean_of(std::span<const double> values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

void check_excess(double excess) {
  if (!(excess >= 0.0) || !std::isfinite(excess)) {
    throw std::invalid_argument("GPD fit: excesses must be finite and >= 0");
  }
}

}  // namespace

GrimshawGrid GrimshawGrid::for_excesses(std::span<const double> excesses, const GrimshawOptions& options) {
  if (excesses.empty()) throw EvtError("degenerate excesses");
  const double mean = mean_of(excesses);
  const double max = *std::max_element(excesses.begin(), excesses.end());
  const double min = *std::min_element(excesses.begin(), excesses.end());
  const double scale = mean > 0.0 ? mean : 1.0;
  const double delta = options.delta;

  GrimshawGrid grid;
  grid.points = options.grid_points;
  grid.negative_far = max > 0.0 ? 1.0 / max : 1.0 / scale;
  grid.negative_near = std::min(delta / scale, grid.negative_far * delta);
  grid.positive_near = delta / scale;
  // Grimshaw's classic upper bound 2 (mean - min) / min^2 covers shapes above
  // 2/3 that 2 / mean misses; capped for excesses near zero.
  double far = 2.0 / scale;
  const double cap = 1e6 / scale;
  if (min > 0.0) {
    far = std::max(far, std::min(2.0 * (mean - min) / (min * min), cap));
  } else {
    far = cap;
  }
  grid.positive_far = far;
  return grid;
}

GpdFitter::GpdFitter(std::span<const double> excesses, GrimshawOptions options)
    : GpdFitter(excesses, GrimshawGrid::for_excesses(excesses, options), options) {}

GpdFitter::GpdFitter(std::span<const double> excesses, const GrimshawGrid& grid, GrimshawOptions options)
    : options_(options), grid_(grid) {
  if (grid_.points < 2) throw std::invalid_argument("GPD fit: grid needs at least 2 points per side");
  build_grid();
  excesses_.reserve(excesses.size());
  for (double y : excesses) add(y);
}

void GpdFitter::build_grid() {
  const std::size_t g = grid_.points;
  points_.clear();
  points_.reserve(2 * g);
  auto geometric = [](double from, double to, std::size_t k, std::size_t count) {
    if (k == 0) return from;
    if (k + 1 == count) return to;
    const double t = static_cast<double>(k) / static_cast<double>(count - 1);
    return std::exp(std::log(from) + t * (std::log(to) - std::log(from)));
  };
  // Negative side: geometric in |theta| up to half the bound, then geometric in
  // the distance to the bound, where the likelihood of short-tailed data bends.
  const double bound = grid_.negative_far;
  const std::size_t inner = g / 2;
  const std::size_t outer = g - inner;
  std::vector<double> magnitudes;
  magnitudes.reserve(g);
  for (std::size_t k = 0; k < inner; ++k) {
    magnitudes.push_back(geometric(grid_.negative_near, 0.5 * bound, k, inner + 1));
  }
  for (std::size_t k = 0; k < outer; ++k) {
    magnitudes.push_back(bound - geometric(0.5 * bound, bound * options_.delta, k, outer));
  }
  for (std::size_t k = g; k-- > 0;) points_.push_back({-magnitudes[k]});
  negative_count_ = g;
  for (std::size_t k = 0; k < g; ++k) {
    points_.push_back({geometric(grid_.positive_near, grid_.positive_far, k, g)});
  }
}

void GpdFitter::accumulate(GridPoint& point, double excess) const {
  if (!point.valid) return;
  const double a = 1.0 + point.theta * excess;
  if (!(a > 0.0)) {
    point.valid = false;
    return;
  }
  point.sum_inverse += 1.0 / a;
  point.sum_log += std::log1p(point.theta * excess);
}

void GpdFitter::add(double excess) {
  check_excess(excess);
  if (excesses_.empty()) {
    min_ = max_ = excess;
  } else {
    min_ = std::min(min_, excess);
    max_ = std::max(max_, excess);
  }
  distinct_ = max_ > min_;
  excesses_.push_back(excess);
  sum_ += excess;
  for (auto& p : points_) accumulate(p, excess);
}

double GpdFitter::score(double theta, double* sum_log_out) const {
  double sum_inverse = 0.0;
  double sum_log = 0.0;
  for (double y : excesses_) {
    sum_inverse += 1.0 / (1.0 + theta * y);
    sum_log += std::log1p(theta * y);
  }
  if (sum_log_out != nullptr) *sum_log_out = sum_log;
  const double n = static_cast<double>(excesses_.size());
  return (sum_inverse / n) * (1.0 + sum_log / n) - 1.0;
}

GeneralizedPareto GpdFitter::fit() const {
  if (excesses_.size() < 2 || !distinct_) throw EvtError("degenerate excesses");
  const double n = static_cast<double>(excesses_.size());
  const double mean = sum_ / n;

  GeneralizedPareto best(0.0, mean);
  double best_ll = -n * std::log(mean) - n;
  bool found_root = false;

  auto consider_root = [&](double theta, double sum_log) {
    const double xi = sum_log / n;
    const double beta = xi / theta;
    if (!(beta > 0.0) || !std::isfinite(beta)) return;
    // w vanishes at theta = 0 as well; rounding there yields the exponential fit again.
    if (std::abs(xi) < kXiEpsilon) return;
    found_root = true;
    const double ll = -n * std::log(beta) - n * (1.0 + xi);
    if (ll > best_ll) {
      best_ll = ll;
      best = GeneralizedPareto(xi, beta);
    }
  };

  auto grid_score = [n](const GridPoint& p) {
    return (p.sum_inverse / n) * (1.0 + p.sum_log / n) - 1.0;
  };

  auto scan = [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j + 1 < end; ++j) {
      const GridPoint& a = points_[j];
      const GridPoint& b = points_[j + 1];
      if (!a.valid || !b.valid) continue;
      const double wa = grid_score(a);
      const double wb = grid_score(b);
      if (wa == 0.0) {
        consider_root(a.theta, a.sum_log);
        continue;
      }
      if (!(wa * wb < 0.0)) continue;
      // xi(theta) = mean log1p(theta y) is monotone; such a root is the exponential fit.
      if (std::abs(a.sum_log / n) < kXiEpsilon && std::abs(b.sum_log / n) < kXiEpsilon) continue;
      // The last two evaluations cover the final bracket ends; reuse their log sums.
      double recent[2][2] = {{a.theta, a.sum_log}, {b.theta, b.sum_log}};
      int slot = 0;
      std::uintmax_t iterations = kMaxRootIterations;
      const auto bracket = boost::math::tools::toms748_solve(
          [&](double theta) {
            double sum_log = 0.0;
            const double w = score(theta, &sum_log);
            recent[slot][0] = theta;
            recent[slot][1] = sum_log;
            slot ^= 1;
            return w;
          },
          a.theta, b.theta, wa, wb, boost::math::tools::eps_tolerance<double>(kRootBits), iterations);
      bool reused = false;
      for (const auto& r : recent) {
        if (!reused && (r[0] == bracket.first || r[0] == bracket.second)) {
          consider_root(r[0], r[1]);
          reused = true;
        }
      }
      if (!reused) {
        const double theta = 0.5 * (bracket.first + bracket.second);
        double sum_log = 0.0;
        score(theta, &sum_log);
        consider_root(theta, sum_log);
      }
    }
  };
  scan(0, negative_count_);
  scan(negative_count_, points_.size());

  if (!found_root) {
    try {
      const GeneralizedPareto moments = fit_gpd_moments(excesses_);
      const double ll = gpd_log_likelihood(excesses_, moments);
      if (ll > best_ll) best = moments;
    } catch (const EvtError&) {
    }
  }
  return best;
}

GeneralizedPareto fit_gpd_mle(std::span<const double> excesses, const GrimshawOptions& options) {
  if (excesses.size() < 2) throw EvtError("degenerate excesses");
  return GpdFitter(excesses, options).fit();
}

GeneralizedPareto fit_gpd_moments(std::span<const double> excesses) {
  if (excesses.size() < 2) throw EvtError("degenerate excesses");
  for (double y : excesses) check_excess(y);
  const double mean = mean_of(excesses);
  double ss = 0.0;
  for (double y : excesses) ss += (y - mean) * (y - mean);
  const double variance = ss / static_cast<double>(excesses.size() - 1);
  if (!(variance > 0.0) || !(mean > 0.0)) throw EvtError("degenerate excesses");
  const double ratio = mean * mean / variance;
  return {0.5 * (1.0 - ratio), 0.5 * mean * (1.0 + ratio)};
}

double gpd_log_likelihood(std::span<const double> excesses, const GeneralizedPareto& g) {
  double ll = 0.0;
  for (double y : excesses) ll += g.log_pdf(y);
  return ll;
}

PotQuantile pot_quantile(const GeneralizedPareto& g, double tau, double q, std::size_t n_total,
                         std::size_t n_peaks) {
  if (n_peaks == 0) throw std::invalid_argument("pot_quantile: need at least one peak");
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("pot_quantile: q must lie in (0, 1)");
  const double ratio = q * static_cast<double>(n_total) / static_cast<double>(n_peaks);
  if (ratio >= 1.0) return {tau, true};
  const double log_ratio = std::log(ratio);
  if (g.is_exponential()) return {tau - g.beta() * log_ratio, false};
  return {tau + g.beta() / g.xi() * std::expm1(-g.xi() * log_ratio), false};
}

double empirical_quantile(std::span<const double> values, double level) {
  if (values.empty()) throw std::invalid_argument("empirical_quantile: empty input");
  if (!(level >= 0.0 && level <= 1.0)) throw std::invalid_argument("empirical_quantile: level outside [0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = level * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::string_view to_string(Side side) noexcept { return side == Side::Upper ? "upper" : "lower"; }

std::string_view to_string(StepKind kind) noexcept {
  switch (kind) {
    case StepKind::Normal:
      return "normal";
    case StepKind::Peak:
      return "peak";
    case StepKind::Anomaly:
      return "anomaly";
  }
  return "normal";
}

double DetectorState::drift_mean() const noexcept {
  if (drift_window_.empty()) return 0.0;
  double sum = 0.0;
  for (double v : drift_window_) sum += v;
  return sum / static_cast<double>(drift_window_.size());
}

PotQuantile DetectorState::quantile_at(double q) const {
  PotQuantile pq = pot_quantile(gpd_, tau_, q, n_total_, n_peaks());
  pq.value *= sign();
  return pq;
}

void DetectorState::recompute_z() {
  const PotQuantile pq = pot_quantile(gpd_, tau_, q_level_, n_total_, n_peaks());
  z_q_ = pq.value;
  inside_peaks_ = pq.inside_peaks;
}

DetectorState spot_init(std::span<const double> calibration, const DetectorConfig& config) {
  if (!(config.q_level > 0.0 && config.q_level < 1.0)) throw std::invalid_argument("SPOT: q must lie in (0, 1)");
  const double level = config.tau_level.value_or(config.side == Side::Upper ? 0.95 : 0.05);
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("SPOT: tau level must lie in (0, 1)");
  if (config.refit_every == 0) throw std::invalid_argument("SPOT: refit cadence must be >= 1");
  if (calibration.size() < 100) throw EvtError("insufficient data");

  const double sign = config.side == Side::Upper ? 1.0 : -1.0;
  std::vector<double> mirrored(calibration.size());
  for (std::size_t i = 0; i < calibration.size(); ++i) {
    if (!std::isfinite(calibration[i])) throw std::invalid_argument("SPOT: non-finite calibration value");
    mirrored[i] = sign * calibration[i];
  }
  const double tau = empirical_quantile(mirrored, config.side == Side::Upper ? level : 1.0 - level);
  std::vector<double> excesses;
  for (double x : mirrored) {
    if (x > tau) excesses.push_back(x - tau);
  }
  if (excesses.size() < 10) throw EvtError("insufficient peaks");

  GpdFitter fitter(excesses, config.grimshaw);
  const GeneralizedPareto gpd = fitter.fit();
  DetectorState state(std::move(fitter), gpd);
  state.tau_ = tau;
  state.n_total_ = calibration.size();
  state.q_level_ = config.q_level;
  state.side_ = config.side;
  state.refit_every_ = config.refit_every;
  state.recompute_z();
  return state;
}

StepOutcome spot_step(DetectorState& state, double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("SPOT: non-finite observation");
  const double xm = state.sign() * x;
  ++state.n_total_;
  if (xm > state.z_q_) return {StepKind::Anomaly, state.z_q()};
  if (xm >= state.tau_) {
    state.fitter_.add(xm - state.tau_);
    if (++state.peaks_since_refit_ >= state.refit_every_) {
      state.gpd_ = state.fitter_.fit();
      state.peaks_since_refit_ = 0;
    }
    state.recompute_z();
    return {StepKind::Peak, state.z_q()};
  }
  return {StepKind::Normal, state.z_q()};
}

DetectorState dspot_init(std::span<const double> calibration, const DetectorConfig& config) {
  const std::size_t depth = config.drift_depth;
  if (depth == 0) throw std::invalid_argument("DSPOT: drift depth must be >= 1");
  if (calibration.size() < depth + 100) throw EvtError("insufficient data");
  std::deque<double> window(calibration.begin(), calibration.begin() + static_cast<std::ptrdiff_t>(depth));
  std::vector<double> detrended;
  detrended.reserve(calibration.size() - depth);
  for (std::size_t i = depth; i < calibration.size(); ++i) {
    double sum = 0.0;
    for (double v : window) sum += v;
    detrended.push_back(calibration[i] - sum / static_cast<double>(depth));
    window.push_back(calibration[i]);
    window.pop_front();
  }
  DetectorState state = spot_init(detrended, config);
  state.drift_depth_ = depth;
  state.drift_window_ = std::move(window);
  return state;
}

StepOutcome dspot_step(DetectorState& state, double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("DSPOT: non-finite observation");
  const StepOutcome outcome = spot_step(state, x - state.drift_mean());
  if (outcome.kind != StepKind::Anomaly && state.drift_depth_ > 0) {
    state.drift_window_.push_back(x);
    while (state.drift_window_.size() > state.drift_depth_) state.drift_window_.pop_front();
  }
  return outcome;
}

std::string DetectorState::to_json() const {
  using json_text::number;
  std::vector<double> window(drift_window_.begin(), drift_window_.end());
  std::string out = "{\"version\":1";
  out += ",\"side\":\"" + std::string(to_string(side_)) + "\"";
  out += ",\"tau\":" + number(tau());
  out += ",\"z_q\":" + number(z_q());
  out += ",\"q_level\":" + number(q_level_);
  out += ",\"n_total\":" + std::to_string(n_total_);
  out += ",\"n_peaks\":" + std::to_string(n_peaks());
  out += ",\"excesses\":" + json_text::array(excesses());
  out += ",\"drift_window\":" + json_text::array(window);
  out += ",\"drift_depth\":" + std::to_string(drift_depth_);
  out += ",\"refit_every\":" + std::to_string(refit_every_);
  out += ",\"peaks_since_refit\":" + std::to_string(peaks_since_refit_);
  out += ",\"z_q_inside_peaks\":" + std::string(inside_peaks_ ? "true" : "false");
  out += ",\"gpd\":{\"xi\":" + number(gpd_.xi()) + ",\"beta\":" + number(gpd_.beta()) + "}";
  const GrimshawGrid& g = fitter_.grid();
  out += ",\"grid\":{\"negative_near\":" + number(g.negative_near) + ",\"negative_far\":" +
         number(g.negative_far) + ",\"positive_near\":" + number(g.positive_near) +
         ",\"positive_far\":" + number(g.positive_far) + ",\"points\":" + std::to_string(g.points) +
         ",\"delta\":" + number(fitter_.options().delta) + "}";
  out += "}";
  return out;
}

DetectorState DetectorState::from_json(std::string_view text) {
  try {
    const nlohmann::json doc = nlohmann::json::parse(text);
    if (doc.at("version").get<int>() != 1) throw std::invalid_argument("detector JSON: unsupported version");
    const std::string side = doc.at("side").get<std::string>();
    if (side != "upper" && side != "lower") throw std::invalid_argument("detector JSON: bad side");

    const auto& g = doc.at("grid");
    GrimshawGrid grid;
    grid.negative_near = g.at("negative_near").get<double>();
    grid.negative_far = g.at("negative_far").get<double>();
    grid.positive_near = g.at("positive_near").get<double>();
    grid.positive_far = g.at("positive_far").get<double>();
    grid.points = g.at("points").get<std::size_t>();
    GrimshawOptions options;
    options.grid_points = grid.points;
    options.delta = g.at("delta").get<double>();

    const auto excesses = doc.at("excesses").get<std::vector<double>>();
    if (excesses.size() != doc.at("n_peaks").get<std::size_t>()) {
      throw std::invalid_argument("detector JSON: n_peaks does not match excesses");
    }
    GpdFitter fitter(excesses, grid, options);
    const auto& gpd = doc.at("gpd");
    DetectorState state(std::move(fitter), GeneralizedPareto(gpd.at("xi").get<double>(), gpd.at("beta").get<double>()));
    state.side_ = side == "upper" ? Side::Upper : Side::Lower;
    state.tau_ = state.sign() * doc.at("tau").get<double>();
    state.z_q_ = state.sign() * doc.at("z_q").get<double>();
    state.q_level_ = doc.at("q_level").get<double>();
    state.n_total_ = doc.at("n_total").get<std::size_t>();
    state.drift_depth_ = doc.at("drift_depth").get<std::size_t>();
    const auto window = doc.at("drift_window").get<std::vector<double>>();
    state.drift_window_.assign(window.begin(), window.end());
    state.refit_every_ = doc.at("refit_every").get<std::size_t>();
    state.peaks_since_refit_ = doc.at("peaks_since_refit").get<std::size_t>();
    state.inside_peaks_ = doc.at("z_q_inside_peaks").get<bool>();
    if (state.n_peaks() > state.n_total_ || state.drift_window_.size() > state.drift_depth_) {
      throw std::invalid_argument("detector JSON: inconsistent counts");
    }
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("detector JSON: ") + e.what());
  }
}

}  // namespace sbp
