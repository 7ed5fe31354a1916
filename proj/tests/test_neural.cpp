#include <doctest.h>

#include <cmath>
#include <vector>

#include "sbp/data.hpp"
#include "sbp/evt.hpp"
#include "sbp/heads.hpp"
#include "sbp/rng.hpp"
#include "sbp/tcn.hpp"
#include "sbp/train.hpp"
#include "support/gradient_check.hpp"
#include "support/oracles.hpp"

using namespace sbp;
using testing_support::Batch;
using testing_support::mean_loss;
using testing_support::random_batch;
using testing_support::toy_config;
using doctest::Approx;

namespace {

double inverse_positive_map(double y) { return std::log(std::expm1(y - kPositiveFloor)); }

std::vector<double> normal_series(std::uint64_t seed, std::size_t n) {
  CounterRng rng(seed);
  std::vector<double> xs(n);
  for (double& x : xs) x = rng.normal();
  return xs;
}

}  // namespace

TEST_CASE("forward shape, zero weights and causality") {
  const TcnConfig cfg = toy_config();
  CHECK(cfg.receptive_field() == 16);
  ModelParams zero(cfg, cfg.n_bins + 4);
  std::vector<double> window(16, 0.7);
  const auto out = forward(zero, window);
  CHECK(out.size() == cfg.n_bins + 4);
  for (double v : out) CHECK(v == 0.0);

  TcnConfig wide = cfg;
  wide.context_length = 40;
  const ModelParams params = ModelParams::glorot(wide, wide.n_bins + 4, seed_offset::kModelInit);
  CounterRng rng(3);
  std::vector<double> a(40);
  for (double& v : a) v = rng.normal();
  std::vector<double> b = a;
  for (std::size_t i = 0; i < 40 - wide.receptive_field(); ++i) b[i] = 100.0 * rng.normal();
  CHECK(forward(params, a) == forward(params, b));
  for (std::size_t i = 40 - wide.receptive_field(); i < 40; ++i) b[i] += 1.0;
  CHECK(forward(params, a) != forward(params, b));

  CHECK_THROWS_AS(forward(params, std::vector<double>(39, 0.0)), std::invalid_argument);
  TcnConfig too_short = cfg;
  too_short.context_length = 15;
  CHECK_THROWS_AS(too_short.validate(), std::invalid_argument);
}

TEST_CASE("glorot initialisation bounds and determinism") {
  const TcnConfig cfg = toy_config(5);
  const ModelParams a = ModelParams::glorot(cfg, cfg.n_bins + 4, seed_offset::kModelInit);
  const ModelParams b = ModelParams::glorot(cfg, cfg.n_bins + 4, seed_offset::kModelInit);
  CHECK(a.values() == b.values());
  for (const auto& slot : a.slots()) {
    const double taps = slot.dims.size() == 3 ? static_cast<double>(slot.dims[2]) : 1.0;
    const double limit = slot.dims.size() < 2
                             ? 0.0
                             : std::sqrt(6.0 / (static_cast<double>(slot.dims[0] + slot.dims[1]) * taps));
    for (std::size_t i = 0; i < slot.size; ++i) CHECK(std::abs(a.values()[slot.offset + i]) <= limit);
  }
}

TEST_CASE("heads to distribution") {
  const auto edges = BinnedDistribution::linear_edges(-3.0, 3.0, 6);
  std::vector<double> raw(10, 0.0);
  const auto d = heads_to_distribution(raw, edges, 0.05);
  for (std::size_t i = 0; i < 6; ++i) CHECK(d.base().prob(i) == Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(d.lower().xi() == Approx(std::log(2.0) + 1e-6).epsilon(1e-15));
  CHECK(d.upper().beta() == Approx(0.6931).epsilon(1e-4));

  CounterRng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    for (double& v : raw) v = 800.0 * (2.0 * rng.uniform() - 1.0);
    const auto e = heads_to_distribution(raw, edges, 0.05);
    CHECK(e.lower().xi() > 0.0);
    CHECK(e.lower().beta() > 0.0);
    CHECK(e.upper().xi() > 0.0);
    CHECK(e.upper().beta() > 0.0);
    CHECK(e.cdf(e.tau_upper()) == Approx(0.95).epsilon(1e-12));
  }
}

TEST_CASE("sbp loss terms") {
  const auto edges = BinnedDistribution::linear_edges(-3.0, 3.0, 6);
  std::vector<double> raw{0.3, -0.2, 1.0, 0.5, 0.0, -1.0, 0.0, 0.0, -60.0, inverse_positive_map(1.0)};
  const auto d = heads_to_distribution(raw, edges, 0.05);
  CHECK(sbp_loss(raw, edges, 0.05, 0.1) == -d.base().log_prob(0.1));

  const double x = d.tau_upper() + 1.0;
  CHECK(sbp_loss(raw, edges, 0.05, x) == Approx(-d.base().log_prob(x) + 1.0).epsilon(1e-5));

  for (double y : {-1e300, -1e6, -3.0, 0.0, 2.99, 1e6, 1e300}) CHECK(std::isfinite(sbp_loss(raw, edges, 0.05, y)));
}

TEST_CASE("reverse-mode gradients match central differences") {
  const double worst = testing_support::max_gradient_error(20);
  MESSAGE("max relative gradient error " << worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("point loss gradient") {
  const TcnConfig cfg = toy_config(9);
  ModelParams params = ModelParams::glorot(cfg, 1, seed_offset::kPointModelInit);
  CounterRng rng(8);
  std::vector<double> window(16);
  for (double& v : window) v = rng.normal();
  TcnTrace trace;
  std::vector<double> grad(params.size(), 0.0);
  std::vector<double> g_out(1);
  point_loss(forward(params, window, trace), 0.4, g_out);
  backward(params, trace, g_out, grad);
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params.values()[i];
    params.values()[i] = keep + 1e-5;
    const double up = point_loss(forward(params, window), 0.4);
    params.values()[i] = keep - 1e-5;
    const double down = point_loss(forward(params, window), 0.4);
    params.values()[i] = keep;
    const double numeric = (up - down) / 2e-5;
    if (std::abs(numeric) < 1e-8 && std::abs(grad[i]) < 1e-8) continue;
    worst = std::max(worst, std::abs(numeric - grad[i]) / std::max(std::abs(numeric), std::abs(grad[i])));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("duplicated batch leaves the mean gradient unchanged") {
  const auto edges = BinnedDistribution::linear_edges(-3.0, 3.0, 6);
  CounterRng rng(55);
  const ModelParams params = ModelParams::glorot(toy_config(3), 10, seed_offset::kModelInit);
  const Batch batch = random_batch(rng, 5, 16);
  Batch doubled = batch;
  doubled.windows.insert(doubled.windows.end(), batch.windows.begin(), batch.windows.end());
  doubled.targets.insert(doubled.targets.end(), batch.targets.begin(), batch.targets.end());
  std::vector<double> g1(params.size(), 0.0);
  std::vector<double> g2(params.size(), 0.0);
  mean_loss(params, batch, edges, 0.05, &g1);
  mean_loss(params, doubled, edges, 0.05, &g2);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == Approx(g1[i]).epsilon(1e-12).scale(1e-12));
}

TEST_CASE("saturated bin gives no bin gradient") {
  const auto edges = BinnedDistribution::linear_edges(-3.0, 3.0, 6);
  std::vector<double> raw(10, 0.0);
  raw[2] = 200.0;  // softmax mass 1 on bin 2; masses 1 - 5 eps and eps after the floor
  std::vector<double> grad(10);
  sbp_loss(raw, edges, 0.05, -0.5, grad);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(grad[i]) < 1e-9);
}

TEST_CASE("training on iid normal data approaches the exact binned likelihood") {
  const auto xs = normal_series(404, 6000);
  TcnConfig tcn;
  tcn.n_bins = 50;
  TrainConfig tc;
  tc.epochs = 30;
  const TrainResult result = train(xs, tcn, tc);
  const auto& model = result.model;

  // Oracle: exact bin masses of the standardized normal, exponential tails with
  // the exact mean excess beyond the thresholds.
  const double m = -model.standardization.center / model.standardization.scale;
  const double s = 1.0 / model.standardization.scale;
  const auto& edges = model.edges;
  std::vector<double> raw(tcn.n_bins + 4);
  for (std::size_t i = 0; i < tcn.n_bins; ++i) {
    double mass = oracle::normal_cdf((edges[i + 1] - m) / s) - oracle::normal_cdf((edges[i] - m) / s);
    if (i == 0) mass += oracle::normal_cdf((edges[0] - m) / s);
    if (i + 1 == tcn.n_bins) mass += 1.0 - oracle::normal_cdf((edges[i + 1] - m) / s);
    raw[i] = std::log(mass);
  }
  const auto base = heads_to_distribution(raw, edges, tc.tail_mass);
  auto mean_excess = [&](double tau, double sign) {
    return oracle::integrate([&](double y) { return oracle::normal_cdf(-sign * (tau + sign * y - m) / s); }, 0.0,
                             20.0 * s) /
           oracle::normal_cdf(-sign * (tau - m) / s);
  };
  raw[tcn.n_bins] = -40.0;
  raw[tcn.n_bins + 1] = inverse_positive_map(mean_excess(base.tau_lower(), -1.0));
  raw[tcn.n_bins + 2] = -40.0;
  raw[tcn.n_bins + 3] = inverse_positive_map(mean_excess(base.tau_upper(), 1.0));

  const std::size_t n_windows = xs.size() - tcn.context_length;
  const std::size_t n_val = n_windows / 10;
  double oracle_nll = 0.0;
  for (std::size_t t = xs.size() - n_val; t < xs.size(); ++t) {
    oracle_nll += sbp_loss(raw, edges, tc.tail_mass, model.standardization.apply(xs[t]));
  }
  oracle_nll /= static_cast<double>(n_val);
  const double best_val = result.log[result.best_epoch - 1].val_nll;
  MESSAGE("validation nll " << best_val << ", oracle " << oracle_nll);
  CHECK(std::abs(best_val - oracle_nll) < 0.1);

}

TEST_CASE("training nll mostly decreases on the sine benchmark") {
  SynthConfig sc;
  sc.length = 8000;
  const auto frame = gen_synthetic(sc);
  const auto split = split_and_window(frame, 0.8, 64);
  TrainConfig tc;
  tc.epochs = 30;
  const TrainResult result = train(split.train_values(), TcnConfig{}, tc);
  std::size_t non_increasing = 0;
  for (std::size_t e = 1; e < result.log.size(); ++e) non_increasing += result.log[e].train_nll <= result.log[e - 1].train_nll;
  const double share = static_cast<double>(non_increasing) / static_cast<double>(result.log.size() - 1);
  MESSAGE("non-increasing transitions " << non_increasing << " / " << result.log.size() - 1);
  CHECK(share >= 0.9);
}

TEST_CASE("training is bitwise reproducible") {
  const auto xs = normal_series(12, 1200);
  TcnConfig tcn = toy_config(77);
  tcn.context_length = 32;
  TrainConfig tc;
  tc.epochs = 4;
  const auto a = train(xs, tcn, tc);
  const auto b = train(xs, tcn, tc);
  CHECK(training_log_csv(a.log) == training_log_csv(b.log));
  CHECK(serialize_model(a.model) == serialize_model(b.model));
  CHECK(training_log_csv(a.log).rfind("epoch,train_nll,val_nll\n", 0) == 0);
}

TEST_CASE("heavy-tailed noise yields a heavier fitted upper tail") {
  auto mean_upper_xi = [](const NoiseSpec& noise) {
    SynthConfig sc;
    sc.length = 6000;
    sc.noise = noise;
    const auto frame = gen_synthetic(sc);
    const auto split = split_and_window(frame, 0.8, 64);
    TcnConfig tcn;
    TrainConfig tc;
    tc.epochs = 15;
    const auto result = train(split.train_values(), tcn, tc);
    double total = 0.0;
    for (std::size_t t : split.test_targets) total += predictive(result.model, split.context(t)).upper().xi();
    return total / static_cast<double>(split.test_targets.size());
  };
  const double heavy = mean_upper_xi(StudentTNoise{3.0, 0.3});
  const double light = mean_upper_xi(GaussianNoise{0.3 * std::sqrt(3.0)});
  MESSAGE("mean upper xi: student-t " << heavy << ", gaussian " << light);
  CHECK(heavy > light);
}

TEST_CASE("point forecaster learns a noiseless sine and a constant") {
  SynthConfig sc;
  sc.length = 4000;
  sc.noise = GaussianNoise{0.0};
  const auto frame = gen_synthetic(sc);
  const auto split = split_and_window(frame, 0.8, 64);
  TcnConfig tcn;
  TrainConfig tc;
  const auto result = point_forecast_train(split.train_values(), tcn, tc);
  double mse = 0.0;
  for (std::size_t t : split.test_targets) {
    const double e = result.model.standardization.apply(point_forecast(result.model, split.context(t))) -
                     result.model.standardization.apply(split.values[t]);
    mse += e * e;
  }
  mse /= static_cast<double>(split.test_targets.size());
  MESSAGE("noiseless sine test mse " << mse);
  CHECK(mse < 1e-3);

  const std::vector<double> flat(500, 4.25);
  TrainConfig short_tc;
  short_tc.epochs = 3;
  const auto constant = point_forecast_train(flat, tcn, short_tc);
  CHECK(point_forecast(constant.model, std::span<const double>(flat).first(64)) == Approx(4.25).epsilon(1e-9));
}

TEST_CASE("model container round trip") {
  const auto xs = normal_series(21, 800);
  TcnConfig tcn = toy_config(0xFFFFFFFFFFFFFFF1ULL);
  tcn.context_length = 20;
  TrainConfig tc;
  tc.epochs = 1;
  const auto result = train(xs, tcn, tc);
  const auto bytes = serialize_model(result.model);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SBPM");
  const TrainedModel back = deserialize_model(bytes);
  CHECK(back.params.values() == result.model.params.values());
  CHECK(back.params.config().seed == tcn.seed);
  CHECK(back.edges == result.model.edges);
  CHECK(serialize_model(back) == bytes);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(deserialize_model(truncated), std::invalid_argument);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_model(bad), std::invalid_argument);
}

TEST_CASE("standardization uses median and iqr") {
  const std::vector<double> xs{1, 2, 3, 4, 5};
  const auto st = Standardization::fit(xs);
  CHECK(st.center == 3.0);
  CHECK(st.scale == Approx(2.0 / 1.349).epsilon(1e-15));
  CHECK(Standardization::fit(std::vector<double>(5, 2.0)).scale == 1.0);
}
