#include "sbp/binned.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sbp {

namespace {

std::vector<double> floored_log_probs(std::span<const double> probs) {
  const std::size_t n = probs.size();
  double total = 0.0;
  for (double p : probs) total += p;
  std::vector<double> out(n);
  const double denom = 1.0 + static_cast<double>(n) * BinnedDistribution::kMassFloor;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::log((probs[i] / total + BinnedDistribution::kMassFloor) / denom);
  }
  return out;
}

}  // namespace

BinnedDistribution::BinnedDistribution(std::vector<double> edges, std::vector<double> log_probs)
    : edges_(std::move(edges)), log_probs_(std::move(log_probs)) {
  const std::size_t n = log_probs_.size();
  if (n < 2) throw std::invalid_argument("BinnedDistribution: need at least 2 bins");
  if (edges_.size() != n + 1) {
    throw std::invalid_argument("BinnedDistribution: edges must have n + 1 entries");
  }
  for (std::size_t i = 0; i <= n; ++i) {
    if (!std::isfinite(edges_[i])) throw std::invalid_argument("BinnedDistribution: non-finite edge");
    if (i > 0 && !(edges_[i] > edges_[i - 1])) {
      throw std::invalid_argument("BinnedDistribution: edges must be strictly increasing");
    }
  }
  const double min_mass = kMassFloor / (1.0 + static_cast<double>(n) * kMassFloor) * (1.0 - 1e-9);
  probs_.resize(n);
  cumulative_.assign(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(log_probs_[i])) {
      throw std::invalid_argument("BinnedDistribution: non-finite log probability");
    }
    probs_[i] = std::exp(log_probs_[i]);
    if (probs_[i] < min_mass) throw std::invalid_argument("BinnedDistribution: bin mass below floor");
    cumulative_[i + 1] = cumulative_[i] + probs_[i];
  }
  if (std::abs(cumulative_[n] - 1.0) > 1e-9) {
    throw std::invalid_argument("BinnedDistribution: masses do not sum to 1");
  }
}

BinnedDistribution BinnedDistribution::from_logits(std::vector<double> edges,
                                                   std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("BinnedDistribution: empty logits");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> probs(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) probs[i] = std::exp(logits[i] - peak);
  return {std::move(edges), floored_log_probs(probs)};
}

BinnedDistribution BinnedDistribution::from_probs(std::vector<double> edges,
                                                  std::span<const double> probs) {
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw std::invalid_argument("BinnedDistribution: masses must be finite and >= 0");
    }
    total += p;
  }
  if (!(total > 0.0)) throw std::invalid_argument("BinnedDistribution: total mass is zero");
  return {std::move(edges), floored_log_probs(probs)};
}

std::vector<double> BinnedDistribution::linear_edges(double lo, double hi, std::size_t n_bins) {
  if (n_bins < 2 || !(hi > lo)) throw std::invalid_argument("linear_edges: need n >= 2 and hi > lo");
  std::vector<double> edges(n_bins + 1);
  const double step = (hi - lo) / static_cast<double>(n_bins);
  for (std::size_t i = 0; i <= n_bins; ++i) edges[i] = lo + step * static_cast<double>(i);
  edges[n_bins] = hi;
  return edges;
}

std::size_t BinnedDistribution::bin_index(double x) const noexcept {
  const std::size_t n = size();
  if (!(x >= edges_[1])) return 0;
  if (x >= edges_[n - 1]) return n - 1;
  auto it = std::upper_bound(edges_.begin(), edges_.end(), x);
  return static_cast<std::size_t>(it - edges_.begin()) - 1;
}

double BinnedDistribution::log_prob(double x) const noexcept {
  const std::size_t i = bin_index(x);
  return log_probs_[i] - std::log(width(i));
}

double BinnedDistribution::cdf(double x) const noexcept {
  if (x <= edges_.front()) return 0.0;
  if (x >= edges_.back()) return 1.0;
  const std::size_t i = bin_index(x);
  const double value = cumulative_[i] + probs_[i] * (x - edges_[i]) / width(i);
  return std::clamp(value, 0.0, 1.0);
}

double BinnedDistribution::icdf(double level) const {
  if (std::isnan(level)) throw std::invalid_argument("BinnedDistribution icdf: NaN level");
  if (level <= 0.0) return edges_.front();
  if (level >= cumulative_.back()) return edges_.back();
  // First bin whose upper cumulative reaches the level (left-continuous at edges).
  auto it = std::lower_bound(cumulative_.begin() + 1, cumulative_.end(), level);
  const std::size_t i = static_cast<std::size_t>(it - cumulative_.begin()) - 1;
  const double fraction = (level - cumulative_[i]) / probs_[i];
  return edges_[i] + width(i) * std::clamp(fraction, 0.0, 1.0);
}

}  // namespace sbp
