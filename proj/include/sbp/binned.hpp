#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace sbp {

// Piecewise-constant density over n fixed bins. Bin i covers
// [edges[i], edges[i+1]) and carries mass exp(log_probs[i]).
class BinnedDistribution {
 public:
  // Added to every bin mass before renormalization.
  static constexpr double kMassFloor = 1e-10;

  // Validates: n >= 2, strictly increasing finite edges, finite log_probs whose
  // exponentials sum to 1 within 1e-9 and respect the mass floor.
  BinnedDistribution(std::vector<double> edges, std::vector<double> log_probs);

  // Normalized-exponential map of unconstrained scores, then floor + renormalize.
  static BinnedDistribution from_logits(std::vector<double> edges, std::span<const double> logits);
  // Non-negative masses (any positive total), then floor + renormalize.
  static BinnedDistribution from_probs(std::vector<double> edges, std::span<const double> probs);

  // n + 1 edges linearly spaced on [lo, hi].
  static std::vector<double> linear_edges(double lo, double hi, std::size_t n_bins);

  std::size_t size() const noexcept { return log_probs_.size(); }
  std::span<const double> edges() const noexcept { return edges_; }
  std::span<const double> log_probs() const noexcept { return log_probs_; }
  double prob(std::size_t bin) const { return probs_[bin]; }
  double width(std::size_t bin) const { return edges_[bin + 1] - edges_[bin]; }

  // Bin containing x; values outside the support map to the nearest edge bin.
  std::size_t bin_index(double x) const noexcept;

  // log(p_i / width_i) of the (clamped) bin containing x.
  double log_prob(double x) const noexcept;
  double cdf(double x) const noexcept;
  // Throws std::invalid_argument for NaN; levels are clamped to [0, 1].
  double icdf(double level) const;

 private:
  std::vector<double> edges_;
  std::vector<double> log_probs_;
  std::vector<double> probs_;
  std::vector<double> cumulative_;  // n + 1 entries, cumulative_[0] == 0
};

}  // namespace sbp
