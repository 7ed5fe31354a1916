#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "sbp/binned.hpp"
#include "sbp/gpd.hpp"
#include "sbp/rng.hpp"

namespace sbp {

/// Binned base density with Generalised Pareto tails.
///
/// The thresholds are the base quantiles at levels q and 1 - q. Below
/// tau_lower the CDF is q * S_lower(tau_lower - x), above tau_upper it is
/// 1 - q * S_upper(x - tau_upper), and in between the base CDF is affinely
/// rescaled so the central region carries exactly 1 - 2q. At a threshold the
/// tail branch is taken, so cdf(tau_lower) == q and cdf(tau_upper) == 1 - q
/// hold exactly.
class SplicedBinnedPareto {
 public:
  // Throws std::invalid_argument unless 0 < q < 0.5 and tau_lower < tau_upper.
  SplicedBinnedPareto(BinnedDistribution base, GeneralizedPareto lower, GeneralizedPareto upper,
                      double tail_mass);

  const BinnedDistribution& base() const noexcept { return base_; }
  const GeneralizedPareto& lower() const noexcept { return lower_; }
  const GeneralizedPareto& upper() const noexcept { return upper_; }
  double tail_mass() const noexcept { return tail_mass_; }
  double tau_lower() const noexcept { return tau_lower_; }
  double tau_upper() const noexcept { return tau_upper_; }

  double log_prob(double x) const noexcept;
  double cdf(double x) const noexcept;
  // Throws std::invalid_argument for levels outside (0, 1).
  double icdf(double level) const;

  std::vector<double> sample(CounterRng& rng, std::size_t count) const;

 private:
  BinnedDistribution base_;
  GeneralizedPareto lower_;
  GeneralizedPareto upper_;
  double tail_mass_;
  double tau_lower_;
  double tau_upper_;
  double base_at_lower_;  // base cdf at tau_lower
  double base_scale_;     // (1 - 2q) / (base cdf mass between the thresholds)
  double log_base_scale_;
  double log_tail_mass_;
};

inline SplicedBinnedPareto splice(BinnedDistribution base, GeneralizedPareto lower,
                                  GeneralizedPareto upper, double tail_mass) {
  return {std::move(base), lower, upper, tail_mass};
}

// Versioned JSON document:
// {"version":1,"edges":[..],"log_probs":[..],"lower":{"xi":..,"beta":..},"upper":{..},"q":..}
std::string to_json(const SplicedBinnedPareto& d);
SplicedBinnedPareto spliced_from_json(std::string_view text);

}  // namespace sbp
