#pragma once

#include <span>
#include <vector>

#include "sbp/spliced.hpp"

namespace sbp {

inline constexpr double kPositiveFloor = 1e-6;

// softplus(v) + 1e-6, computed without overflow.
double positive_map(double v) noexcept;

// raw = [n bin scores | xi_lower, beta_lower | xi_upper, beta_upper].
SplicedBinnedPareto heads_to_distribution(std::span<const double> raw, std::span<const double> edges,
                                          double tail_mass);

struct Thresholds {
  double lower;
  double upper;
};

// Base quantiles at q and 1 - q of the binned head.
Thresholds sbp_thresholds(std::span<const double> raw, std::span<const double> edges, double tail_mass);

// -(binned log density of the clamped bin + GPD log density of the excess
// beyond a threshold). The thresholds enter as constants. When grad is
// non-empty it receives d(loss)/d(raw).
double sbp_loss(std::span<const double> raw, std::span<const double> edges, double tail_mass, double x,
                std::span<double> grad = {});
// Same loss with the thresholds supplied by the caller.
double sbp_loss(std::span<const double> raw, std::span<const double> edges, const Thresholds& thresholds, double x,
                std::span<double> grad = {});

// (y - x)^2 on a single raw output.
double point_loss(std::span<const double> raw, double x, std::span<double> grad = {});

}  // namespace sbp
