#include "sbp/gpd.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace sbp {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

GeneralizedPareto::GeneralizedPareto(double xi, double beta) : xi_(xi), beta_(beta) {
  if (!std::isfinite(xi) || !std::isfinite(beta) || !(beta > 0.0)) {
    throw std::invalid_argument("GeneralizedPareto: need finite xi and beta > 0 (xi=" +
                                std::to_string(xi) + ", beta=" + std::to_string(beta) + ")");
  }
}

bool GeneralizedPareto::is_exponential() const noexcept { return std::abs(xi_) < kXiEpsilon; }

double GeneralizedPareto::support_end() const noexcept {
  if (is_exponential() || xi_ > 0.0) return kInf;
  return -beta_ / xi_;
}

double GeneralizedPareto::survival(double excess) const {
  if (!(excess >= 0.0)) throw std::invalid_argument("GPD: excess must be >= 0");
  if (is_exponential()) return std::exp(-excess / beta_);
  if (excess >= support_end()) return 0.0;
  return std::exp(-std::log1p(xi_ * excess / beta_) / xi_);
}

double GeneralizedPareto::cdf(double excess) const {
  if (!(excess >= 0.0)) throw std::invalid_argument("GPD: excess must be >= 0");
  if (is_exponential()) return -std::expm1(-excess / beta_);
  if (excess >= support_end()) return 1.0;
  return -std::expm1(-std::log1p(xi_ * excess / beta_) / xi_);
}

double GeneralizedPareto::log_pdf(double excess) const noexcept {
  if (!(excess >= 0.0)) return -kInf;
  if (is_exponential()) return -std::log(beta_) - excess / beta_;
  if (excess >= support_end()) return -kInf;
  return -std::log(beta_) - (1.0 + 1.0 / xi_) * std::log1p(xi_ * excess / beta_);
}

double GeneralizedPareto::icdf(double level) const {
  if (!(level >= 0.0 && level <= 1.0)) throw std::invalid_argument("GPD icdf: level outside [0, 1]");
  if (level == 1.0) {
    if (is_exponential() || xi_ > 0.0) {
      throw std::invalid_argument("GPD icdf: level 1 is infinite for xi >= 0");
    }
    return support_end();
  }
  const double log_survival = std::log1p(-level);
  if (is_exponential()) return -beta_ * log_survival;
  return beta_ / xi_ * std::expm1(-xi_ * log_survival);
}

double GeneralizedPareto::isf(double tail_probability) const {
  if (!(tail_probability >= 0.0 && tail_probability <= 1.0)) {
    throw std::invalid_argument("GPD isf: probability outside [0, 1]");
  }
  if (tail_probability == 0.0) return icdf(1.0);
  const double log_survival = std::log(tail_probability);
  if (is_exponential()) return -beta_ * log_survival;
  return beta_ / xi_ * std::expm1(-xi_ * log_survival);
}

}  // namespace sbp
