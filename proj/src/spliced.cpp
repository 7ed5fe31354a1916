#include "sbp/spliced.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "sbp/json_text.hpp"

namespace sbp {

SplicedBinnedPareto::SplicedBinnedPareto(BinnedDistribution base, GeneralizedPareto lower,
                                         GeneralizedPareto upper, double tail_mass)
    : base_(std::move(base)), lower_(lower), upper_(upper), tail_mass_(tail_mass) {
  if (!(tail_mass > 0.0 && tail_mass < 0.5)) {
    throw std::invalid_argument("splice: tail mass must lie in (0, 0.5)");
  }
  tau_lower_ = base_.icdf(tail_mass);
  tau_upper_ = base_.icdf(1.0 - tail_mass);
  if (!(tau_lower_ < tau_upper_)) throw std::invalid_argument("splice: degenerate base, tau_lower == tau_upper");
  base_at_lower_ = base_.cdf(tau_lower_);
  const double central = base_.cdf(tau_upper_) - base_at_lower_;
  if (!(central > 0.0)) throw std::invalid_argument("splice: degenerate base, no central mass");
  base_scale_ = (1.0 - 2.0 * tail_mass) / central;
  log_base_scale_ = std::log(base_scale_);
  log_tail_mass_ = std::log(tail_mass);
}

double SplicedBinnedPareto::log_prob(double x) const noexcept {
  if (std::isnan(x)) return x;
  if (x <= tau_lower_) return log_tail_mass_ + lower_.log_pdf(tau_lower_ - x);
  if (x >= tau_upper_) return log_tail_mass_ + upper_.log_pdf(x - tau_upper_);
  return log_base_scale_ + base_.log_prob(x);
}

double SplicedBinnedPareto::cdf(double x) const noexcept {
  if (std::isnan(x)) return x;
  if (x == -std::numeric_limits<double>::infinity()) return 0.0;
  if (x == std::numeric_limits<double>::infinity()) return 1.0;
  if (x <= tau_lower_) return tail_mass_ * lower_.survival(tau_lower_ - x);
  if (x >= tau_upper_) return 1.0 - tail_mass_ * upper_.survival(x - tau_upper_);
  return tail_mass_ + base_scale_ * (base_.cdf(x) - base_at_lower_);
}

double SplicedBinnedPareto::icdf(double level) const {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("SBP icdf: level must lie in (0, 1)");
  if (level <= tail_mass_) return tau_lower_ - lower_.isf(level / tail_mass_);
  // 1 - level can round above q even when level >= 1 - q.
  if (level >= 1.0 - tail_mass_) return tau_upper_ + upper_.isf(std::min(1.0, (1.0 - level) / tail_mass_));
  const double x = base_.icdf(base_at_lower_ + (level - tail_mass_) / base_scale_);
  return std::clamp(x, tau_lower_, tau_upper_);
}

std::vector<double> SplicedBinnedPareto::sample(CounterRng& rng, std::size_t count) const {
  std::vector<double> out(count);
  for (auto& x : out) x = icdf(rng.uniform());
  return out;
}

std::string to_json(const SplicedBinnedPareto& d) {
  using json_text::number;
  std::string out = "{\"version\":1,\"edges\":";
  out += json_text::array(d.base().edges());
  out += ",\"log_probs\":";
  out += json_text::array(d.base().log_probs());
  out += ",\"lower\":{\"xi\":" + number(d.lower().xi()) + ",\"beta\":" + number(d.lower().beta()) + "}";
  out += ",\"upper\":{\"xi\":" + number(d.upper().xi()) + ",\"beta\":" + number(d.upper().beta()) + "}";
  out += ",\"q\":" + number(d.tail_mass()) + "}";
  return out;
}

SplicedBinnedPareto spliced_from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("distribution JSON: ") + e.what());
  }
  try {
    if (doc.at("version").get<int>() != 1) throw std::invalid_argument("distribution JSON: unsupported version");
    auto tail = [](const nlohmann::json& t) {
      return GeneralizedPareto(t.at("xi").get<double>(), t.at("beta").get<double>());
    };
    BinnedDistribution base(doc.at("edges").get<std::vector<double>>(),
                            doc.at("log_probs").get<std::vector<double>>());
    return {std::move(base), tail(doc.at("lower")), tail(doc.at("upper")), doc.at("q").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("distribution JSON: ") + e.what());
  }
}

}  // namespace sbp
