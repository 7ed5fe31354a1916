#pragma once

namespace sbp {

// Below this |xi| the exponential limit is used in every GPD formula.
inline constexpr double kXiEpsilon = 1e-6;

// Generalised Pareto law of an excess y >= 0 over a threshold:
//
//   P(Y <= y) = 1 - (1 + xi * y / beta)^(-1/xi)      (xi != 0)
//             = 1 - exp(-y / beta)                   (xi == 0)
//
// Negative xi bounds the support at -beta / xi.
class GeneralizedPareto {
 public:
  // Throws std::invalid_argument unless beta > 0 and both are finite.
  GeneralizedPareto(double xi, double beta);

  double xi() const noexcept { return xi_; }
  double beta() const noexcept { return beta_; }

  // Right end of the support; +infinity unless xi is negative.
  double support_end() const noexcept;

  // Throws std::invalid_argument for negative or NaN excess.
  double cdf(double excess) const;
  double survival(double excess) const;

  // Out-of-support excess yields -infinity rather than throwing.
  double log_pdf(double excess) const noexcept;

  // Inverse of cdf on [0, 1). Level 1 is accepted only for bounded support.
  double icdf(double level) const;

  // Inverse of survival on (0, 1]; more accurate than icdf(1 - p) for small p.
  double isf(double tail_probability) const;

  bool is_exponential() const noexcept;

  friend bool operator==(const GeneralizedPareto&, const GeneralizedPareto&) = default;

 private:
  double xi_;
  double beta_;
};

}  // namespace sbp
