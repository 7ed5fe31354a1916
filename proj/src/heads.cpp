#include "sbp/heads.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sbp {

namespace {

double sigmoid(double v) noexcept {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// log1p(z) - z / (1 + z), accurate for small z.
double log_gap(double z) noexcept {
  if (std::abs(z) < 1e-4) return z * z * (0.5 - z * (2.0 / 3.0 - 0.75 * z));
  return std::log1p(z) - z / (1.0 + z);
}

struct TailGrad {
  double log_pdf, d_xi, d_beta;
};

// GPD log density at excess y >= 0 with its partial derivatives, xi > 0.
TailGrad gpd_log_pdf_grad(double xi, double beta, double y) noexcept {
  const GeneralizedPareto g(xi, beta);
  const double r = y / beta;
  const double z = xi * r;
  TailGrad out{g.log_pdf(y), 0.0, 0.0};
  out.d_beta = -1.0 / beta + (1.0 + 1.0 / xi) * z / (beta * (1.0 + z));
  out.d_xi = log_gap(z) / (xi * xi) - r / (1.0 + z);
  return out;
}

void check_raw(std::span<const double> raw, std::span<const double> edges) {
  if (edges.size() < 3 || raw.size() != edges.size() - 1 + 4) {
    throw std::invalid_argument("SBP head: expected n_bins + 4 raw outputs for n_bins + 1 edges");
  }
}

}  // namespace

double positive_map(double v) noexcept {
  const double softplus = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  return softplus + kPositiveFloor;
}

SplicedBinnedPareto heads_to_distribution(std::span<const double> raw, std::span<const double> edges,
                                          double tail_mass) {
  check_raw(raw, edges);
  const std::size_t n = edges.size() - 1;
  auto base = BinnedDistribution::from_logits(std::vector<double>(edges.begin(), edges.end()), raw.first(n));
  return splice(std::move(base), GeneralizedPareto(positive_map(raw[n]), positive_map(raw[n + 1])),
                GeneralizedPareto(positive_map(raw[n + 2]), positive_map(raw[n + 3])), tail_mass);
}

Thresholds sbp_thresholds(std::span<const double> raw, std::span<const double> edges, double tail_mass) {
  check_raw(raw, edges);
  if (!(tail_mass > 0.0 && tail_mass < 0.5)) throw std::invalid_argument("SBP loss: q must lie in (0, 0.5)");
  const std::size_t n = edges.size() - 1;
  const auto base = BinnedDistribution::from_logits(std::vector<double>(edges.begin(), edges.end()), raw.first(n));
  return {base.icdf(tail_mass), base.icdf(1.0 - tail_mass)};
}

double sbp_loss(std::span<const double> raw, std::span<const double> edges, double tail_mass, double x,
                std::span<double> grad) {
  return sbp_loss(raw, edges, sbp_thresholds(raw, edges, tail_mass), x, grad);
}

double sbp_loss(std::span<const double> raw, std::span<const double> edges, const Thresholds& thresholds, double x,
                std::span<double> grad) {
  check_raw(raw, edges);
  const std::size_t n = edges.size() - 1;
  const auto logits = raw.first(n);
  const auto base = BinnedDistribution::from_logits(std::vector<double>(edges.begin(), edges.end()), logits);
  const std::size_t bin = base.bin_index(x);
  double loss = -base.log_prob(x);

  const bool lower = x <= thresholds.lower;
  const bool upper = !lower && x >= thresholds.upper;
  TailGrad tail{0.0, 0.0, 0.0};
  std::size_t tail_offset = 0;
  if (lower || upper) {
    tail_offset = lower ? n : n + 2;
    const double excess = lower ? thresholds.lower - x : x - thresholds.upper;
    tail = gpd_log_pdf_grad(positive_map(raw[tail_offset]), positive_map(raw[tail_offset + 1]), excess);
    loss -= tail.log_pdf;
  }

  if (!grad.empty()) {
    if (grad.size() != raw.size()) throw std::invalid_argument("SBP loss: gradient size mismatch");
    std::fill(grad.begin(), grad.end(), 0.0);
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(logits[j] - peak);
    // d(-log(s_i + eps))/d a_j = -s_i (delta_ij - s_j) / (s_i + eps)
    const double s_bin = std::exp(logits[bin] - peak) / total;
    const double factor = s_bin / (s_bin + BinnedDistribution::kMassFloor);
    for (std::size_t j = 0; j < n; ++j) grad[j] = factor * std::exp(logits[j] - peak) / total;
    grad[bin] -= factor;
    if (lower || upper) {
      grad[tail_offset] = -tail.d_xi * sigmoid(raw[tail_offset]);
      grad[tail_offset + 1] = -tail.d_beta * sigmoid(raw[tail_offset + 1]);
    }
  }
  return loss;
}

double point_loss(std::span<const double> raw, double x, std::span<double> grad) {
  if (raw.size() != 1) throw std::invalid_argument("point loss: expected a single output");
  const double diff = raw[0] - x;
  if (!grad.empty()) grad[0] = 2.0 * diff;
  return diff * diff;
}

}  // namespace sbp
