#include "mixfc/inference.hpp"

#include "mixfc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mixfc {

namespace {

constexpr int kMaxBracketDoublings = 60;
constexpr int kMaxBisections = 200;
constexpr double kCdfTolerance = 1e-9;

void check_output(const MixtureOutput& out) {
  if (out.weights.size() == 0 || static_cast<std::size_t>(out.weights.size()) != out.components.size()) {
    throw DataError("mixture output has inconsistent weights and components");
  }
}

}  // namespace

double predictive_mean(const MixtureOutput& output) {
  check_output(output);
  double m = 0.0;
  for (Index s = 0; s < output.weights.size(); ++s) m += output.weights[s] * mean(output.kind, output.components[s]);
  return m;
}

Uncertainty predictive_uncertainty(const MixtureOutput& output) {
  check_output(output);
  const double center = predictive_mean(output);
  Uncertainty u;
  for (Index s = 0; s < output.weights.size(); ++s) {
    const double w = output.weights[s];
    const double m = mean(output.kind, output.components[s]);
    u.aleatoric += w * variance(output.kind, output.components[s]);
    // Centered form of sum w m^2 - (sum w m)^2.
    u.mixture += w * (m - center) * (m - center);
  }
  if (u.mixture < 0.0) {
    if (u.mixture < -1e-12) throw NumericError("mixture uncertainty is negative: " + std::to_string(u.mixture));
    u.mixture = 0.0;
  }
  u.total = u.aleatoric + u.mixture;
  return u;
}

double mixture_cdf(const MixtureOutput& output, double y) {
  check_output(output);
  double p = 0.0;
  for (Index s = 0; s < output.weights.size(); ++s) p += output.weights[s] * cdf(output.kind, output.components[s], y);
  return std::clamp(p, 0.0, 1.0);
}

double mixture_log_pdf(const MixtureOutput& output, double y) {
  check_output(output);
  const Index n = output.weights.size();
  Vector terms(n);
  for (Index s = 0; s < n; ++s) terms[s] = std::log(output.weights[s]) + log_pdf(output.kind, output.components[s], y);
  const double m = terms.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((terms.array() - m).exp().sum());
}

double quantile(const MixtureOutput& output, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("quantile level must lie in (0, 1), got " + std::to_string(alpha));
  }
  const double center = predictive_mean(output);
  const double total = predictive_uncertainty(output).total;
  double half = 10.0 * std::sqrt(total);
  if (!(half > 0.0) || !std::isfinite(half)) half = 1.0;
  if (!std::isfinite(center)) throw NumericError("quantile: non-finite predictive mean");

  double lo = center - half;
  double hi = center + half;
  int doublings = 0;
  while (!(mixture_cdf(output, lo) <= alpha && mixture_cdf(output, hi) >= alpha)) {
    if (++doublings > kMaxBracketDoublings) {
      throw NumericError("quantile: no bracket found for alpha " + std::to_string(alpha));
    }
    half *= 2.0;
    lo = center - half;
    hi = center + half;
  }

  for (int i = 0; i < kMaxBisections; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (mixture_cdf(output, mid) < alpha) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double err_lo = std::abs(mixture_cdf(output, lo) - alpha);
  const double err_hi = std::abs(mixture_cdf(output, hi) - alpha);
  const double best = err_lo < err_hi ? lo : hi;
  if (std::min(err_lo, err_hi) > kCdfTolerance) {
    throw NumericError("quantile: bisection did not reach tolerance for alpha " + std::to_string(alpha));
  }
  return best;
}

std::pair<double, double> interval(const MixtureOutput& output, double alpha_lo, double alpha_hi) {
  if (!(alpha_lo > 0.0 && alpha_lo < alpha_hi && alpha_hi < 1.0)) {
    throw ConfigError("interval levels must satisfy 0 < lo < hi < 1");
  }
  return {quantile(output, alpha_lo), quantile(output, alpha_hi)};
}

ForecastResult forecast(const MixtureOutput& output, std::span<const double> alphas,
                        std::span<const std::pair<double, double>> ranges) {
  ForecastResult r;
  r.mean = predictive_mean(output);
  const Uncertainty u = predictive_uncertainty(output);
  r.aleatoric = u.aleatoric;
  r.mixture_unc = u.mixture;
  r.total = u.total;
  for (double a : alphas) r.quantiles[a] = quantile(output, a);
  // Enforce monotonicity against bisection ties at flat CDF regions.
  double running = -std::numeric_limits<double>::infinity();
  for (auto& [a, q] : r.quantiles) {
    q = std::max(q, running);
    running = q;
  }
  for (const auto& [lo, hi] : ranges) {
    const auto [qlo, qhi] = interval(output, lo, hi);
    r.intervals.push_back({lo, hi, qlo, qhi});
  }
  return r;
}

MixtureOutput affine_transform(const MixtureOutput& output, double shift, double scale) {
  if (output.kind == DistKind::LogNormal) {
    if (shift != 0.0 || scale != 1.0) throw ConfigError("affine_transform: log-normal outputs cannot be shifted");
    return output;
  }
  if (!(scale > 0.0)) throw ConfigError("affine_transform: scale must be positive");
  MixtureOutput out = output;
  for (auto& c : out.components) {
    c.mu = shift + scale * c.mu;
    c.sigma2 = scale * scale * c.sigma2;
  }
  return out;
}

}  // namespace mixfc
