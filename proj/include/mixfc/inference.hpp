#pragma once

#include "mixfc/model.hpp"

#include <map>
#include <span>
#include <utility>
#include <vector>

namespace mixfc {

/// Quantile levels reported by default: QLm levels 0.1 ... 0.9.
inline constexpr std::array<double, 5> kReportQuantiles{0.1, 0.3, 0.5, 0.7, 0.9};

struct Uncertainty {
  double aleatoric = 0.0;  // sum_s w_s Var_s
  double mixture = 0.0;    // spread of component means around the mixture mean
  double total = 0.0;      // aleatoric + mixture
};

struct PredictionInterval {
  double alpha_lo = 0.1;
  double alpha_hi = 0.9;
  double lo = 0.0;
  double hi = 0.0;
};

struct ForecastResult {
  double mean = 0.0;
  double aleatoric = 0.0;
  double mixture_unc = 0.0;
  double total = 0.0;
  std::map<double, double> quantiles;
  std::vector<PredictionInterval> intervals;
};

double predictive_mean(const MixtureOutput& output);

Uncertainty predictive_uncertainty(const MixtureOutput& output);

double mixture_cdf(const MixtureOutput& output, double y);

/// log sum_s w_s p_s(y), evaluated in log space.
double mixture_log_pdf(const MixtureOutput& output, double y);

/// Root of mixture_cdf(y) - alpha by geometric bracketing around the mean and
/// bisection. Throws NumericError when no bracket is found.
double quantile(const MixtureOutput& output, double alpha);

std::pair<double, double> interval(const MixtureOutput& output, double alpha_lo, double alpha_hi);

ForecastResult forecast(const MixtureOutput& output, std::span<const double> alphas = kReportQuantiles,
                        std::span<const std::pair<double, double>> ranges = {});

/// Maps a Normal mixture through y -> shift + scale * y. Log-normal outputs
/// are returned unchanged when shift = 0 and scale = 1, otherwise rejected.
MixtureOutput affine_transform(const MixtureOutput& output, double shift, double scale);

}  // namespace mixfc
