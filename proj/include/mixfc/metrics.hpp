#pragma once

#include "mixfc/inference.hpp"
#include "mixfc/model.hpp"

#include <iosfwd>
#include <map>
#include <span>
#include <vector>

namespace mixfc {

using VectorRef = Eigen::Ref<const Vector>;

double rmse(const VectorRef& y, const VectorRef& y_hat);
double mae(const VectorRef& y, const VectorRef& y_hat);

/// Mean of -log mixture density over instances.
double nllm(std::span<const MixtureOutput> outputs, const VectorRef& y);

/// Normalized pinball loss: sum 2[a (y - q)^+ + (1 - a)(q - y)^+] / sum |y|.
double quantile_loss(const VectorRef& y, const VectorRef& y_alpha, double alpha);

/// Mean of QL over the five levels 0.1, 0.3, 0.5, 0.7, 0.9; all must be present.
double qlm(const std::map<double, double>& ql_by_alpha);
double qlm(const VectorRef& y, const std::map<double, Vector>& predictions);

/// Spearman rank correlation with average ranks for ties; 0 when either side is constant.
double spearman(const VectorRef& a, const VectorRef& b);

struct UncertaintyBin {
  double level_lo = 0.0;  // quantile-level range of the bin, e.g. [0.2, 0.4]
  double level_hi = 0.0;
  double unc_lo = 0.0;  // uncertainty values spanned by the bin's members
  double unc_hi = 0.0;
  Index count = 0;
  double rmse = 0.0;  // NaN for empty bins
};

struct UncertaintyConditionedErrors {
  std::vector<UncertaintyBin> bins;
  double spearman = 0.0;  // bin index vs bin RMSE over nonempty bins
  bool degenerate = false;  // fewer than two nonempty bins
};

/// Partitions instances by empirical quantiles of the uncertainty score and
/// reports per-bin RMSE. Ties fall into the lower bin.
UncertaintyConditionedErrors uncertainty_conditioned_errors(const VectorRef& y, const VectorRef& y_hat,
                                                            const VectorRef& uncertainty, Index n_bins);

struct EvalReport {
  Index count = 0;
  double rmse = 0.0;
  double mae = 0.0;
  double nllm = 0.0;
  double qlm = 0.0;
  std::map<double, double> ql_by_alpha;
  UncertaintyConditionedErrors unc;
};

/// Full evaluation of raw-unit mixture outputs against raw-unit targets.
EvalReport evaluate(std::span<const MixtureOutput> outputs, const VectorRef& y, Index n_bins = 5);

}  // namespace mixfc
