#include "mixfc/metrics.hpp"

#include "mixfc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace mixfc {

namespace {

void check_pair(const VectorRef& y, const VectorRef& y_hat, const char* what) {
  if (y.size() == 0) throw DataError(std::string(what) + ": empty input");
  if (y.size() != y_hat.size()) throw DataError(std::string(what) + ": length mismatch");
}

Vector average_ranks(const VectorRef& v) {
  const Index n = v.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return v[a] < v[b]; });
  Vector ranks(n);
  Index i = 0;
  while (i < n) {
    Index j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double rmse(const VectorRef& y, const VectorRef& y_hat) {
  check_pair(y, y_hat, "rmse");
  return std::sqrt((y - y_hat).squaredNorm() / static_cast<double>(y.size()));
}

double mae(const VectorRef& y, const VectorRef& y_hat) {
  check_pair(y, y_hat, "mae");
  return (y - y_hat).cwiseAbs().sum() / static_cast<double>(y.size());
}

double nllm(std::span<const MixtureOutput> outputs, const VectorRef& y) {
  if (outputs.empty()) throw DataError("nllm: empty input");
  if (static_cast<Index>(outputs.size()) != y.size()) throw DataError("nllm: length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const double lp = mixture_log_pdf(outputs[i], y[static_cast<Index>(i)]);
    if (!std::isfinite(lp)) throw NumericError("nllm: non-finite log density at instance " + std::to_string(i));
    total -= lp;
  }
  return total / static_cast<double>(outputs.size());
}

double quantile_loss(const VectorRef& y, const VectorRef& y_alpha, double alpha) {
  check_pair(y, y_alpha, "quantile_loss");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("quantile_loss: alpha must lie in (0, 1)");
  const double norm = y.cwiseAbs().sum();
  if (!(norm > 0.0)) throw DataError("quantile_loss: targets are all zero, normalizer vanishes");
  double loss = 0.0;
  for (Index t = 0; t < y.size(); ++t) {
    const double diff = y[t] - y_alpha[t];
    loss += diff > 0.0 ? 2.0 * alpha * diff : 2.0 * (1.0 - alpha) * (-diff);
  }
  return loss / norm;
}

double qlm(const std::map<double, double>& ql_by_alpha) {
  double total = 0.0;
  for (double a : kReportQuantiles) {
    const auto it = ql_by_alpha.find(a);
    if (it == ql_by_alpha.end()) throw DataError("qlm: missing quantile level " + std::to_string(a));
    total += it->second;
  }
  return total / static_cast<double>(kReportQuantiles.size());
}

double qlm(const VectorRef& y, const std::map<double, Vector>& predictions) {
  std::map<double, double> ql;
  for (double a : kReportQuantiles) {
    const auto it = predictions.find(a);
    if (it == predictions.end()) throw DataError("qlm: missing quantile level " + std::to_string(a));
    ql[a] = quantile_loss(y, it->second, a);
  }
  return qlm(ql);
}

double spearman(const VectorRef& a, const VectorRef& b) {
  if (a.size() != b.size() || a.size() < 2) throw DataError("spearman: need two equal-length series of size >= 2");
  const Vector ra = average_ranks(a);
  const Vector rb = average_ranks(b);
  const Vector ca = ra.array() - ra.mean();
  const Vector cb = rb.array() - rb.mean();
  const double denom = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
  if (!(denom > 0.0)) return 0.0;
  return ca.dot(cb) / denom;
}

UncertaintyConditionedErrors uncertainty_conditioned_errors(const VectorRef& y, const VectorRef& y_hat,
                                                            const VectorRef& uncertainty, Index n_bins) {
  check_pair(y, y_hat, "uncertainty_conditioned_errors");
  if (uncertainty.size() != y.size()) throw DataError("uncertainty_conditioned_errors: length mismatch");
  if (n_bins < 2) throw ConfigError("uncertainty_conditioned_errors: n_bins must be >= 2");
  const Index n = y.size();
  if (n < n_bins) {
    throw DataError("uncertainty_conditioned_errors: " + std::to_string(n) + " instances for " +
                    std::to_string(n_bins) + " bins");
  }

  std::vector<double> sorted(uncertainty.data(), uncertainty.data() + n);
  std::sort(sorted.begin(), sorted.end());
  // Upper edge of bin k is the empirical (k+1)/n_bins quantile.
  std::vector<double> edges;
  for (Index k = 1; k <= n_bins; ++k) {
    const auto idx = static_cast<std::size_t>((k * n + n_bins - 1) / n_bins - 1);
    edges.push_back(sorted[idx]);
  }

  UncertaintyConditionedErrors out;
  std::vector<double> sq(static_cast<std::size_t>(n_bins), 0.0);
  out.bins.resize(static_cast<std::size_t>(n_bins));
  for (Index k = 0; k < n_bins; ++k) {
    auto& bin = out.bins[static_cast<std::size_t>(k)];
    bin.level_lo = static_cast<double>(k) / static_cast<double>(n_bins);
    bin.level_hi = static_cast<double>(k + 1) / static_cast<double>(n_bins);
    bin.unc_lo = std::numeric_limits<double>::infinity();
    bin.unc_hi = -std::numeric_limits<double>::infinity();
  }
  for (Index i = 0; i < n; ++i) {
    const double u = uncertainty[i];
    const auto k = static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), u) - edges.begin());
    auto& bin = out.bins[std::min(k, edges.size() - 1)];
    bin.count += 1;
    bin.unc_lo = std::min(bin.unc_lo, u);
    bin.unc_hi = std::max(bin.unc_hi, u);
    sq[std::min(k, edges.size() - 1)] += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
  }

  std::vector<double> idx;
  std::vector<double> err;
  for (std::size_t k = 0; k < out.bins.size(); ++k) {
    auto& bin = out.bins[k];
    if (bin.count == 0) {
      bin.rmse = std::numeric_limits<double>::quiet_NaN();
      bin.unc_lo = bin.unc_hi = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    bin.rmse = std::sqrt(sq[k] / static_cast<double>(bin.count));
    idx.push_back(static_cast<double>(k));
    err.push_back(bin.rmse);
  }
  out.degenerate = idx.size() < 2;
  if (!out.degenerate) {
    out.spearman = spearman(Eigen::Map<const Vector>(idx.data(), static_cast<Index>(idx.size())),
                            Eigen::Map<const Vector>(err.data(), static_cast<Index>(err.size())));
  }
  return out;
}

EvalReport evaluate(std::span<const MixtureOutput> outputs, const VectorRef& y, Index n_bins) {
  const auto n = static_cast<Index>(outputs.size());
  if (n == 0) throw DataError("evaluate: no instances");
  if (y.size() != n) throw DataError("evaluate: length mismatch");
  Vector mean_pred(n);
  Vector unc(n);
  std::map<double, Vector> q;
  for (double a : kReportQuantiles) q[a] = Vector(n);
  for (Index i = 0; i < n; ++i) {
    const ForecastResult f = forecast(outputs[static_cast<std::size_t>(i)]);
    mean_pred[i] = f.mean;
    unc[i] = f.total;
    for (double a : kReportQuantiles) q[a][i] = f.quantiles.at(a);
  }
  EvalReport r;
  r.count = n;
  r.rmse = rmse(y, mean_pred);
  r.mae = mae(y, mean_pred);
  r.nllm = nllm(outputs, y);
  for (double a : kReportQuantiles) r.ql_by_alpha[a] = quantile_loss(y, q[a], a);
  r.qlm = qlm(r.ql_by_alpha);
  r.unc = uncertainty_conditioned_errors(y, mean_pred, unc, n_bins);
  return r;
}

}  // namespace mixfc
