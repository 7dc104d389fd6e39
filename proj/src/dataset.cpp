#include "mixfc/dataset.hpp"

#include "mixfc/errors.hpp"

#include <cmath>
#include <string>

namespace mixfc {

namespace {

constexpr std::int64_t kSecondsPerDay = 86400;

void check_fractions(const SplitFractions& f) {
  for (double x : f) {
    if (!(x >= 0.0)) throw ConfigError("split fractions must be nonnegative");
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1, got " + std::to_string(f[0] + f[1] + f[2]));
  }
  if (!(f[0] > 0.0)) throw ConfigError("training fraction must be positive");
}

}  // namespace

std::size_t SeasonalProfile::slot(std::int64_t timestamp) const {
  const std::int64_t tod = ((timestamp % kSecondsPerDay) + kSecondsPerDay) % kSecondsPerDay;
  return static_cast<std::size_t>(tod / interval_seconds);
}

SplitIndices split_indices(Index length, const SplitFractions& fractions) {
  check_fractions(fractions);
  const auto n = static_cast<double>(length);
  SplitIndices s;
  s.train_end = static_cast<Index>(std::floor(fractions[0] * n + 1e-9));
  s.val_end = static_cast<Index>(std::floor((fractions[0] + fractions[1]) * n + 1e-9));
  return s;
}

std::vector<Index> MultiSourceDataset::dims() const {
  std::vector<Index> d;
  for (const auto& s : sources) d.push_back(s.dim());
  return d;
}

void MultiSourceDataset::validate() const {
  if (sources.empty()) throw DataError("dataset has no sources");
  const Index t = length();
  if (static_cast<Index>(timestamps.size()) != t) throw DataError("dataset timestamps and target lengths differ");
  for (const auto& s : sources) {
    if (s.length() != t) {
      throw DataError("source '" + s.source_id + "' has " + std::to_string(s.length()) + " rows, target has " +
                      std::to_string(t));
    }
    if (s.timestamps != timestamps) throw DataError("source '" + s.source_id + "' is not aligned with the target");
    if (s.feature_names.size() != static_cast<std::size_t>(s.dim())) {
      throw DataError("source '" + s.source_id + "' feature names do not match its columns");
    }
  }
  if (splits.train_end <= 0 || splits.train_end > splits.val_end || splits.val_end > t) {
    throw DataError("dataset split indices are invalid");
  }
}

Standardization fit_standardization(const MultiSourceDataset& data, DistKind dist) {
  const Index n = data.splits.train_end;
  if (n <= 0) throw DataError("standardization needs a nonempty training split");
  Standardization st;
  for (const auto& src : data.sources) {
    const auto rows = src.values.topRows(n);
    Vector mean = rows.colwise().mean().transpose();
    Vector sd(src.dim());
    for (Index c = 0; c < src.dim(); ++c) {
      const double var = (rows.col(c).array() - mean[c]).square().mean();
      sd[c] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    st.feature_mean.push_back(std::move(mean));
    st.feature_std.push_back(std::move(sd));
  }
  if (dist == DistKind::Normal) {
    const auto y = data.target.head(n);
    st.target_mean = y.mean();
    const double var = (y.array() - st.target_mean).square().mean();
    st.target_std = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return st;
}

std::vector<Index> model_input_dims(const MultiSourceDataset& data, const WindowOptions& options) {
  std::vector<Index> dims = data.dims();
  if (options.ar_source >= 0) {
    if (options.ar_source >= static_cast<int>(dims.size())) throw ConfigError("ar_source out of range");
    dims[static_cast<std::size_t>(options.ar_source)] += 1;
  }
  return dims;
}

const std::vector<WindowedInstance>& WindowedData::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

WindowedData window_and_split(const MultiSourceDataset& data, const WindowOptions& options) {
  check_fractions(options.fractions);
  if (options.lookback < 1) throw ConfigError("lookback must be >= 1");
  if (options.horizon < 1) throw ConfigError("horizon must be >= 1");
  MultiSourceDataset local;
  const MultiSourceDataset* src = &data;
  if (data.splits.train_end == 0) {
    local = data;
    local.splits = split_indices(data.length(), options.fractions);
    src = &local;
  }
  const MultiSourceDataset& d = *src;
  d.validate();

  const Index length = d.length();
  const Index lookback = options.lookback;
  const Index horizon = options.horizon;
  if (length <= lookback + horizon) {
    throw DataError("series of length " + std::to_string(length) + " is too short for lookback " +
                    std::to_string(lookback) + " and horizon " + std::to_string(horizon));
  }
  if (options.dist == DistKind::LogNormal) {
    if (d.seasonal_profile) throw ConfigError("log-normal targets cannot be combined with a deseasonalized target");
    for (Index t = 0; t < length; ++t) {
      if (!(d.target[t] > 0.0)) {
        throw DataError("log-normal targets must be positive; row " + std::to_string(t) + " is " +
                        std::to_string(d.target[t]));
      }
    }
  }

  WindowedData out;
  out.stats = fit_standardization(d, options.dist);
  out.input_dims = model_input_dims(d, options);
  out.transform.shift = out.stats.target_mean;
  out.transform.scale = out.stats.target_std;
  out.transform.season = d.seasonal_profile;

  std::vector<Matrix> standardized;
  for (std::size_t s = 0; s < d.sources.size(); ++s) {
    const Vector& mu = out.stats.feature_mean[s];
    const Vector& sd = out.stats.feature_std[s];
    Matrix z = (d.sources[s].values.rowwise() - mu.transpose()).array().rowwise() / sd.transpose().array();
    standardized.push_back(std::move(z));
  }
  const Vector model_target = (d.target.array() - out.stats.target_mean) / out.stats.target_std;

  for (Index t = lookback + horizon; t < length; ++t) {
    WindowedInstance inst;
    const Index first = t - horizon - lookback + 1;
    for (std::size_t s = 0; s < standardized.size(); ++s) {
      Matrix w = standardized[s].middleRows(first, lookback);
      if (options.ar_source == static_cast<int>(s)) {
        Matrix with_ar(lookback, w.cols() + 1);
        with_ar.leftCols(w.cols()) = w;
        with_ar.col(w.cols()) = model_target.segment(first, lookback);
        w = std::move(with_ar);
      }
      inst.windows.push_back(std::move(w));
    }
    inst.target = model_target[t];
    inst.timestamp = d.timestamps[static_cast<std::size_t>(t)];
    inst.time_index = t;
    if (t < d.splits.train_end) {
      out.train.push_back(std::move(inst));
    } else if (t < d.splits.val_end) {
      out.val.push_back(std::move(inst));
    } else {
      out.test.push_back(std::move(inst));
    }
  }
  return out;
}

Vector targets_of(std::span<const WindowedInstance> instances) {
  Vector y(static_cast<Index>(instances.size()));
  for (std::size_t i = 0; i < instances.size(); ++i) y[static_cast<Index>(i)] = instances[i].target;
  return y;
}

}  // namespace mixfc
