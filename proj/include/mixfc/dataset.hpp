#pragma once

#include "mixfc/distributions.hpp"
#include "mixfc/tensor.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mixfc {

/// One feature stream x_s: T rows of d_s features on a shared time grid.
struct SourceSeries {
  std::string source_id;
  std::string market_id;
  std::vector<std::string> feature_names;
  std::vector<std::int64_t> timestamps;
  Matrix values;  // T x d_s
  std::int64_t interval_seconds = 300;

  Index length() const { return values.rows(); }
  Index dim() const { return values.cols(); }
};

/// Mean target per time-of-day slot.
struct SeasonalProfile {
  std::int64_t interval_seconds = 300;
  std::vector<double> slot_means;

  std::size_t slot(std::int64_t timestamp) const;
  double at(std::int64_t timestamp) const { return slot_means[slot(timestamp)]; }
};

/// Contiguous time-ordered split boundaries over rows: train is [0, train_end),
/// validation [train_end, val_end), test [val_end, T).
struct SplitIndices {
  Index train_end = 0;
  Index val_end = 0;
};

using SplitFractions = std::array<double, 3>;
inline constexpr SplitFractions kDefaultFractions{0.7, 0.1, 0.2};

SplitIndices split_indices(Index length, const SplitFractions& fractions);

struct MultiSourceDataset {
  std::vector<SourceSeries> sources;
  Vector target;  // deseasonalized when seasonal_profile is set
  std::vector<std::int64_t> timestamps;
  std::optional<SeasonalProfile> seasonal_profile;
  SplitIndices splits;

  Index length() const { return target.size(); }
  Index n_sources() const { return static_cast<Index>(sources.size()); }
  std::vector<Index> dims() const;
  /// Throws DataError when sources and target disagree on length or timestamps.
  void validate() const;
};

struct WindowedInstance {
  std::vector<Matrix> windows;  // one L x d_s matrix per source
  double target = 0.0;
  std::int64_t timestamp = 0;
  Index time_index = 0;
};

struct WindowOptions {
  Index lookback = 12;
  Index horizon = 1;
  SplitFractions fractions = kDefaultFractions;
  /// Source that receives the lagged target as an extra feature column; -1 disables.
  int ar_source = -1;
  DistKind dist = DistKind::Normal;
};

/// z-score statistics fitted on the training rows.
struct Standardization {
  std::vector<Vector> feature_mean;
  std::vector<Vector> feature_std;
  double target_mean = 0.0;
  double target_std = 1.0;
};

Standardization fit_standardization(const MultiSourceDataset& data, DistKind dist);

/// Maps model-space target values back to raw units:
/// raw = season(timestamp) + target_mean + target_std * model_value.
struct TargetTransform {
  double shift = 0.0;
  double scale = 1.0;
  std::optional<SeasonalProfile> season;

  double offset_at(std::int64_t timestamp) const { return shift + (season ? season->at(timestamp) : 0.0); }
  double to_raw(double model_value, std::int64_t timestamp) const {
    return offset_at(timestamp) + scale * model_value;
  }
};

struct WindowedData {
  std::vector<WindowedInstance> train;
  std::vector<WindowedInstance> val;
  std::vector<WindowedInstance> test;
  Standardization stats;
  TargetTransform transform;
  std::vector<Index> input_dims;  // per source, including the AR column

  const std::vector<WindowedInstance>& split(std::string_view name) const;
};

/// Builds one instance per t in [L + h, T): source windows cover rows
/// [t - h - L + 1, t - h]. Instances are assigned to splits by t.
WindowedData window_and_split(const MultiSourceDataset& data, const WindowOptions& options);

/// Input dims the model sees for `data` under `options`.
std::vector<Index> model_input_dims(const MultiSourceDataset& data, const WindowOptions& options);

Vector targets_of(std::span<const WindowedInstance> instances);

}  // namespace mixfc
