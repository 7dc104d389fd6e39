#pragma once

#include "mixfc/dataset.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mixfc {

enum class Side { Buy, Sell };

struct RawTrade {
  std::int64_t timestamp = 0;  // epoch seconds
  double price = 0.0;
  double size = 0.0;
  Side side = Side::Buy;
};

struct BookLevel {
  double price = 0.0;
  double size = 0.0;
};

/// Bids price-descending, asks price-ascending; index 0 is the best level.
struct LobSnapshot {
  std::int64_t timestamp = 0;
  std::vector<BookLevel> bids;
  std::vector<BookLevel> asks;
};

/// Interval k covers [start + k * interval, start + (k + 1) * interval).
struct TimeGrid {
  std::int64_t start = 0;
  std::int64_t interval = 300;
  Index count = 0;

  std::int64_t at(Index k) const { return start + k * interval; }
  Index index_of(std::int64_t timestamp) const;
};

TimeGrid make_grid(std::int64_t first_timestamp, std::int64_t last_timestamp, std::int64_t interval);

inline const std::array<std::string, 6> kTradeFeatureNames{"buy_volume", "sell_volume", "volume_imbalance",
                                                           "buy_count",  "sell_count",  "count_imbalance"};

struct LobOptions {
  std::vector<double> depth_fractions{0.01, 0.05, 0.10};
  double tick = 0.01;  // floor on the price offset of a slope
};

std::vector<std::string> lob_feature_names(std::span<const double> depth_fractions);

/// Per interval: buy volume, sell volume, |buy - sell| volume, buy count,
/// sell count, |buy - sell| count. Empty intervals are zero rows.
SourceSeries featurize_trades(std::span<const RawTrade> trades, const TimeGrid& grid);
SourceSeries featurize_trades(std::span<const RawTrade> trades, std::int64_t interval_seconds);

/// Cumulative volume from the best level up to the first level holding at
/// least `fraction` of the side's volume, divided by that level's price
/// offset from the best price (floored at `tick`).
double book_slope(std::span<const BookLevel> side, double fraction, double tick);

/// spread, ask volume, bid volume, |ask - bid| volume, then per depth
/// fraction: ask slope, bid slope, |ask - bid| slope.
Vector snapshot_features(const LobSnapshot& snapshot, const LobOptions& options);

struct LobFeatures {
  SourceSeries series;
  std::vector<bool> observed;  // interval had at least one usable snapshot
  Index first_observed = 0;    // rows before this have nothing to forward-fill from
};

/// Averages snapshot features per interval. Intervals without a usable
/// snapshot repeat the previous interval's row.
LobFeatures featurize_lob(std::span<const LobSnapshot> snapshots, const TimeGrid& grid, const LobOptions& options);
LobFeatures featurize_lob(std::span<const LobSnapshot> snapshots, std::int64_t interval_seconds,
                          const LobOptions& options = {});

/// Buy plus sell volume of a featurized trade source.
Vector make_target(const SourceSeries& trades);

struct Deseasonalized {
  Vector residual;
  SeasonalProfile profile;
};

/// Profile = per time-of-day slot mean over the first `train_count` rows;
/// slots without training rows take the global training mean.
Deseasonalized deseasonalize(const Vector& y, std::span<const std::int64_t> timestamps, std::int64_t interval_seconds,
                             Index train_count);
Vector reseasonalize(const Vector& residual, std::span<const std::int64_t> timestamps, const SeasonalProfile& profile);

struct MarketData {
  std::string market_id;
  std::vector<RawTrade> trades;
  std::vector<LobSnapshot> snapshots;
};

struct FeaturizeOptions {
  std::int64_t interval_seconds = 300;
  LobOptions lob;
  bool deseasonalize = true;
  std::size_t target_market = 0;
  SplitFractions fractions = kDefaultFractions;
};

/// Sources ordered [m0 trades, m0 book, m1 trades, m1 book, ...]; target is
/// the traded volume of `target_market`. Leading intervals before every book
/// has a snapshot are dropped from all sources.
MultiSourceDataset build_market_dataset(std::span<const MarketData> markets, const FeaturizeOptions& options);

/// `timestamp,price,size,side` with side in {buy, sell}.
std::vector<RawTrade> read_trades_csv(const std::filesystem::path& path);
/// `timestamp,level,side,price,size` long format, level 0 = best, side in {bid, ask}.
std::vector<LobSnapshot> read_lob_csv(const std::filesystem::path& path);

}  // namespace mixfc
