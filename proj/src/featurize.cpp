#include "mixfc/featurize.hpp"

#include "mixfc/csv.hpp"
#include "mixfc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace mixfc {

namespace {

constexpr std::int64_t kSecondsPerDay = 86400;

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

void check_interval(std::int64_t interval) {
  if (interval <= 0) throw ConfigError("interval must be positive, got " + std::to_string(interval));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string percent_label(double p) {
  const double pct = p * 100.0;
  const double rounded = std::round(pct);
  if (std::abs(pct - rounded) < 1e-9) return std::to_string(static_cast<long long>(rounded)) + "pct";
  return format_double(pct) + "pct";
}

void check_side(std::span<const BookLevel> side, bool descending, std::int64_t ts) {
  for (std::size_t i = 0; i < side.size(); ++i) {
    if (!(side[i].size > 0.0) || !std::isfinite(side[i].size) || !std::isfinite(side[i].price)) {
      throw DataError("snapshot " + std::to_string(ts) + ": level sizes must be positive and finite");
    }
    if (i > 0) {
      const bool ok = descending ? side[i].price < side[i - 1].price : side[i].price > side[i - 1].price;
      if (!ok) throw DataError("snapshot " + std::to_string(ts) + ": book side not sorted");
    }
  }
}

}  // namespace

Index TimeGrid::index_of(std::int64_t timestamp) const {
  if (timestamp < start) return -1;
  const Index k = static_cast<Index>((timestamp - start) / interval);
  return k < count ? k : -1;
}

TimeGrid make_grid(std::int64_t first_timestamp, std::int64_t last_timestamp, std::int64_t interval) {
  check_interval(interval);
  if (last_timestamp < first_timestamp) throw DataError("time grid: last timestamp precedes first");
  TimeGrid grid;
  grid.interval = interval;
  grid.start = floor_div(first_timestamp, interval) * interval;
  grid.count = static_cast<Index>(floor_div(last_timestamp - grid.start, interval) + 1);
  return grid;
}

std::vector<std::string> lob_feature_names(std::span<const double> depth_fractions) {
  std::vector<std::string> names{"spread", "ask_volume", "bid_volume", "volume_imbalance"};
  for (const double p : depth_fractions) {
    const std::string tag = percent_label(p);
    names.push_back("ask_slope_" + tag);
    names.push_back("bid_slope_" + tag);
    names.push_back("slope_imbalance_" + tag);
  }
  return names;
}

SourceSeries featurize_trades(std::span<const RawTrade> trades, const TimeGrid& grid) {
  check_interval(grid.interval);
  // Sizes are collected per interval and summed in sorted order so the result
  // does not depend on arrival order within an interval.
  std::vector<std::vector<double>> buys(static_cast<std::size_t>(grid.count));
  std::vector<std::vector<double>> sells(static_cast<std::size_t>(grid.count));
  for (std::size_t i = 0; i < trades.size(); ++i) {
    const RawTrade& t = trades[i];
    if (i > 0 && t.timestamp < trades[i - 1].timestamp) {
      throw DataError("trades not time-sorted at index " + std::to_string(i));
    }
    if (!(t.size > 0.0) || !std::isfinite(t.size)) {
      throw DataError("trade " + std::to_string(i) + ": size must be positive");
    }
    const Index k = grid.index_of(t.timestamp);
    if (k < 0) throw DataError("trade " + std::to_string(i) + ": timestamp outside dataset range");
    (t.side == Side::Buy ? buys : sells)[static_cast<std::size_t>(k)].push_back(t.size);
  }

  SourceSeries out;
  out.feature_names.assign(kTradeFeatureNames.begin(), kTradeFeatureNames.end());
  out.interval_seconds = grid.interval;
  out.values = Matrix::Zero(grid.count, 6);
  out.timestamps.resize(static_cast<std::size_t>(grid.count));
  for (Index k = 0; k < grid.count; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    out.timestamps[ku] = grid.at(k);
    std::sort(buys[ku].begin(), buys[ku].end());
    std::sort(sells[ku].begin(), sells[ku].end());
    double bv = 0.0;
    double sv = 0.0;
    for (const double v : buys[ku]) bv += v;
    for (const double v : sells[ku]) sv += v;
    const auto bc = static_cast<double>(buys[ku].size());
    const auto sc = static_cast<double>(sells[ku].size());
    out.values.row(k) << bv, sv, std::abs(bv - sv), bc, sc, std::abs(bc - sc);
  }
  return out;
}

SourceSeries featurize_trades(std::span<const RawTrade> trades, std::int64_t interval_seconds) {
  check_interval(interval_seconds);
  if (trades.empty()) throw DataError("no trades to featurize");
  std::int64_t lo = trades.front().timestamp;
  std::int64_t hi = trades.front().timestamp;
  for (const auto& t : trades) {
    lo = std::min(lo, t.timestamp);
    hi = std::max(hi, t.timestamp);
  }
  return featurize_trades(trades, make_grid(lo, hi, interval_seconds));
}

double book_slope(std::span<const BookLevel> side, double fraction, double tick) {
  if (side.empty()) throw DataError("book slope of an empty side");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("depth fraction must be in (0, 1]");
  if (!(tick > 0.0)) throw ConfigError("tick must be positive");
  double total = 0.0;
  for (const auto& level : side) total += level.size;
  const double needed = fraction * total;
  double cumulative = 0.0;
  std::size_t k = 0;
  for (; k < side.size(); ++k) {
    cumulative += side[k].size;
    if (cumulative >= needed) break;
  }
  k = std::min(k, side.size() - 1);
  const double offset = std::abs(side[k].price - side[0].price);
  return cumulative / std::max(offset, tick);
}

Vector snapshot_features(const LobSnapshot& snapshot, const LobOptions& options) {
  if (snapshot.bids.empty() || snapshot.asks.empty()) {
    throw DataError("snapshot " + std::to_string(snapshot.timestamp) + ": empty book side");
  }
  check_side(snapshot.bids, true, snapshot.timestamp);
  check_side(snapshot.asks, false, snapshot.timestamp);
  if (!(snapshot.bids.front().price < snapshot.asks.front().price)) {
    throw DataError("snapshot " + std::to_string(snapshot.timestamp) + ": crossed book");
  }

  const auto n_frac = static_cast<Index>(options.depth_fractions.size());
  Vector f(4 + 3 * n_frac);
  double ask_vol = 0.0;
  double bid_vol = 0.0;
  for (const auto& l : snapshot.asks) ask_vol += l.size;
  for (const auto& l : snapshot.bids) bid_vol += l.size;
  f[0] = snapshot.asks.front().price - snapshot.bids.front().price;
  f[1] = ask_vol;
  f[2] = bid_vol;
  f[3] = std::abs(ask_vol - bid_vol);
  for (Index j = 0; j < n_frac; ++j) {
    const double p = options.depth_fractions[static_cast<std::size_t>(j)];
    const double a = book_slope(snapshot.asks, p, options.tick);
    const double b = book_slope(snapshot.bids, p, options.tick);
    f[4 + 3 * j] = a;
    f[5 + 3 * j] = b;
    f[6 + 3 * j] = std::abs(a - b);
  }
  return f;
}

LobFeatures featurize_lob(std::span<const LobSnapshot> snapshots, const TimeGrid& grid, const LobOptions& options) {
  check_interval(grid.interval);
  const auto d = static_cast<Index>(4 + 3 * options.depth_fractions.size());
  Matrix sums = Matrix::Zero(grid.count, d);
  std::vector<Index> counts(static_cast<std::size_t>(grid.count), 0);

  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    const LobSnapshot& s = snapshots[i];
    if (i > 0 && s.timestamp < snapshots[i - 1].timestamp) {
      throw DataError("snapshots not time-sorted at index " + std::to_string(i));
    }
    const Index k = grid.index_of(s.timestamp);
    if (k < 0) throw DataError("snapshot " + std::to_string(s.timestamp) + ": timestamp outside dataset range");
    if (s.bids.empty() || s.asks.empty()) continue;  // flagged; the interval falls back to forward fill
    sums.row(k) += snapshot_features(s, options).transpose();
    ++counts[static_cast<std::size_t>(k)];
  }

  LobFeatures out;
  out.series.feature_names = lob_feature_names(options.depth_fractions);
  out.series.interval_seconds = grid.interval;
  out.series.values = Matrix::Zero(grid.count, d);
  out.series.timestamps.resize(static_cast<std::size_t>(grid.count));
  out.observed.assign(static_cast<std::size_t>(grid.count), false);
  out.first_observed = grid.count;
  for (Index k = 0; k < grid.count; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    out.series.timestamps[ku] = grid.at(k);
    if (counts[ku] > 0) {
      out.series.values.row(k) = sums.row(k) / static_cast<double>(counts[ku]);
      out.observed[ku] = true;
      out.first_observed = std::min(out.first_observed, k);
    } else if (k > 0) {
      out.series.values.row(k) = out.series.values.row(k - 1);
    }
  }
  return out;
}

LobFeatures featurize_lob(std::span<const LobSnapshot> snapshots, std::int64_t interval_seconds,
                          const LobOptions& options) {
  check_interval(interval_seconds);
  if (snapshots.empty()) throw DataError("no snapshots to featurize");
  return featurize_lob(snapshots, make_grid(snapshots.front().timestamp, snapshots.back().timestamp, interval_seconds),
                       options);
}

Vector make_target(const SourceSeries& trades) {
  if (trades.dim() < 2) throw DataError("target needs buy and sell volume columns");
  return trades.values.col(0) + trades.values.col(1);
}

Deseasonalized deseasonalize(const Vector& y, std::span<const std::int64_t> timestamps, std::int64_t interval_seconds,
                             Index train_count) {
  check_interval(interval_seconds);
  if (kSecondsPerDay % interval_seconds != 0) throw ConfigError("interval must divide one day");
  if (static_cast<Index>(timestamps.size()) != y.size()) throw DataError("deseasonalize: length mismatch");
  if (train_count <= 0 || train_count > y.size()) throw DataError("deseasonalize: training range is empty");

  const auto n_slots = static_cast<std::size_t>(kSecondsPerDay / interval_seconds);
  Deseasonalized out;
  out.profile.interval_seconds = interval_seconds;
  std::vector<double> sums(n_slots, 0.0);
  std::vector<Index> counts(n_slots, 0);
  double total = 0.0;
  for (Index t = 0; t < train_count; ++t) {
    const std::size_t slot = out.profile.slot(timestamps[static_cast<std::size_t>(t)]);
    sums[slot] += y[t];
    ++counts[slot];
    total += y[t];
  }
  const double global = total / static_cast<double>(train_count);
  out.profile.slot_means.resize(n_slots);
  for (std::size_t s = 0; s < n_slots; ++s) {
    out.profile.slot_means[s] = counts[s] > 0 ? sums[s] / static_cast<double>(counts[s]) : global;
  }
  out.residual.resize(y.size());
  for (Index t = 0; t < y.size(); ++t) out.residual[t] = y[t] - out.profile.at(timestamps[static_cast<std::size_t>(t)]);
  return out;
}

Vector reseasonalize(const Vector& residual, std::span<const std::int64_t> timestamps, const SeasonalProfile& profile) {
  if (static_cast<Index>(timestamps.size()) != residual.size()) throw DataError("reseasonalize: length mismatch");
  Vector y(residual.size());
  for (Index t = 0; t < residual.size(); ++t) y[t] = residual[t] + profile.at(timestamps[static_cast<std::size_t>(t)]);
  return y;
}

MultiSourceDataset build_market_dataset(std::span<const MarketData> markets, const FeaturizeOptions& options) {
  check_interval(options.interval_seconds);
  if (markets.empty()) throw DataError("no markets given");
  if (options.target_market >= markets.size()) throw ConfigError("target market index out of range");

  std::int64_t lo = std::numeric_limits<std::int64_t>::max();
  std::int64_t hi = std::numeric_limits<std::int64_t>::min();
  for (const auto& m : markets) {
    if (m.trades.empty()) throw DataError("market " + m.market_id + ": no trades");
    if (m.snapshots.empty()) throw DataError("market " + m.market_id + ": no book snapshots");
    for (const auto& t : m.trades) {
      lo = std::min(lo, t.timestamp);
      hi = std::max(hi, t.timestamp);
    }
    lo = std::min(lo, m.snapshots.front().timestamp);
    hi = std::max(hi, m.snapshots.back().timestamp);
  }
  const TimeGrid grid = make_grid(lo, hi, options.interval_seconds);

  std::vector<SourceSeries> full;
  Index first = 0;
  for (const auto& m : markets) {
    SourceSeries trades = featurize_trades(m.trades, grid);
    trades.source_id = m.market_id + "_trades";
    trades.market_id = m.market_id;
    LobFeatures lob = featurize_lob(m.snapshots, grid, options.lob);
    if (lob.first_observed >= grid.count) throw DataError("market " + m.market_id + ": no usable book snapshot");
    lob.series.source_id = m.market_id + "_lob";
    lob.series.market_id = m.market_id;
    first = std::max(first, lob.first_observed);
    full.push_back(std::move(trades));
    full.push_back(std::move(lob.series));
  }

  MultiSourceDataset data;
  const Index T = grid.count - first;
  for (auto& s : full) {
    SourceSeries cut = s;
    cut.values = s.values.bottomRows(T);
    cut.timestamps.assign(s.timestamps.begin() + first, s.timestamps.end());
    data.sources.push_back(std::move(cut));
  }
  data.timestamps = data.sources.front().timestamps;
  Vector raw = make_target(data.sources[2 * options.target_market]);
  data.splits = split_indices(T, options.fractions);
  if (options.deseasonalize) {
    Deseasonalized ds = deseasonalize(raw, data.timestamps, options.interval_seconds, data.splits.train_end);
    data.target = std::move(ds.residual);
    data.seasonal_profile = std::move(ds.profile);
  } else {
    data.target = std::move(raw);
  }
  data.validate();
  return data;
}

std::vector<RawTrade> read_trades_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  const std::vector<std::string> expected{"timestamp", "price", "size", "side"};
  if (table.header != expected) throw DataError(path.filename().string() + " line 1: expected header timestamp,price,size,side");
  std::vector<RawTrade> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    const std::string where = path.filename().string() + " line " + std::to_string(row.line);
    RawTrade t;
    t.timestamp = parse_int(row.fields[0], row.line);
    t.price = parse_double(row.fields[1], row.line);
    t.size = parse_double(row.fields[2], row.line);
    const std::string side = lower(row.fields[3]);
    if (side == "buy") {
      t.side = Side::Buy;
    } else if (side == "sell") {
      t.side = Side::Sell;
    } else {
      throw DataError(where + ": side must be buy or sell, got '" + row.fields[3] + "'");
    }
    if (!(t.price > 0.0)) throw DataError(where + ": price must be positive");
    if (!(t.size > 0.0)) throw DataError(where + ": size must be positive");
    if (!out.empty() && t.timestamp < out.back().timestamp) throw DataError(where + ": timestamps not sorted");
    out.push_back(t);
  }
  return out;
}

std::vector<LobSnapshot> read_lob_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  const std::vector<std::string> expected{"timestamp", "level", "side", "price", "size"};
  if (table.header != expected) {
    throw DataError(path.filename().string() + " line 1: expected header timestamp,level,side,price,size");
  }
  std::vector<LobSnapshot> out;
  // level -> (price, size) per side of the snapshot being assembled
  std::map<std::int64_t, BookLevel> bids;
  std::map<std::int64_t, BookLevel> asks;
  std::int64_t current = 0;
  bool open = false;
  auto flush = [&] {
    LobSnapshot s;
    s.timestamp = current;
    for (const auto& [level, l] : bids) s.bids.push_back(l);
    for (const auto& [level, l] : asks) s.asks.push_back(l);
    out.push_back(std::move(s));
    bids.clear();
    asks.clear();
  };
  for (const auto& row : table.rows) {
    const std::string where = path.filename().string() + " line " + std::to_string(row.line);
    const std::int64_t ts = parse_int(row.fields[0], row.line);
    const std::int64_t level = parse_int(row.fields[1], row.line);
    const std::string side = lower(row.fields[2]);
    BookLevel l{parse_double(row.fields[3], row.line), parse_double(row.fields[4], row.line)};
    if (level < 0) throw DataError(where + ": level must be nonnegative");
    if (!(l.price > 0.0)) throw DataError(where + ": price must be positive");
    if (!(l.size > 0.0)) throw DataError(where + ": size must be positive");
    if (open && ts < current) throw DataError(where + ": timestamps not sorted");
    if (open && ts != current) flush();
    current = ts;
    open = true;
    std::map<std::int64_t, BookLevel>* book = nullptr;
    if (side == "bid") {
      book = &bids;
    } else if (side == "ask") {
      book = &asks;
    } else {
      throw DataError(where + ": side must be bid or ask, got '" + row.fields[2] + "'");
    }
    if (!book->emplace(level, l).second) throw DataError(where + ": duplicate level " + std::to_string(level));
  }
  if (open) flush();
  return out;
}

}  // namespace mixfc
