#include "mixfc/bundle.hpp"
#include "mixfc/featurize.hpp"
#include "mixfc/metrics.hpp"
#include "mixfc/synth.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace mixfc {
namespace {

namespace fs = std::filesystem;

const fs::path kFixtures = MIXFC_FIXTURE_DIR;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mixfc_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RawTrade trade(std::int64_t t, double size, Side side) { return {t, 100.0, size, side}; }

MultiSourceDataset ramp_dataset(Index length, Index sources = 2) {
  MultiSourceDataset d;
  for (Index i = 0; i < length; ++i) d.timestamps.push_back(1000 + 300 * i);
  d.target = Vector::LinSpaced(length, 1.0, 2.0);
  for (Index s = 0; s < sources; ++s) {
    SourceSeries src;
    src.source_id = "s" + std::to_string(s);
    src.feature_names = {"a", "b"};
    src.timestamps = d.timestamps;
    src.values.resize(length, 2);
    for (Index i = 0; i < length; ++i) {
      src.values(i, 0) = std::sin(0.3 * static_cast<double>(i) + static_cast<double>(s));
      src.values(i, 1) = static_cast<double>((i * 7 + s) % 11);
    }
    d.sources.push_back(src);
  }
  d.splits = split_indices(length, kDefaultFractions);
  return d;
}

// --- trades -----------------------------------------------------------------

TEST(Trades, IntervalAggregates) {
  const std::vector<RawTrade> trades{trade(10, 0.5, Side::Buy), trade(20, 0.1, Side::Sell),
                                     trade(30, 0.3, Side::Buy), trade(650, 1.0, Side::Sell)};
  const SourceSeries s = featurize_trades(trades, make_grid(0, 899, 300));
  ASSERT_EQ(s.length(), 3);
  ASSERT_EQ(s.dim(), 6);
  const double want0[] = {0.8, 0.1, 0.7, 2, 1, 1};
  for (int c = 0; c < 6; ++c) EXPECT_NEAR(s.values(0, c), want0[c], 1e-15);
  EXPECT_TRUE(s.values.row(1).isZero(0.0));
  EXPECT_EQ(s.timestamps, (std::vector<std::int64_t>{0, 300, 600}));
  EXPECT_TRUE((s.values.array() >= 0.0).all());
}

TEST(Trades, SwappingSidesSwapsColumns) {
  std::vector<RawTrade> trades;
  Rng rng(3);
  for (int i = 0; i < 200; ++i) trades.push_back(trade(i * 17, 0.01 + rng.uniform(), rng.uniform() < 0.4 ? Side::Buy : Side::Sell));
  std::vector<RawTrade> swapped = trades;
  for (auto& t : swapped) t.side = t.side == Side::Buy ? Side::Sell : Side::Buy;
  const SourceSeries a = featurize_trades(trades, 300);
  const SourceSeries b = featurize_trades(swapped, 300);
  EXPECT_EQ(a.values.col(0), b.values.col(1));
  EXPECT_EQ(a.values.col(1), b.values.col(0));
  EXPECT_EQ(a.values.col(3), b.values.col(4));
  EXPECT_EQ(a.values.col(2), b.values.col(2));
  EXPECT_EQ(a.values.col(5), b.values.col(5));
}

TEST(Trades, OrderWithinTimestampDoesNotMatter) {
  std::vector<RawTrade> trades;
  for (int i = 0; i < 30; ++i) trades.push_back(trade(100 + (i / 10) * 400, 0.1 * (i + 1) + 1e-7 * i, Side::Buy));
  std::vector<RawTrade> shuffled = trades;
  Rng rng(5);
  for (std::size_t blk = 0; blk < 3; ++blk) {
    std::shuffle(shuffled.begin() + static_cast<long>(blk * 10), shuffled.begin() + static_cast<long>(blk * 10 + 10),
                 rng.engine());
  }
  const TimeGrid g = make_grid(0, 1199, 300);
  EXPECT_EQ(featurize_trades(trades, g).values, featurize_trades(shuffled, g).values);
}

TEST(Trades, Errors) {
  const std::vector<RawTrade> unsorted{trade(20, 1, Side::Buy), trade(10, 1, Side::Sell)};
  EXPECT_THROW(featurize_trades(unsorted, 300), DataError);
  const std::vector<RawTrade> empty;
  EXPECT_THROW(featurize_trades(empty, 300), DataError);
  const std::vector<RawTrade> one{trade(10, 1, Side::Buy)};
  EXPECT_THROW(featurize_trades(one, 0), ConfigError);
}

TEST(Trades, MakeTarget) {
  const std::vector<RawTrade> trades{trade(10, 0.5, Side::Buy), trade(20, 0.1, Side::Sell),
                                     trade(30, 0.3, Side::Buy), trade(700, 2.0, Side::Buy)};
  const SourceSeries s = featurize_trades(trades, make_grid(0, 899, 300));
  const Vector y = make_target(s);
  EXPECT_NEAR(y(0), 0.9, 1e-15);
  EXPECT_EQ(y(1), 0.0);
  // Independent recomputation from the raw trades.
  for (Index k = 0; k < 3; ++k) {
    double v = 0.0;
    for (const auto& t : trades) v += t.timestamp / 300 == k ? t.size : 0.0;
    EXPECT_NEAR(y(k), v, 1e-15);
  }
}

TEST(Grid, StartsOnIntervalBoundary) {
  const TimeGrid g = make_grid(650, 1210, 300);
  EXPECT_EQ(g.start, 600);
  EXPECT_EQ(g.count, 3);
  EXPECT_EQ(g.index_of(899), 0);
  EXPECT_EQ(g.index_of(900), 1);
}

// --- order book -------------------------------------------------------------

TEST(Lob, SingleLevelBook) {
  const LobSnapshot snap{0, {{100.0, 3}}, {{100.5, 2}}};
  const Vector f = snapshot_features(snap, {});
  ASSERT_EQ(f.size(), 13);
  EXPECT_DOUBLE_EQ(f(0), 0.5);
  EXPECT_EQ(f(1), 2.0);
  EXPECT_EQ(f(2), 3.0);
  EXPECT_EQ(f(3), 1.0);
}

TEST(Lob, SlopeUsesTickFloor) {
  const std::vector<BookLevel> asks{{100.5, 1}, {101.5, 9}};
  // 10% of 10 lots is reached by the best level alone: offset 0, floored to one tick.
  EXPECT_NEAR(book_slope(asks, 0.10, 0.01), 1.0 / 0.01, 1e-9);
  // 50% needs the second level: 10 lots over a 1.0 offset.
  EXPECT_NEAR(book_slope(asks, 0.50, 0.01), 10.0, 1e-12);
  EXPECT_THROW(book_slope({}, 0.1, 0.01), DataError);
}

TEST(Lob, SymmetricBookHasZeroImbalances) {
  const LobSnapshot snap{0, {{99.5, 1}, {99.0, 2}, {98.0, 5}}, {{100.5, 1}, {101.0, 2}, {102.0, 5}}};
  const Vector f = snapshot_features(snap, {});
  EXPECT_EQ(f(3), 0.0);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(f(4 + 3 * k), f(5 + 3 * k));
    EXPECT_EQ(f(6 + 3 * k), 0.0);
  }
  EXPECT_TRUE((f.array() >= 0.0).all());
}

TEST(Lob, InvalidBooks) {
  EXPECT_THROW(snapshot_features({0, {{100.0, 1}}, {{99.0, 1}}}, {}), DataError);          // crossed
  EXPECT_THROW(snapshot_features({0, {}, {{101.0, 1}}}, {}), DataError);                    // empty side
  EXPECT_THROW(snapshot_features({0, {{99.0, 1}, {99.5, 1}}, {{101.0, 1}}}, {}), DataError);  // unsorted
}

TEST(Lob, ForwardFillAndLeadingGap) {
  const LobSnapshot a{10, {{99, 1}}, {{101, 1}}};
  const LobSnapshot b{650, {{99, 1}}, {{100, 4}}};
  const LobSnapshot one_sided{700, {}, {{100, 1}}};
  const std::vector<LobSnapshot> snaps{a, b, one_sided};
  const LobFeatures f = featurize_lob(snaps, make_grid(0, 1199, 300), {});
  ASSERT_EQ(f.series.length(), 4);
  EXPECT_EQ(f.observed, (std::vector<bool>{true, false, true, false}));
  EXPECT_EQ(f.first_observed, 0);
  EXPECT_EQ(f.series.values.row(1), f.series.values.row(0));
  EXPECT_EQ(f.series.values.row(3), f.series.values.row(2));
  EXPECT_EQ(f.series.values(2, 0), 1.0);

  const std::vector<LobSnapshot> late{b};
  EXPECT_EQ(featurize_lob(late, make_grid(0, 1199, 300), {}).first_observed, 2);
}

TEST(Lob, IntervalAveragesSnapshots) {
  const LobSnapshot a{610, {{99, 2}}, {{101, 2}}};
  const LobSnapshot b{690, {{99.5, 4}}, {{100.5, 4}}};
  const std::vector<LobSnapshot> snaps{a, b};
  const LobFeatures f = featurize_lob(snaps, 300);
  ASSERT_EQ(f.series.length(), 1);
  const Vector want = 0.5 * (snapshot_features(a, {}) + snapshot_features(b, {}));
  EXPECT_LT((f.series.values.row(0).transpose() - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Lob, FeatureNames) {
  const double fr[] = {0.01, 0.05, 0.10};
  const auto names = lob_feature_names(fr);
  ASSERT_EQ(names.size(), 13u);
  EXPECT_EQ(names[4], "ask_slope_1pct");
}

// --- deseasonalization ------------------------------------------------------

std::vector<std::int64_t> day_grid(Index n, std::int64_t interval) {
  std::vector<std::int64_t> ts;
  for (Index i = 0; i < n; ++i) ts.push_back(interval * i);
  return ts;
}

TEST(Deseasonalize, ConstantSeries) {
  const auto ts = day_grid(3 * 288, 300);
  const Vector y = Vector::Constant(3 * 288, 4.25);
  const Deseasonalized d = deseasonalize(y, ts, 300, 2 * 288);
  EXPECT_TRUE(d.residual.isZero(0.0));
  ASSERT_EQ(d.profile.slot_means.size(), 288u);
  for (const double m : d.profile.slot_means) EXPECT_EQ(m, 4.25);
}

TEST(Deseasonalize, PeriodicSeriesAndRoundTrip) {
  const auto ts = day_grid(4 * 24, 3600);
  Vector y(4 * 24);
  for (Index i = 0; i < y.size(); ++i) y(i) = static_cast<double>((i % 24) * (i % 24)) / 8.0;
  const Deseasonalized d = deseasonalize(y, ts, 3600, 3 * 24);
  EXPECT_TRUE(d.residual.isZero(0.0));
  EXPECT_EQ(reseasonalize(d.residual, ts, d.profile), y);

  Vector noisy = y;
  for (Index i = 0; i < y.size(); ++i) noisy(i) += static_cast<double>(i % 5) * 0.25;
  const Deseasonalized n = deseasonalize(noisy, ts, 3600, 3 * 24);
  EXPECT_EQ(reseasonalize(n.residual, ts, n.profile), noisy);
}

TEST(Deseasonalize, UnseenSlotUsesGlobalMean) {
  // Training rows only cover the first 12 hourly slots.
  const auto ts = day_grid(24, 3600);
  Vector y = Vector::LinSpaced(24, 0.0, 23.0);
  const Deseasonalized d = deseasonalize(y, ts, 3600, 12);
  EXPECT_EQ(d.profile.slot_means[3], 3.0);
  EXPECT_DOUBLE_EQ(d.profile.slot_means[20], 5.5);
  EXPECT_THROW(deseasonalize(y, ts, 7000, 12), ConfigError);
}

// --- crypto layout ----------------------------------------------------------

TEST(MarketDataset, TwoMarketLayout) {
  const auto trades = read_trades_csv(kFixtures / "trades.csv");
  const auto lob = read_lob_csv(kFixtures / "lob.csv");
  const std::vector<MarketData> markets{{"m0", trades, lob}, {"m1", trades, lob}};
  FeaturizeOptions o;
  o.deseasonalize = false;
  o.fractions = {0.5, 0.25, 0.25};
  const MultiSourceDataset d = build_market_dataset(markets, o);
  ASSERT_EQ(d.n_sources(), 4);
  EXPECT_EQ(d.dims(), (std::vector<Index>{6, 13, 6, 13}));
  EXPECT_NO_THROW(d.validate());
  for (const auto& s : d.sources) EXPECT_TRUE(s.values.allFinite());
  EXPECT_EQ(d.target(0), d.sources[0].values(0, 0) + d.sources[0].values(0, 1));
}

TEST(Csv, ReaderErrorsNameFileAndLine) {
  const fs::path dir = scratch_dir("csv");
  {
    std::ofstream f(dir / "bad.csv");
    f << "timestamp,price,size,side\n1,100,0.5,buy\n2,100,0.5,hold\n";
  }
  try {
    read_trades_csv(dir / "bad.csv");
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("bad.csv"), std::string::npos) << msg;
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  }
  {
    std::ofstream f(dir / "dup.csv");
    f << "timestamp,level,side,price,size\n1,0,bid,99,1\n1,0,bid,98,1\n1,0,ask,101,1\n";
  }
  EXPECT_THROW(read_lob_csv(dir / "dup.csv"), DataError);
}

// --- synthetic generator ----------------------------------------------------

TEST(Synth, Deterministic) {
  SynthOptions o;
  o.length = 2000;
  o.seed = 4;
  const SynthResult a = synth_generate(o);
  const SynthResult b = synth_generate(o);
  EXPECT_EQ(a.data.target, b.data.target);
  for (Index s = 0; s < a.data.n_sources(); ++s) EXPECT_EQ(a.data.sources[s].values, b.data.sources[s].values);
  EXPECT_EQ(a.truth.regime, b.truth.regime);
  o.seed = 5;
  EXPECT_NE(synth_generate(o).data.target, a.data.target);
}

TEST(Synth, RegimesAndShapes) {
  SynthOptions o;
  o.length = 3000;
  o.n_sources = 4;
  const SynthResult r = synth_generate(o);
  EXPECT_EQ(r.data.n_sources(), 4);
  EXPECT_EQ(r.data.length(), 3000);
  EXPECT_EQ(r.truth.regime.size(), 3000u);
  for (const Index z : r.truth.regime) {
    EXPECT_GE(z, 0);
    EXPECT_LT(z, 4);
  }
  EXPECT_EQ(r.truth.informative_sources.size(), 4u);
  EXPECT_NO_THROW(r.data.validate());
  SynthOptions bad;
  bad.n_sources = 1;
  EXPECT_THROW(synth_generate(bad), ConfigError);
}

TEST(Synth, OracleMeanReachesNoiseFloor) {
  for (const DistKind kind : {DistKind::Normal, DistKind::LogNormal}) {
    SynthOptions o;
    o.length = 20000;
    o.seed = 7;
    o.dist = kind;
    const SynthResult r = synth_generate(o);
    if (kind == DistKind::Normal) {
      EXPECT_NEAR(rmse(r.data.target, r.truth.true_mean), o.noise_sd, 0.02);
    } else {
      EXPECT_TRUE((r.data.target.array() > 0.0).all());
      EXPECT_NEAR(rmse(r.data.target.array().log().matrix(),
                       (r.truth.true_mean.array().log() - 0.5 * o.noise_sd * o.noise_sd).matrix()),
                  o.noise_sd, 0.02);
    }
  }
}

TEST(Synth, OracleRegimeForecastIsAccurate) {
  SynthOptions o;
  o.length = 5000;
  o.seed = 2;
  const SynthResult r = synth_generate(o);
  const auto f = oracle_regime_forecast(r, o);
  Index hits = 0;
  for (std::size_t t = 1; t < f.size(); ++t) hits += f[t] == r.truth.regime[t];
  EXPECT_GT(static_cast<double>(hits) / static_cast<double>(f.size() - 1), 0.9);
}

TEST(Synth, PermutationRelabelsConsistently) {
  SynthOptions o;
  o.length = 1500;
  o.seed = 8;
  const SynthResult base = synth_generate(o);
  const std::vector<Index> perm{2, 0, 1};
  SynthOptions po = o;
  po.permutation = perm;
  for (const SynthResult& p : {synth_generate(po), permute_sources(base, perm)}) {
    EXPECT_EQ(p.data.target, base.data.target);
    for (Index i = 0; i < 3; ++i) EXPECT_EQ(p.data.sources[i].values, base.data.sources[perm[i]].values);
    for (std::size_t t = 0; t < base.truth.regime.size(); ++t) {
      EXPECT_EQ(perm[p.truth.regime[t]], base.truth.regime[t]);
    }
    EXPECT_EQ(p.truth.true_mean, base.truth.true_mean);
  }
}

// --- windowing and splits ---------------------------------------------------

TEST(Windowing, InstanceCount) {
  const MultiSourceDataset d = ramp_dataset(100);
  WindowOptions w;
  w.lookback = 10;
  w.horizon = 1;
  const WindowedData wd = window_and_split(d, w);
  EXPECT_EQ(wd.train.size() + wd.val.size() + wd.test.size(), 89u);
}

TEST(Windowing, WindowsEndBeforeTheHorizon) {
  const MultiSourceDataset d = ramp_dataset(60);
  WindowOptions w;
  w.lookback = 4;
  w.horizon = 2;
  const WindowedData wd = window_and_split(d, w);
  const WindowedInstance& inst = wd.test.back();
  const Index t = inst.time_index;
  EXPECT_EQ(t, 59);
  EXPECT_EQ(inst.timestamp, d.timestamps[static_cast<std::size_t>(t)]);
  const Vector& mu = wd.stats.feature_mean[0];
  const Vector& sd = wd.stats.feature_std[0];
  for (Index r = 0; r < 4; ++r) {
    const Index row = t - 2 - 3 + r;
    for (Index c = 0; c < 2; ++c) {
      EXPECT_NEAR(inst.windows[0](r, c), (d.sources[0].values(row, c) - mu(c)) / sd(c), 1e-12);
    }
  }
  EXPECT_NEAR(wd.transform.to_raw(inst.target, inst.timestamp), d.target(t), 1e-12);
}

TEST(Windowing, StandardizedTrainingRows) {
  const MultiSourceDataset d = ramp_dataset(200);
  const Standardization st = fit_standardization(d, DistKind::Normal);
  const Index n = d.splits.train_end;
  for (Index s = 0; s < d.n_sources(); ++s) {
    const Matrix z = ((d.sources[s].values.topRows(n).rowwise() - st.feature_mean[s].transpose()).array().rowwise() /
                      st.feature_std[s].transpose().array())
                         .matrix();
    for (Index c = 0; c < z.cols(); ++c) {
      EXPECT_NEAR(z.col(c).mean(), 0.0, 1e-10);
      EXPECT_NEAR(z.col(c).squaredNorm() / static_cast<double>(n), 1.0, 1e-10);
    }
  }
}

TEST(Windowing, SplitsAreTimeOrdered) {
  const MultiSourceDataset d = ramp_dataset(300);
  WindowOptions w;
  w.lookback = 5;
  const WindowedData wd = window_and_split(d, w);
  std::int64_t last_train = 0;
  for (const auto& i : wd.train) last_train = std::max(last_train, i.timestamp);
  for (const auto& i : wd.val) EXPECT_GT(i.timestamp, last_train);
  for (const auto& i : wd.test) EXPECT_GT(i.timestamp, last_train);
  const SplitIndices sp = split_indices(300, kDefaultFractions);
  EXPECT_EQ(sp.train_end, 210);
  EXPECT_EQ(sp.val_end, 240);
}

TEST(Windowing, Errors) {
  EXPECT_THROW(split_indices(100, {0.5, 0.3, 0.3}), ConfigError);
  MultiSourceDataset d = ramp_dataset(100);
  WindowOptions w;
  w.lookback = 5;
  w.dist = DistKind::LogNormal;
  d.target(50) = 0.0;
  EXPECT_THROW(window_and_split(d, w), DataError);
  w.dist = DistKind::Normal;
  w.lookback = 100;
  EXPECT_THROW(window_and_split(d, w), DataError);
  MultiSourceDataset misaligned = ramp_dataset(100);
  misaligned.sources[1].timestamps[3] += 1;
  EXPECT_THROW(misaligned.validate(), DataError);
}

TEST(Windowing, AutoregressiveColumn) {
  const MultiSourceDataset d = ramp_dataset(80);
  WindowOptions w;
  w.lookback = 3;
  w.ar_source = 1;
  const WindowedData wd = window_and_split(d, w);
  EXPECT_EQ(wd.input_dims, (std::vector<Index>{2, 3}));
  EXPECT_EQ(model_input_dims(d, w), wd.input_dims);
}

// --- bundles ----------------------------------------------------------------

TEST(Bundle, RoundTripIsBitIdentical) {
  SynthOptions o;
  o.length = 1200;
  o.seed = 11;
  const SynthResult r = synth_generate(o);
  const fs::path dir = scratch_dir("bundle");
  save_bundle(dir, r.data, &r.truth);
  const Bundle b = load_bundle(dir);
  EXPECT_EQ(b.data.target, r.data.target);
  EXPECT_EQ(b.data.timestamps, r.data.timestamps);
  EXPECT_EQ(b.data.splits.train_end, r.data.splits.train_end);
  EXPECT_EQ(b.data.splits.val_end, r.data.splits.val_end);
  ASSERT_EQ(b.data.n_sources(), r.data.n_sources());
  for (Index s = 0; s < r.data.n_sources(); ++s) {
    EXPECT_EQ(b.data.sources[s].values, r.data.sources[s].values);
    EXPECT_EQ(b.data.sources[s].feature_names, r.data.sources[s].feature_names);
  }
  ASSERT_TRUE(b.truth.has_value());
  EXPECT_EQ(b.truth->regime, r.truth.regime);
  EXPECT_EQ(b.truth->true_mean, r.truth.true_mean);
  EXPECT_EQ(b.truth->true_var, r.truth.true_var);
}

TEST(Bundle, SeasonalProfileSurvives) {
  MultiSourceDataset d = ramp_dataset(600);
  SeasonalProfile p;
  p.interval_seconds = 300;
  for (int i = 0; i < 288; ++i) p.slot_means.push_back(0.1 * i + 1.0 / 3.0);
  d.seasonal_profile = p;
  const fs::path dir = scratch_dir("bundle_season");
  save_bundle(dir, d);
  const Bundle b = load_bundle(dir);
  ASSERT_TRUE(b.data.seasonal_profile.has_value());
  EXPECT_EQ(b.data.seasonal_profile->slot_means, p.slot_means);
  EXPECT_FALSE(b.truth.has_value());
}

TEST(Bundle, MissingDirectoryIsDataError) {
  EXPECT_THROW(load_bundle(fs::temp_directory_path() / "mixfc_unit_does_not_exist"), DataError);
}

}  // namespace
}  // namespace mixfc
