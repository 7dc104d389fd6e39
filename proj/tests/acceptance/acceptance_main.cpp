// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Pass criterion numbers as arguments to run a subset. `--expect-fail N` keeps
// criterion N's FAIL line but leaves it out of the exit status.

#include "cli.hpp"
#include "mixfc/featurize.hpp"
#include "mixfc/inference.hpp"
#include "mixfc/metrics.hpp"
#include "mixfc/synth.hpp"
#include "mixfc/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef MIXFC_FIXTURE_DIR
#error "MIXFC_FIXTURE_DIR must point at tests/fixtures"
#endif

using namespace mixfc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ModelConfig random_config(DistKind kind, Index lookback, std::uint64_t seed) {
  ModelConfig c;
  c.n_sources = 3;
  c.input_dims = {4, 4, 4};
  c.lookback = lookback;
  c.hidden_size = 8;
  c.weight_hidden = 8;
  c.dist = kind;
  c.seed = seed;
  return c;
}

WindowedInstance random_instance(const ModelConfig& c, Rng& rng) {
  WindowedInstance inst;
  for (Index s = 0; s < c.n_sources; ++s) {
    Matrix w(c.lookback, c.input_dims[static_cast<std::size_t>(s)]);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
    inst.windows.push_back(std::move(w));
  }
  const double z = 1.5 * rng.normal();
  inst.target = c.dist == DistKind::Normal ? z : std::exp(z);
  return inst;
}

MixtureOutput random_output(DistKind kind, Rng& rng) {
  MixtureOutput out;
  out.kind = kind;
  const Index S = 2 + static_cast<Index>(rng.below(4));
  Vector logits(S);
  for (Index s = 0; s < S; ++s) logits[s] = rng.normal();
  out.weights = softmax(logits);
  for (Index s = 0; s < S; ++s) {
    if (kind == DistKind::Normal) {
      out.components.push_back({3.0 * rng.normal(), 0.1 + 2.0 * rng.uniform()});
    } else {
      out.components.push_back({0.5 * rng.normal(), 0.02 + 0.28 * rng.uniform()});
    }
  }
  return out;
}

double sample_mixture(const MixtureOutput& out, Rng& rng) {
  double u = rng.uniform();
  Index s = 0;
  while (s + 1 < out.n_sources() && u >= out.weights[s]) {
    u -= out.weights[s];
    ++s;
  }
  return sample(out.kind, out.components[static_cast<std::size_t>(s)], rng);
}

// --- 1 ----------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const DistKind kind : {DistKind::Normal, DistKind::LogNormal}) {
    const ModelConfig config = random_config(kind, 12, 11);
    const ModelParams params = init_params(config);
    Rng rng(7);
    std::vector<WindowedInstance> batch;
    for (int i = 0; i < 3; ++i) batch.push_back(random_instance(config, rng));
    std::vector<const WindowedInstance*> ptrs;
    for (const auto& b : batch) ptrs.push_back(&b);
    const Vector y = targets_of(batch);
    std::vector<Tensor> flat;
    for (const auto& ref : param_refs(params)) flat.push_back(*ref.value);
    const double err = check_gradients(
        [&](Tape& tape, std::span<const Var> vars) {
          const MixtureGraph g = build_mixture_graph(tape, bind_flat(config, vars), config, ptrs);
          return mixture_nll_graph(tape, g, kind, y);
        },
        flat, 1e-5);
    worst = std::max(worst, err);
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 30.0, fmt("max rel err %.3e (< 1e-4), %.1f s (< 30 s)", worst, secs)};
}

// --- 2 ----------------------------------------------------------------------

Outcome posterior_identity() {
  double worst = 0.0;
  Rng rng(21);
  for (int d = 0; d < 100; ++d) {
    const DistKind kind = d % 2 ? DistKind::LogNormal : DistKind::Normal;
    const ModelConfig config = random_config(kind, 6, 1000 + static_cast<std::uint64_t>(d));
    const ModelParams params = init_params(config);
    const WindowedInstance inst = random_instance(config, rng);
    worst = std::max(worst, verify_lemma41(config, params, std::span<const WindowedInstance>(&inst, 1)));
  }
  return {worst < 1e-8, fmt("max relative discrepancy %.3e over 100 draws (< 1e-8)", worst)};
}

// --- 3 ----------------------------------------------------------------------

Outcome upper_bound() {
  Rng rng(31);
  double worst = -1e300;
  int violations = 0;
  for (int d = 0; d < 1000; ++d) {
    const DistKind kind = d % 2 ? DistKind::LogNormal : DistKind::Normal;
    ModelConfig config = random_config(kind, 3, 5000 + static_cast<std::uint64_t>(d));
    config.hidden_size = 4;
    config.weight_hidden = 4;
    ModelParams params = init_params(config);
    // Widen the logit layer so weights range far from uniform.
    for (auto& src : params.sources) src.logit_out.weight *= 1.0 + 20.0 * rng.uniform();
    const WindowedInstance inst = random_instance(config, rng);
    try {
      const BoundCheck b = verify_lemma42(config, params, inst);
      worst = std::max(worst, b.loss - b.bound);
    } catch (const NumericError&) {
      ++violations;
    }
  }

  // Identical sources and windows: equal weights and equal densities.
  double equal_gap = 0.0;
  for (const DistKind kind : {DistKind::Normal, DistKind::LogNormal}) {
    const ModelConfig config = random_config(kind, 4, 99);
    ModelParams params = init_params(config);
    for (auto& src : params.sources) src = params.sources.front();
    WindowedInstance inst = random_instance(config, rng);
    for (auto& w : inst.windows) w = inst.windows.front();
    const BoundCheck b = verify_lemma42(config, params, inst);
    equal_gap = std::max(equal_gap, std::abs(b.loss - b.bound));
  }
  const bool pass = violations == 0 && worst <= 1e-9 && equal_gap <= 1e-9;
  return {pass, fmt("max(loss - bound) %.3e over 1000 draws, %d violations; equal case |gap| %.3e", worst, violations,
                    equal_gap)};
}

// --- 4 ----------------------------------------------------------------------

Outcome uncertainty_decomposition() {
  Rng rng(41);
  bool exact = true;
  double worst_mean = 0.0;
  double worst_var = 0.0;
  for (const DistKind kind : {DistKind::Normal, DistKind::LogNormal}) {
    for (int i = 0; i < 20; ++i) {
      const MixtureOutput out = random_output(kind, rng);
      const Uncertainty u = predictive_uncertainty(out);
      exact = exact && u.total == u.aleatoric + u.mixture;
      const double m = predictive_mean(out);
      constexpr int n = 1000000;
      double sum = 0.0;
      double sum_sq = 0.0;
      for (int k = 0; k < n; ++k) {
        const double y = sample_mixture(out, rng) - m;
        sum += y;
        sum_sq += y * y;
      }
      const double mc_mean_offset = sum / n;
      const double mc_var = sum_sq / n - mc_mean_offset * mc_mean_offset;
      // Relative to the larger of |mean| and the predictive sd, so means near zero stay meaningful.
      worst_mean = std::max(worst_mean, std::abs(mc_mean_offset) / std::max(std::abs(m), std::sqrt(u.total)));
      worst_var = std::max(worst_var, std::abs(mc_var - u.total) / u.total);
    }
  }
  const bool pass = exact && worst_mean < 0.01 && worst_var < 0.01;
  return {pass, fmt("aleatoric+mixture==total %s; max rel dev mean %.4f, variance %.4f (< 0.01) over 40 mixtures",
                    exact ? "exact" : "NOT exact", worst_mean, worst_var)};
}

// --- 5 ----------------------------------------------------------------------

Outcome quantile_inversion() {
  Rng rng(51);
  const double alphas[] = {0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99};
  double worst = 0.0;
  double worst_cov = 0.0;
  for (int i = 0; i < 50; ++i) {
    const MixtureOutput out = random_output(i % 2 ? DistKind::LogNormal : DistKind::Normal, rng);
    for (const double a : alphas) worst = std::max(worst, std::abs(mixture_cdf(out, quantile(out, a)) - a));
    const auto [lo, hi] = interval(out, 0.1, 0.9);
    int inside = 0;
    for (int k = 0; k < 10000; ++k) {
      const double y = sample_mixture(out, rng);
      inside += (y >= lo && y <= hi) ? 1 : 0;
    }
    worst_cov = std::max(worst_cov, std::abs(inside / 10000.0 - 0.8));
  }
  return {worst <= 1e-9 && worst_cov <= 0.02,
          fmt("max |cdf(q(a)) - a| %.3e (<= 1e-9); max |coverage - 0.80| %.4f (<= 0.02)", worst, worst_cov)};
}

// --- 6, 7, 8 ----------------------------------------------------------------

struct SyntheticRun {
  double test_rmse = 0.0;
  double source_spread = 0.0;
  double weight_accuracy = 0.0;
  double unc_spearman = 0.0;
};

struct SyntheticSeed {
  SyntheticRun phased;
  SyntheticRun direct;
  double oracle_accuracy = 0.0;
};

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

SyntheticRun fit_and_score(const SynthResult& synth, const WindowedData& wd, std::uint64_t seed, bool phased) {
  ModelConfig config;
  config.n_sources = synth.data.n_sources();
  config.input_dims = wd.input_dims;
  config.lookback = 4;
  config.hidden_size = 8;
  config.weight_hidden = 8;
  config.seed = seed;
  PhasedSchedule schedule;
  schedule.impartial_epochs = phased ? 10 : 0;
  schedule.total_epochs = 60;
  schedule.step_size = 3e-3;
  schedule.batch_size = 128;
  schedule.seed = seed;
  const TrainResult fit = train(config, schedule, wd.train, wd.val);

  SyntheticRun r;
  const auto last = fit.diagnostics.source_rmse.row(fit.diagnostics.source_rmse.rows() - 1);
  double lo = 1e300;
  double hi = -1e300;
  for (const Index s : synth.truth.informative_sources) {
    lo = std::min(lo, last(s));
    hi = std::max(hi, last(s));
  }
  r.source_spread = hi - lo;

  const auto outputs = forward_batch(config, fit.params, wd.test);
  const auto n = static_cast<Index>(outputs.size());
  Vector y(n);
  Vector mean(n);
  Vector unc(n);
  Index hits = 0;
  for (Index i = 0; i < n; ++i) {
    const WindowedInstance& inst = wd.test[static_cast<std::size_t>(i)];
    const MixtureOutput raw =
        affine_transform(outputs[static_cast<std::size_t>(i)], wd.transform.offset_at(inst.timestamp), wd.transform.scale);
    y[i] = wd.transform.to_raw(inst.target, inst.timestamp);
    mean[i] = predictive_mean(raw);
    unc[i] = predictive_uncertainty(raw).total;
    Index best = 0;
    raw.weights.maxCoeff(&best);
    hits += best == synth.truth.regime[static_cast<std::size_t>(inst.time_index)] ? 1 : 0;
  }
  r.test_rmse = rmse(y, mean);
  r.weight_accuracy = static_cast<double>(hits) / static_cast<double>(n);
  r.unc_spearman = uncertainty_conditioned_errors(y, mean, unc, 5).spearman;
  return r;
}

const std::vector<SyntheticSeed>& synthetic_experiment() {
  static std::vector<SyntheticSeed> results;
  static bool done = false;
  if (done) return results;
  done = true;
  for (const std::uint64_t seed : kSeeds) {
    SynthOptions opt;
    opt.n_sources = 3;
    opt.length = 20000;
    opt.seed = seed;
    // Long regimes: at the default 0.98 no source gets neglected under direct training, so there is nothing to compare.
    opt.stay_probability = 0.995;
    const SynthResult synth = synth_generate(opt);
    WindowOptions w;
    w.lookback = 4;
    const WindowedData wd = window_and_split(synth.data, w);

    SyntheticSeed s;
    const std::vector<Index> oracle = oracle_regime_forecast(synth, opt);
    Index hits = 0;
    for (const auto& inst : wd.test) {
      const auto t = static_cast<std::size_t>(inst.time_index);
      hits += oracle[t] == synth.truth.regime[t] ? 1 : 0;
    }
    s.oracle_accuracy = static_cast<double>(hits) / static_cast<double>(wd.test.size());
    s.phased = fit_and_score(synth, wd, seed, true);
    s.direct = fit_and_score(synth, wd, seed, false);
    std::printf("  seed %llu: rmse phased %.4f direct %.4f | spread phased %.4f direct %.4f | weight acc %.4f "
                "(oracle %.4f) | unc spearman %.3f\n",
                static_cast<unsigned long long>(seed), s.phased.test_rmse, s.direct.test_rmse, s.phased.source_spread,
                s.direct.source_spread, s.phased.weight_accuracy, s.oracle_accuracy, s.phased.unc_spearman);
    std::fflush(stdout);
    results.push_back(s);
  }
  return results;
}

Outcome phased_vs_direct() {
  const auto t0 = Clock::now();
  const auto& runs = synthetic_experiment();
  const double secs = seconds_since(t0);
  std::vector<double> rp, rd, sp, sd;
  for (const auto& r : runs) {
    rp.push_back(r.phased.test_rmse);
    rd.push_back(r.direct.test_rmse);
    sp.push_back(r.phased.source_spread);
    sd.push_back(r.direct.source_spread);
  }
  const bool a = median(rp) <= median(rd);
  const bool b = median(sp) < median(sd);
  return {a && b && secs < 600.0,
          fmt("median test rmse phased %.4f vs direct %.4f; median source spread phased %.4f vs direct %.4f; %.0f s",
              median(rp), median(rd), median(sp), median(sd), secs)};
}

Outcome weight_adaptivity() {
  const auto& runs = synthetic_experiment();
  std::vector<double> acc, oracle;
  double worst_ratio = 1e300;
  for (const auto& r : runs) {
    acc.push_back(r.phased.weight_accuracy);
    oracle.push_back(r.oracle_accuracy);
    worst_ratio = std::min(worst_ratio, r.phased.weight_accuracy / r.oracle_accuracy);
  }
  const double m = median(acc);
  const double mo = median(oracle);
  return {m > 0.70 && m >= 0.85 * mo,
          fmt("median argmax-weight accuracy %.4f (> 0.70), oracle %.4f, ratio %.3f (>= 0.85), worst seed ratio %.3f", m,
              mo, m / mo, worst_ratio)};
}

Outcome uncertainty_conditioned() {
  const auto& runs = synthetic_experiment();
  int positive = 0;
  for (const auto& r : runs) positive += r.phased.unc_spearman > 0.0 ? 1 : 0;
  return {positive >= 4, fmt("positive bin-rmse rank correlation in %d of %zu seeds (>= 4)", positive, runs.size())};
}

// --- 9 ----------------------------------------------------------------------

Outcome metric_formulas() {
  const Vector y = (Vector(4) << 1.0, 2.0, 4.0, -1.0).finished();
  const Vector q50 = (Vector(4) << 1.5, 1.0, 4.0, 0.0).finished();
  const double abs_y = y.cwiseAbs().sum();
  const double abs_err = (y - q50).cwiseAbs().sum();
  const bool ql_exact = quantile_loss(y, q50, 0.5) * abs_y == abs_err;

  std::map<double, Vector> preds;
  std::map<double, double> by_alpha;
  double mean_ql = 0.0;
  for (const double a : kReportQuantiles) {
    preds[a] = (q50.array() + (a - 0.5) * 2.0).matrix();
    by_alpha[a] = quantile_loss(y, preds[a], a);
    mean_ql += by_alpha[a] / 5.0;
  }
  const bool qlm_ok = std::abs(qlm(y, preds) - mean_ql) <= 1e-15 && std::abs(qlm(by_alpha) - mean_ql) <= 1e-15;

  // Errors 0, 1, -1, -2: MSE 6/4, MAE 1.
  const Vector t = (Vector(4) << 1.0, 2.0, 3.0, 4.0).finished();
  const Vector p = (Vector(4) << 1.0, 1.0, 4.0, 6.0).finished();
  const double rmse_err = std::abs(rmse(t, p) - 1.2247448713915890);
  const double mae_err = std::abs(mae(t, p) - 1.0);
  const bool pass = ql_exact && qlm_ok && rmse_err <= 1e-12 && mae_err <= 1e-12;
  return {pass, fmt("QL(0.5)*sum|y| == sum|y-q| %s; QLm mean %s; rmse err %.1e, mae err %.1e", ql_exact ? "yes" : "no",
                    qlm_ok ? "ok" : "off", rmse_err, mae_err)};
}

// --- 10 ---------------------------------------------------------------------

Outcome featurization_fixtures() {
  const fs::path dir = MIXFC_FIXTURE_DIR;
  std::vector<std::string> failures;
  auto expect_row = [&](const char* what, const Matrix& m, Index row, std::vector<double> want) {
    if (m.cols() != static_cast<Index>(want.size()) || row >= m.rows()) {
      failures.push_back(std::string(what) + ": shape");
      return;
    }
    for (Index j = 0; j < m.cols(); ++j) {
      if (m(row, j) != want[static_cast<std::size_t>(j)]) {
        failures.push_back(fmt("%s row %ld col %ld: got %.17g want %.17g", what, static_cast<long>(row),
                               static_cast<long>(j), m(row, j), want[static_cast<std::size_t>(j)]));
      }
    }
  };

  // trades.csv: interval 0 buys 0.5, 0.3 and sell 0.1; interval 1 empty;
  // interval 2 buy 1.25 and sells 0.25, 0.5, 0.75.
  const auto trades = read_trades_csv(dir / "trades.csv");
  const SourceSeries ts = featurize_trades(trades, make_grid(0, 899, 300));
  expect_row("trades", ts.values, 0, {0.8, 0.1, 0.7000000000000001, 2, 1, 1});
  expect_row("trades", ts.values, 1, {0, 0, 0, 0, 0, 0});
  expect_row("trades", ts.values, 2, {1.25, 1.5, 0.25, 1, 3, 2});

  // lob.csv: interval 0 one snapshot, asks (100.5,1),(101.5,9), bids (100,3);
  // interval 1 only an ask side (flagged, forward-filled); interval 2 two
  // symmetric snapshots; interval 3 fractions reaching past the best level.
  const auto snaps = read_lob_csv(dir / "lob.csv");
  const LobFeatures lf = featurize_lob(snaps, make_grid(0, 1199, 300), LobOptions{});
  // Every fraction is reached at the best level (zero offset), so slope = C_p / tick.
  const std::vector<double> first{0.5, 10, 3, 7, 100, 300, 200, 100, 300, 200, 100, 300, 200};
  expect_row("lob", lf.series.values, 0, first);
  expect_row("lob", lf.series.values, 1, first);
  // Snapshot A: asks (101,2),(102,2) bids (99,2),(98,2); B: asks (100.5,4),(101,4) bids (99.5,4),(99,4).
  // p=0.01, 0.05, 0.10 all stop at level 0: A slopes 2/0.01, B slopes 4/0.01; averaged = 300.
  expect_row("lob", lf.series.values, 2, {1.5, 6, 6, 0, 300, 300, 0, 300, 300, 0, 300, 300, 0});
  // Asks (100.25,0.5),(100.75,1.5),(101.25,8): p=0.10 needs 1.0, reached at offset 0.5 with 2.0.
  // Bids (100,0.25),(99.75,0.25),(99.5,4.5): p=0.10 needs 0.5, reached at offset 0.25 with 0.5.
  expect_row("lob", lf.series.values, 3, {0.25, 10, 5, 5, 50, 25, 25, 50, 25, 25, 4, 2, 2});
  const bool ff = !lf.observed[1] && lf.observed[0] && lf.observed[2] && lf.observed[3];

  std::string detail = failures.empty() ? "6-feature and 13-feature fixtures bit-exact" : failures.front();
  if (!ff) detail += "; forward-fill flags wrong";
  return {failures.empty() && ff, detail};
}

// --- 11 ---------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "mixfc_acceptance_determinism";
  fs::remove_all(root);
  std::ostringstream out;
  std::ostringstream err;
  auto run = [&](std::vector<std::string> args) { return cli::run(args, out, err); };
  int rc = run({"synth", "--sources", "3", "--length", "1500", "--seed", "9", "-o", (root / "data").string()});
  for (const char* name : {"a", "b"}) {
    rc |= run({"train", "--data", (root / "data").string(), "-o", (root / name).string(), "--epochs", "4",
               "--impartial-epochs", "2", "--lookback", "4", "--hidden", "6", "--seed", "3"});
  }
  if (rc != 0) return {false, "cli failed: " + err.str()};
  const bool ckpt = slurp(root / "a" / "checkpoint.json") == slurp(root / "b" / "checkpoint.json");
  const bool diag = slurp(root / "a" / "diagnostics.csv") == slurp(root / "b" / "diagnostics.csv");
  const bool nonempty = !slurp(root / "a" / "checkpoint.json").empty();
  fs::remove_all(root);
  return {ckpt && diag && nonempty, fmt("checkpoint %s, diagnostics %s", ckpt ? "identical" : "DIFFERENT",
                                        diag ? "identical" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, gradient_correctness},   {2, posterior_identity},      {3, upper_bound},
      {4, uncertainty_decomposition}, {5, quantile_inversion},   {6, phased_vs_direct},
      {7, weight_adaptivity},      {8, uncertainty_conditioned}, {9, metric_formulas},
      {10, featurization_fixtures}, {11, determinism},
  };
  std::set<int> wanted;
  std::set<int> expected_fail;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--expect-fail" && i + 1 < argc) {
      expected_fail.insert(std::atoi(argv[++i]));
    } else {
      wanted.insert(std::atoi(argv[i]));
    }
  }

  int failed = 0;
  for (const auto& [id, check] : criteria) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const bool known = expected_fail.count(id) > 0;
    std::printf("criterion %2d: %s  %s%s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                known ? (o.pass ? "  (listed as expected failure)" : "  (expected failure)") : "");
    std::fflush(stdout);
    failed += o.pass || known ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
