#include "mixfc/synth.hpp"

#include "mixfc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mixfc {

void SynthOptions::validate() const {
  if (n_sources < 2) throw ConfigError("synthetic data needs at least 2 sources");
  if (length < 1000) throw ConfigError("synthetic length must be at least 1000");
  if (!(stay_probability >= 0.0 && stay_probability <= 1.0)) throw ConfigError("stay_probability must be in [0, 1]");
  if (!(std::abs(signal_ar) < 1.0)) throw ConfigError("signal_ar must be in (-1, 1)");
  if (!(indicator_noise > 0.0)) throw ConfigError("indicator_noise must be positive");
  if (!(noise_sd > 0.0)) throw ConfigError("noise_sd must be positive");
  if (features_per_source < 3) throw ConfigError("features_per_source must be at least 3");
  if (interval_seconds <= 0) throw ConfigError("interval_seconds must be positive");
  if (!permutation.empty()) {
    if (static_cast<Index>(permutation.size()) != n_sources) throw ConfigError("permutation length must equal n_sources");
    std::vector<Index> sorted = permutation;
    std::sort(sorted.begin(), sorted.end());
    for (Index i = 0; i < n_sources; ++i) {
      if (sorted[static_cast<std::size_t>(i)] != i) throw ConfigError("permutation is not a permutation of sources");
    }
  }
}

SynthResult synth_generate(const SynthOptions& options) {
  options.validate();
  const Index S = options.n_sources;
  const Index T = options.length;
  const Index d = options.features_per_source;
  Rng rng(options.seed);

  std::vector<Index> z(static_cast<std::size_t>(T));
  Matrix signal(T, S);
  std::vector<Matrix> values(static_cast<std::size_t>(S), Matrix(T, d));
  Vector y(T);
  Vector mean(T);
  Vector var(T);
  const double innov = std::sqrt(1.0 - options.signal_ar * options.signal_ar);
  const double s2 = options.noise_sd * options.noise_sd;

  for (Index t = 0; t < T; ++t) {
    if (t == 0) {
      z[0] = static_cast<Index>(rng.below(static_cast<std::uint64_t>(S)));
    } else if (rng.uniform() < options.stay_probability) {
      z[static_cast<std::size_t>(t)] = z[static_cast<std::size_t>(t - 1)];
    } else {
      const auto jump = static_cast<Index>(rng.below(static_cast<std::uint64_t>(S - 1)));
      const Index prev = z[static_cast<std::size_t>(t - 1)];
      z[static_cast<std::size_t>(t)] = jump < prev ? jump : jump + 1;
    }
    const Index zt = z[static_cast<std::size_t>(t)];

    for (Index s = 0; s < S; ++s) {
      signal(t, s) = t == 0 ? rng.normal() : options.signal_ar * signal(t - 1, s) + innov * rng.normal();
      Matrix& v = values[static_cast<std::size_t>(s)];
      v(t, 0) = signal(t, s);
      v(t, 1) = (zt == s ? 1.0 : 0.0) + options.indicator_noise * rng.normal();
      for (Index j = 2; j < d; ++j) v(t, j) = rng.normal();
    }

    const double m = t == 0 ? 0.0 : options.gain * signal(t - 1, zt);
    const double eps = rng.normal();
    if (options.dist == DistKind::Normal) {
      y[t] = m + options.noise_sd * eps;
      mean[t] = m;
      var[t] = s2;
    } else {
      y[t] = std::exp(m + options.noise_sd * eps);
      mean[t] = std::exp(m + 0.5 * s2);
      var[t] = std::expm1(s2) * std::exp(2.0 * m + s2);
    }
  }

  SynthResult out;
  auto& data = out.data;
  data.timestamps.resize(static_cast<std::size_t>(T));
  for (Index t = 0; t < T; ++t) data.timestamps[static_cast<std::size_t>(t)] = t * options.interval_seconds;
  std::vector<std::string> names{"signal", "indicator"};
  for (Index j = 2; j < d; ++j) names.push_back("noise_" + std::to_string(j - 2));
  for (Index s = 0; s < S; ++s) {
    SourceSeries src;
    src.source_id = "src" + std::to_string(s);
    src.market_id = "synthetic";
    src.feature_names = names;
    src.timestamps = data.timestamps;
    src.values = std::move(values[static_cast<std::size_t>(s)]);
    src.interval_seconds = options.interval_seconds;
    data.sources.push_back(std::move(src));
  }
  data.target = std::move(y);
  data.splits = split_indices(T, kDefaultFractions);

  out.truth.regime = std::move(z);
  out.truth.true_mean = std::move(mean);
  out.truth.true_var = std::move(var);
  out.truth.regime_gain = Vector::Constant(S, options.gain);
  out.truth.noise_sd = options.noise_sd;
  out.truth.informative_sources.resize(static_cast<std::size_t>(S));
  std::iota(out.truth.informative_sources.begin(), out.truth.informative_sources.end(), Index{0});

  if (!options.permutation.empty()) return permute_sources(out, options.permutation);
  return out;
}

SynthResult permute_sources(const SynthResult& in, std::span<const Index> perm) {
  const Index S = in.data.n_sources();
  if (static_cast<Index>(perm.size()) != S) throw ConfigError("permutation length must equal the source count");
  std::vector<Index> inverse(static_cast<std::size_t>(S), -1);
  for (Index i = 0; i < S; ++i) {
    const Index p = perm[static_cast<std::size_t>(i)];
    if (p < 0 || p >= S || inverse[static_cast<std::size_t>(p)] != -1) throw ConfigError("invalid permutation");
    inverse[static_cast<std::size_t>(p)] = i;
  }
  SynthResult out = in;
  for (Index i = 0; i < S; ++i) {
    out.data.sources[static_cast<std::size_t>(i)] = in.data.sources[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    out.data.sources[static_cast<std::size_t>(i)].source_id = "src" + std::to_string(i);
    out.truth.regime_gain[i] = in.truth.regime_gain[perm[static_cast<std::size_t>(i)]];
  }
  for (auto& r : out.truth.regime) r = inverse[static_cast<std::size_t>(r)];
  for (auto& s : out.truth.informative_sources) s = inverse[static_cast<std::size_t>(s)];
  std::sort(out.truth.informative_sources.begin(), out.truth.informative_sources.end());
  return out;
}

std::vector<Index> oracle_regime_forecast(const SynthResult& synth, const SynthOptions& options) {
  const auto& data = synth.data;
  const Index S = data.n_sources();
  const Index T = data.length();
  const double stay = options.stay_probability;
  const double move = (1.0 - stay) / static_cast<double>(S - 1);
  const double inv_nu2 = 1.0 / (options.indicator_noise * options.indicator_noise);
  const double inv_s2 = 1.0 / (options.noise_sd * options.noise_sd);

  std::vector<Index> predicted(static_cast<std::size_t>(T), 0);
  Vector prior = Vector::Constant(S, 1.0 / static_cast<double>(S));
  Vector loglik(S);
  for (Index t = 0; t < T; ++t) {
    Index best = 0;
    for (Index s = 1; s < S; ++s) {
      if (prior[s] > prior[best]) best = s;
    }
    predicted[static_cast<std::size_t>(t)] = best;

    // Update with the observations at t: all indicators and y_t.
    const double obs = options.dist == DistKind::Normal ? data.target[t] : std::log(data.target[t]);
    for (Index s = 0; s < S; ++s) {
      double ll = 0.0;
      for (Index k = 0; k < S; ++k) {
        const double r = data.sources[static_cast<std::size_t>(k)].values(t, 1) - (k == s ? 1.0 : 0.0);
        ll -= 0.5 * r * r * inv_nu2;
      }
      const double m = t == 0 ? 0.0 : synth.truth.regime_gain[s] * data.sources[static_cast<std::size_t>(s)].values(t - 1, 0);
      ll -= 0.5 * (obs - m) * (obs - m) * inv_s2;
      loglik[s] = ll + std::log(prior[s]);
    }
    const double top = loglik.maxCoeff();
    Vector post = (loglik.array() - top).exp().matrix();
    post /= post.sum();
    prior = (stay * post.array() + move * (1.0 - post.array())).matrix();
  }
  return predicted;
}

}  // namespace mixfc
