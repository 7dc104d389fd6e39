#pragma once

#include "mixfc/dataset.hpp"

#include <cstdint>
#include <vector>

namespace mixfc {

/// Regime-switching multi-source generator.
///
/// A Markov chain z_t over sources keeps its state with probability
/// `stay_probability` and otherwise jumps uniformly to another source. Source s
/// carries [signal a_s, indicator 1{z = s} + noise, distractors...], where a_s
/// is a unit-variance AR(1). The target is
///   y_t = gain * a_{z_t, t-1} + noise_sd * eps_t
/// (exponentiated in LogNormal mode), so only the active source predicts it.
struct SynthOptions {
  Index n_sources = 3;
  Index length = 20000;
  DistKind dist = DistKind::Normal;
  std::uint64_t seed = 0;
  double stay_probability = 0.98;
  double signal_ar = 0.8;
  double indicator_noise = 0.3;
  double noise_sd = 0.5;
  double gain = 2.0;
  Index features_per_source = 3;
  std::int64_t interval_seconds = 300;
  /// Output source i is generated source permutation[i]; empty keeps the order.
  std::vector<Index> permutation;

  void validate() const;
};

struct SynthGroundTruth {
  std::vector<Index> regime;  // z_t, 0-based source index
  Vector true_mean;           // E[y_t | z_t, past]
  Vector true_var;            // Var[y_t | z_t, past]
  Vector regime_gain;         // per regime
  double noise_sd = 0.0;
  std::vector<Index> informative_sources;
};

struct SynthResult {
  MultiSourceDataset data;
  SynthGroundTruth truth;
};

SynthResult synth_generate(const SynthOptions& options);

/// Relabels sources: output source i is input source perm[i]; regimes follow.
SynthResult permute_sources(const SynthResult& in, std::span<const Index> perm);

/// One-step-ahead regime forecast from an exact forward filter over the
/// generating model, using indicators and targets up to t-1. Entry t is the
/// most probable z_t.
std::vector<Index> oracle_regime_forecast(const SynthResult& synth, const SynthOptions& options);

}  // namespace mixfc
