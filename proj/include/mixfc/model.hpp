#pragma once

#include "mixfc/dataset.hpp"
#include "mixfc/distributions.hpp"
#include "mixfc/tape.hpp"
#include "mixfc/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mixfc {

/// Floor added to the softplus variance at every prediction head.
inline constexpr double kSigma2Min = 1e-8;

struct ModelConfig {
  Index n_sources = 1;
  std::vector<Index> input_dims;
  Index lookback = 12;
  Index hidden_size = 16;
  Index encoder_layers = 1;
  std::vector<Index> head_hidden;
  Index weight_hidden = 8;
  DistKind dist = DistKind::Normal;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Row-vector layer y = x W + b with W in_dim x out_dim and b 1 x out_dim.
struct DenseLayer {
  Matrix weight;
  Matrix bias;
};

/// Gate blocks are stacked along columns in the order input, forget, cell, output.
struct LstmLayer {
  Matrix input_weight;      // in x 4h
  Matrix recurrent_weight;  // h x 4h
  Matrix bias;              // 1 x 4h
};

/// Everything owned by one source: encoder (eta_s), head (omega_s) and the
/// weight-module logit perceptron (theta_s). Sources share no parameters.
struct SourceParams {
  std::vector<LstmLayer> encoder;
  std::vector<DenseLayer> head;  // hidden tanh layers followed by a 2-unit output (mu, raw variance)
  DenseLayer logit_hidden;
  DenseLayer logit_out;
};

struct ModelParams {
  std::vector<SourceParams> sources;
};

enum class ParamGroup { Encoder, Head, Weight };

template <typename MatrixPtr>
struct BasicParamRef {
  std::string name;
  ParamGroup group;
  Index source;
  MatrixPtr value;
};

using ParamRef = BasicParamRef<Matrix*>;
using ConstParamRef = BasicParamRef<const Matrix*>;

/// Flat, deterministic enumeration of every parameter tensor.
std::vector<ParamRef> param_refs(ModelParams& params);
std::vector<ConstParamRef> param_refs(const ModelParams& params);

/// Uniform(-a, a) with a = 1 / sqrt(fan_in), seeded by config.seed.
ModelParams init_params(const ModelConfig& config);

/// Throws ConfigError when `params` does not match the shapes of `config`.
void check_params(const ModelConfig& config, const ModelParams& params);

struct MixtureOutput {
  DistKind kind = DistKind::Normal;
  Vector weights;
  std::vector<DistParams<double>> components;
  std::vector<Vector> reps;

  Index n_sources() const { return weights.size(); }
};

// --- graph construction -----------------------------------------------------

struct BoundSource {
  std::vector<std::array<Var, 3>> encoder;
  std::vector<std::array<Var, 2>> head;
  std::array<Var, 2> logit_hidden;
  std::array<Var, 2> logit_out;
};

/// Parameters placed on a tape. `flat` follows the order of param_refs().
struct BoundParams {
  std::vector<BoundSource> sources;
  std::vector<Var> flat;
};

struct GroupMask {
  bool encoder = true;
  bool head = true;
  bool weight = true;

  bool trainable(ParamGroup g) const {
    return g == ParamGroup::Encoder ? encoder : g == ParamGroup::Head ? head : weight;
  }
};

/// Groups outside `trainable` are recorded as constants.
BoundParams bind_params(Tape& tape, const ModelParams& params, GroupMask trainable = {});

/// Regroups Vars already on a tape, given in param_refs() order.
BoundParams bind_flat(const ModelConfig& config, std::span<const Var> flat);

/// Batched forward graph; each Var has one row per instance.
struct MixtureGraph {
  std::vector<Var> reps;    // B x h per source
  std::vector<Var> mu;      // B x 1 per source
  std::vector<Var> sigma2;  // B x 1 per source
  Var logits;               // B x S, only when built with weights
  Var log_weights;          // B x S, only when built with weights
};

MixtureGraph build_mixture_graph(Tape& tape, const BoundParams& bound, const ModelConfig& config,
                                 std::span<const WindowedInstance* const> batch, bool with_weights = true);

/// B x S matrix of log p_s(y_t) on the tape.
Var component_log_pdf(Tape& tape, const MixtureGraph& graph, DistKind kind, const Vector& targets);

Var encode_graph(Tape& tape, std::span<const std::array<Var, 3>> layers, std::span<const Var> steps);

// --- plain evaluation -------------------------------------------------------

/// Last hidden state of the LSTM stack of `source` over an L x d_s window.
Vector encode(const ModelConfig& config, const ModelParams& params, Index source, const Matrix& window);

DistParams<double> head(const ModelConfig& config, const SourceParams& source, const Vector& rep);

/// Softmax over the per-source logits f_s(rep_s).
Vector mixture_weights(const ModelParams& params, std::span<const Vector> reps);

MixtureOutput forward(const ModelConfig& config, const ModelParams& params, const WindowedInstance& instance);

std::vector<MixtureOutput> forward_batch(const ModelConfig& config, const ModelParams& params,
                                         std::span<const WindowedInstance> instances);

/// Softmax of a single row of logits, computed through log-sum-exp.
Vector softmax(const Vector& logits);

}  // namespace mixfc
