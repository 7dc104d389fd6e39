#pragma once

#include "mixfc/errors.hpp"
#include "mixfc/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace mixfc {

// --- losses -----------------------------------------------------------------

/// -(1/B) sum_t log sum_s w_s p_s(y_t); throws NumericError naming the first
/// non-finite instance.
double mixture_nll(std::span<const MixtureOutput> outputs, const Eigen::Ref<const Vector>& targets);

/// -(1/B) sum_t (1/S) sum_s log p_s(y_t). The -log(S a*) term of the upper
/// bound is constant in the head/encoder update and is not part of it.
double impartial_loss(std::span<const MixtureOutput> outputs, const Eigen::Ref<const Vector>& targets);

/// pi_s = w_s p_s / sum_k w_k p_k, computed in log space.
Vector posterior_weights(const MixtureOutput& output, double y);

/// Tape versions over a batched graph.
Var mixture_nll_graph(Tape& tape, const MixtureGraph& graph, DistKind kind, const Vector& targets);
Var impartial_nll_graph(Tape& tape, const MixtureGraph& graph, DistKind kind, const Vector& targets);

// --- gradient identities ----------------------------------------------------

/// Max relative discrepancy between the autodiff gradient of the mixture loss
/// and its posterior-weighted decomposition (pi_s g_omega for heads,
/// pi_s g_eta + d_eta for encoders), per instance and for the batch mean.
double verify_lemma41(const ModelConfig& config, const ModelParams& params,
                      std::span<const WindowedInstance> batch);

struct BoundCheck {
  double loss = 0.0;   // mixture NLL of the instance
  double bound = 0.0;  // -(1/S) sum_s log p_s - log(S a*), a* = min_s w_s
  double min_weight = 0.0;
};

/// Throws NumericError when loss > bound + 1e-9.
BoundCheck verify_lemma42(const ModelConfig& config, const ModelParams& params, const WindowedInstance& instance);

// --- optimisation -----------------------------------------------------------

enum class Phase { Impartial, Collective };
enum class OptimizerKind { SGD, Adam };

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct PhasedSchedule {
  Index impartial_epochs = 10;
  Index total_epochs = 60;
  double step_size = 1e-3;
  OptimizerSettings optimizer;
  Index batch_size = 128;
  double lr_decay = 0.85;
  Index decay_every = 10;
  std::optional<double> grad_clip;
  std::uint64_t seed = 0;

  void validate() const;
  double step_size_at(Index epoch) const;
};

struct GradientResult {
  double loss = 0.0;
  std::vector<Matrix> grads;  // param_refs() order; zeros for frozen groups
};

/// Loss and parameter gradients for one batch. The impartial phase uses the
/// equal-weighted NLL and leaves the weight module out of the graph.
GradientResult compute_gradients(const ModelConfig& config, const ModelParams& params,
                                 std::span<const WindowedInstance* const> batch, Phase phase);

/// Plain SGD or Adam over the parameters of a model. Moments and step counts
/// are tracked per tensor, so a group frozen during one phase starts fresh.
class Optimizer {
 public:
  Optimizer(OptimizerSettings settings, const ModelParams& params);

  void step(ModelParams& params, const std::vector<Matrix>& grads, double step_size, GroupMask update);

 private:
  OptimizerSettings settings_;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
  std::vector<Index> steps_;
};

struct TrainDiagnostics {
  Matrix source_rmse;     // epochs x S, training set, model units
  Vector loss;            // epochs, training mixture NLL after each epoch
  Matrix mean_posterior;  // epochs x S
  Vector val_nll;         // epochs, NaN without a validation split
  std::vector<Phase> phase;
  Index phase_boundary = 0;
  Index best_epoch = -1;
};

struct TrainResult {
  ModelParams params;
  TrainDiagnostics diagnostics;
};

/// Raised on a non-finite loss; carries the last finite parameters.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, ModelParams last_good, Index epoch)
      : NumericError(what), last_good_(std::move(last_good)), epoch_(epoch) {}

  const ModelParams& last_good() const { return last_good_; }
  Index epoch() const { return epoch_; }

 private:
  ModelParams last_good_;
  Index epoch_;
};

/// Phased training: epochs [0, impartial_epochs) fit encoders and heads on the
/// equal-weighted NLL with the weight module frozen; later epochs fit all
/// parameters on the mixture NLL. Returns the best-validation-NLL parameters
/// (final parameters when `val` is empty).
TrainResult train(const ModelConfig& config, const PhasedSchedule& schedule, std::span<const WindowedInstance> train_set,
                  std::span<const WindowedInstance> val_set = {});

/// RMSE between targets and each source's own predictive mean.
Vector source_wise_rmse(const ModelConfig& config, const ModelParams& params,
                        std::span<const WindowedInstance> instances);
Vector source_wise_rmse(std::span<const MixtureOutput> outputs, const Eigen::Ref<const Vector>& targets);

/// Header: epoch,phase,loss,rmse_src_0..,pi_src_0..
void write_diagnostics_csv(std::ostream& os, const TrainDiagnostics& diagnostics);

}  // namespace mixfc
