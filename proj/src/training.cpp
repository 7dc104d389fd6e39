#include "mixfc/training.hpp"

#include "mixfc/csv.hpp"
#include "mixfc/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <mutex>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mixfc {

namespace {

// Every batch builds and frees a tape of mid-sized blocks. Left alone, glibc
// hands that memory back to the OS after each batch and page-faults it in
// again on the next one.
void retain_heap() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    mallopt(M_TOP_PAD, 64 << 20);
  });
#endif
}

constexpr double kBoundSlack = 1e-9;

double relative_gap(const Matrix& lhs, const Matrix& rhs) {
  const double scale = std::max(lhs.cwiseAbs().maxCoeff(), rhs.cwiseAbs().maxCoeff());
  if (scale == 0.0) return 0.0;
  return (lhs - rhs).cwiseAbs().maxCoeff() / scale;
}

std::vector<const WindowedInstance*> pointers(std::span<const WindowedInstance> instances) {
  std::vector<const WindowedInstance*> p;
  p.reserve(instances.size());
  for (const auto& inst : instances) p.push_back(&inst);
  return p;
}

Vector batch_targets(std::span<const WindowedInstance* const> batch) {
  Vector y(static_cast<Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) y[static_cast<Index>(i)] = batch[i]->target;
  return y;
}

Vector component_log_densities(const MixtureOutput& output, double y) {
  Vector lp(output.n_sources());
  for (Index s = 0; s < lp.size(); ++s) lp[s] = log_pdf(output.kind, output.components[s], y);
  return lp;
}

}  // namespace

double mixture_nll(std::span<const MixtureOutput> outputs, const Eigen::Ref<const Vector>& targets) {
  if (outputs.empty()) throw DataError("mixture_nll: empty batch");
  if (static_cast<Index>(outputs.size()) != targets.size()) throw DataError("mixture_nll: length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const double lp = mixture_log_pdf(outputs[i], targets[static_cast<Index>(i)]);
    if (!std::isfinite(lp)) throw NumericError("mixture_nll: non-finite loss at instance " + std::to_string(i));
    total -= lp;
  }
  return total / static_cast<double>(outputs.size());
}

double impartial_loss(std::span<const MixtureOutput> outputs, const Eigen::Ref<const Vector>& targets) {
  if (outputs.empty()) throw DataError("impartial_loss: empty batch");
  if (static_cast<Index>(outputs.size()) != targets.size()) throw DataError("impartial_loss: length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const double lp = component_log_densities(outputs[i], targets[static_cast<Index>(i)]).mean();
    if (!std::isfinite(lp)) throw NumericError("impartial_loss: non-finite loss at instance " + std::to_string(i));
    total -= lp;
  }
  return total / static_cast<double>(outputs.size());
}

Vector posterior_weights(const MixtureOutput& output, double y) {
  const Vector lp = component_log_densities(output, y);
  const Vector joint = output.weights.array().log().matrix() + lp;
  const double m = joint.maxCoeff();
  if (!std::isfinite(m)) throw NumericError("posterior_weights: all component densities underflow");
  const double lse = m + std::log((joint.array() - m).exp().sum());
  return (joint.array() - lse).exp().matrix();
}

Var mixture_nll_graph(Tape& tape, const MixtureGraph& graph, DistKind kind, const Vector& targets) {
  const Var lp = component_log_pdf(tape, graph, kind, targets);
  return -mean(log_sum_exp(graph.log_weights + lp));
}

Var impartial_nll_graph(Tape& tape, const MixtureGraph& graph, DistKind kind, const Vector& targets) {
  // Mean over the B x S matrix equals (1/B) sum_t (1/S) sum_s.
  return -mean(component_log_pdf(tape, graph, kind, targets));
}

double verify_lemma41(const ModelConfig& config, const ModelParams& params,
                      std::span<const WindowedInstance> batch) {
  if (batch.empty()) throw DataError("verify_lemma41: empty batch");
  const auto refs = param_refs(params);
  std::vector<Matrix> sum_lhs(refs.size());
  std::vector<Matrix> sum_rhs(refs.size());
  double worst = 0.0;

  for (const WindowedInstance& inst : batch) {
    Tape tape;
    const BoundParams bound = bind_params(tape, params);
    const WindowedInstance* one[] = {&inst};
    const MixtureGraph graph = build_mixture_graph(tape, bound, config, one);
    const Vector y = Vector::Constant(1, inst.target);
    const Var lp = component_log_pdf(tape, graph, config.dist, y);
    const Var loss = -mean(log_sum_exp(graph.log_weights + lp));
    const Gradients full = tape.backward(loss);

    // Posterior weights from the recorded forward values.
    const Matrix joint = graph.log_weights.value() + lp.value();
    const double m = joint.maxCoeff();
    const Matrix post = (joint.array() - (m + std::log((joint.array() - m).exp().sum()))).exp().matrix();

    // d_eta: -sum_k pi_k d log w_k / d eta_s with pi held fixed.
    const Var weight_term = -sum(tape.constant(post) * graph.log_weights);
    const Gradients d_eta = tape.backward(weight_term);

    std::vector<Gradients> own;
    for (Index s = 0; s < config.n_sources; ++s) own.push_back(tape.backward(-sum(slice(lp, s, 1))));

    for (std::size_t i = 0; i < refs.size(); ++i) {
      if (refs[i].group == ParamGroup::Weight) continue;
      const Var& v = bound.flat[i];
      const Index s = refs[i].source;
      const Matrix lhs = full[v];
      Matrix rhs = post(0, s) * own[static_cast<std::size_t>(s)][v];
      if (refs[i].group == ParamGroup::Encoder) rhs += d_eta[v];
      worst = std::max(worst, relative_gap(lhs, rhs));
      if (sum_lhs[i].size() == 0) {
        sum_lhs[i] = lhs;
        sum_rhs[i] = rhs;
      } else {
        sum_lhs[i] += lhs;
        sum_rhs[i] += rhs;
      }
    }
  }
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (sum_lhs[i].size() == 0) continue;
    worst = std::max(worst, relative_gap(sum_lhs[i], sum_rhs[i]));
  }
  return worst;
}

BoundCheck verify_lemma42(const ModelConfig& config, const ModelParams& params, const WindowedInstance& instance) {
  const MixtureOutput out = forward(config, params, instance);
  const Vector lp = component_log_densities(out, instance.target);
  BoundCheck r;
  r.loss = -mixture_log_pdf(out, instance.target);
  r.min_weight = out.weights.minCoeff();
  r.bound = -lp.mean() - std::log(static_cast<double>(out.n_sources()) * r.min_weight);
  if (r.loss > r.bound + kBoundSlack) {
    throw NumericError("mixture loss " + std::to_string(r.loss) + " exceeds its upper bound " + std::to_string(r.bound));
  }
  return r;
}

void PhasedSchedule::validate() const {
  if (total_epochs < 1) throw ConfigError("schedule: total_epochs must be >= 1");
  if (impartial_epochs < 0 || impartial_epochs > total_epochs) {
    throw ConfigError("schedule: impartial_epochs must lie in [0, total_epochs]");
  }
  if (!(step_size > 0.0)) throw ConfigError("schedule: step size must be positive");
  if (batch_size < 1) throw ConfigError("schedule: batch_size must be >= 1");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("schedule: lr_decay must lie in (0, 1]");
  if (decay_every < 1) throw ConfigError("schedule: decay_every must be >= 1");
  if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("schedule: grad_clip must be positive");
  if (optimizer.kind == OptimizerKind::Adam) {
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
      throw ConfigError("schedule: Adam betas must lie in [0, 1)");
    }
    if (!(optimizer.epsilon > 0.0)) throw ConfigError("schedule: Adam epsilon must be positive");
  }
}

double PhasedSchedule::step_size_at(Index epoch) const {
  return step_size * std::pow(lr_decay, static_cast<double>(epoch / decay_every));
}

GradientResult compute_gradients(const ModelConfig& config, const ModelParams& params,
                                 std::span<const WindowedInstance* const> batch, Phase phase) {
  const bool collective = phase == Phase::Collective;
  Tape tape;
  const BoundParams bound = bind_params(tape, params, {true, true, collective});
  const MixtureGraph graph = build_mixture_graph(tape, bound, config, batch, collective);
  const Vector y = batch_targets(batch);
  const Var loss = collective ? mixture_nll_graph(tape, graph, config.dist, y)
                              : impartial_nll_graph(tape, graph, config.dist, y);
  GradientResult result;
  result.loss = loss.value()(0, 0);
  const Gradients grads = tape.backward(loss);
  result.grads.reserve(bound.flat.size());
  for (const Var& v : bound.flat) result.grads.push_back(grads[v]);
  return result;
}

Optimizer::Optimizer(OptimizerSettings settings, const ModelParams& params) : settings_(settings) {
  for (const auto& ref : param_refs(params)) {
    first_.push_back(Matrix::Zero(ref.value->rows(), ref.value->cols()));
    second_.push_back(Matrix::Zero(ref.value->rows(), ref.value->cols()));
    steps_.push_back(0);
  }
}

void Optimizer::step(ModelParams& params, const std::vector<Matrix>& grads, double step_size, GroupMask update) {
  auto refs = param_refs(params);
  if (refs.size() != grads.size()) throw ConfigError("optimizer: gradient count does not match parameters");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (!update.trainable(refs[i].group)) continue;
    Matrix& p = *refs[i].value;
    const Matrix& g = grads[i];
    if (settings_.kind == OptimizerKind::SGD) {
      p -= step_size * g;
      continue;
    }
    steps_[i] += 1;
    const double b1 = settings_.beta1;
    const double b2 = settings_.beta2;
    first_[i] = b1 * first_[i] + (1.0 - b1) * g;
    second_[i] = b2 * second_[i] + (1.0 - b2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_[i]));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_[i]));
    p.array() -= step_size * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + settings_.epsilon);
  }
}

Vector source_wise_rmse(std::span<const MixtureOutput> outputs, const Eigen::Ref<const Vector>& targets) {
  if (outputs.empty()) throw DataError("source_wise_rmse: no instances");
  const Index sources = outputs.front().n_sources();
  Vector sq = Vector::Zero(sources);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    for (Index s = 0; s < sources; ++s) {
      const double e = targets[static_cast<Index>(i)] - mean(outputs[i].kind, outputs[i].components[s]);
      sq[s] += e * e;
    }
  }
  return (sq / static_cast<double>(outputs.size())).cwiseSqrt();
}

Vector source_wise_rmse(const ModelConfig& config, const ModelParams& params,
                        std::span<const WindowedInstance> instances) {
  const auto outputs = forward_batch(config, params, instances);
  return source_wise_rmse(outputs, targets_of(instances));
}

TrainResult train(const ModelConfig& config, const PhasedSchedule& schedule, std::span<const WindowedInstance> train_set,
                  std::span<const WindowedInstance> val_set) {
  config.validate();
  schedule.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  retain_heap();

  TrainResult result;
  result.params = init_params(config);
  ModelParams& params = result.params;
  Optimizer optimizer(schedule.optimizer, params);
  Rng rng(schedule.seed);

  const Index epochs = schedule.total_epochs;
  const Index sources = config.n_sources;
  TrainDiagnostics& diag = result.diagnostics;
  diag.source_rmse = Matrix::Zero(epochs, sources);
  diag.mean_posterior = Matrix::Zero(epochs, sources);
  diag.loss = Vector::Zero(epochs);
  diag.val_nll = Vector::Constant(epochs, std::numeric_limits<double>::quiet_NaN());
  diag.phase_boundary = schedule.impartial_epochs;

  const std::vector<const WindowedInstance*> all = pointers(train_set);
  const Vector train_targets = targets_of(train_set);
  const Vector val_targets = targets_of(val_set);
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  ModelParams last_good = params;
  ModelParams best;
  double best_val = std::numeric_limits<double>::infinity();
  // Best-checkpoint selection waits for a trained weight module when one is scheduled.
  const Index select_from = schedule.impartial_epochs < epochs ? schedule.impartial_epochs : 0;

  std::vector<const WindowedInstance*> batch;
  for (Index epoch = 0; epoch < epochs; ++epoch) {
    const Phase phase = epoch < schedule.impartial_epochs ? Phase::Impartial : Phase::Collective;
    diag.phase.push_back(phase);
    const GroupMask update{true, true, phase == Phase::Collective};
    const double lr = schedule.step_size_at(epoch);

    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
    }

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(schedule.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(schedule.batch_size));
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(all[order[i]]);

      GradientResult g = compute_gradients(config, params, batch, phase);
      bool finite = std::isfinite(g.loss);
      for (const Matrix& m : g.grads) finite = finite && m.allFinite();
      if (!finite) {
        throw TrainingDiverged("train: non-finite loss or gradient in epoch " + std::to_string(epoch), last_good, epoch);
      }
      if (schedule.grad_clip) {
        double sq = 0.0;
        const auto refs = param_refs(params);
        for (std::size_t i = 0; i < refs.size(); ++i) {
          if (update.trainable(refs[i].group)) sq += g.grads[i].squaredNorm();
        }
        const double norm = std::sqrt(sq);
        if (norm > *schedule.grad_clip) {
          for (Matrix& m : g.grads) m *= *schedule.grad_clip / norm;
        }
      }
      optimizer.step(params, g.grads, lr, update);
    }

    const auto outputs = forward_batch(config, params, train_set);
    double loss = 0.0;
    try {
      loss = mixture_nll(outputs, train_targets);
    } catch (const NumericError& e) {
      throw TrainingDiverged(e.what(), last_good, epoch);
    }
    diag.loss[epoch] = loss;
    diag.source_rmse.row(epoch) = source_wise_rmse(outputs, train_targets).transpose();
    Vector post_sum = Vector::Zero(sources);
    for (std::size_t i = 0; i < outputs.size(); ++i) post_sum += posterior_weights(outputs[i], train_targets[static_cast<Index>(i)]);
    diag.mean_posterior.row(epoch) = (post_sum / static_cast<double>(outputs.size())).transpose();

    if (!val_set.empty()) {
      const auto val_outputs = forward_batch(config, params, val_set);
      double v = std::numeric_limits<double>::infinity();
      try {
        v = mixture_nll(val_outputs, val_targets);
      } catch (const NumericError&) {
      }
      diag.val_nll[epoch] = v;
      if (epoch >= select_from && v < best_val) {
        best_val = v;
        best = params;
        diag.best_epoch = epoch;
      }
    }
    last_good = params;
  }
  if (diag.best_epoch >= 0) {
    params = std::move(best);
  } else {
    diag.best_epoch = epochs - 1;
  }
  return result;
}

void write_diagnostics_csv(std::ostream& os, const TrainDiagnostics& d) {
  const Index sources = d.source_rmse.cols();
  os << "epoch,phase,loss";
  for (Index s = 0; s < sources; ++s) os << ",rmse_src_" << s;
  for (Index s = 0; s < sources; ++s) os << ",pi_src_" << s;
  os << '\n';
  for (Index e = 0; e < d.source_rmse.rows(); ++e) {
    os << e << ',' << (d.phase[static_cast<std::size_t>(e)] == Phase::Impartial ? "impartial" : "collective") << ','
       << format_double(d.loss[e]);
    for (Index s = 0; s < sources; ++s) os << ',' << format_double(d.source_rmse(e, s));
    for (Index s = 0; s < sources; ++s) os << ',' << format_double(d.mean_posterior(e, s));
    os << '\n';
  }
}

}  // namespace mixfc
