#include "mixfc/model.hpp"

#include "mixfc/errors.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace mixfc {

namespace {

constexpr Index kForwardChunk = 256;

std::string layer_name(Index source, const std::string& part) { return "src" + std::to_string(source) + "." + part; }

template <typename Params, typename Ref>
std::vector<Ref> collect_refs(Params& params) {
  std::vector<Ref> refs;
  for (std::size_t s = 0; s < params.sources.size(); ++s) {
    auto& src = params.sources[s];
    const auto si = static_cast<Index>(s);
    for (std::size_t l = 0; l < src.encoder.size(); ++l) {
      const std::string base = "encoder.l" + std::to_string(l) + ".";
      refs.push_back({layer_name(si, base + "input_weight"), ParamGroup::Encoder, si, &src.encoder[l].input_weight});
      refs.push_back(
          {layer_name(si, base + "recurrent_weight"), ParamGroup::Encoder, si, &src.encoder[l].recurrent_weight});
      refs.push_back({layer_name(si, base + "bias"), ParamGroup::Encoder, si, &src.encoder[l].bias});
    }
    for (std::size_t l = 0; l < src.head.size(); ++l) {
      const std::string base = "head.l" + std::to_string(l) + ".";
      refs.push_back({layer_name(si, base + "weight"), ParamGroup::Head, si, &src.head[l].weight});
      refs.push_back({layer_name(si, base + "bias"), ParamGroup::Head, si, &src.head[l].bias});
    }
    refs.push_back({layer_name(si, "logit.hidden.weight"), ParamGroup::Weight, si, &src.logit_hidden.weight});
    refs.push_back({layer_name(si, "logit.hidden.bias"), ParamGroup::Weight, si, &src.logit_hidden.bias});
    refs.push_back({layer_name(si, "logit.out.weight"), ParamGroup::Weight, si, &src.logit_out.weight});
    refs.push_back({layer_name(si, "logit.out.bias"), ParamGroup::Weight, si, &src.logit_out.bias});
  }
  return refs;
}

DenseLayer dense_shape(Index in, Index out) { return {Matrix::Zero(in, out), Matrix::Zero(1, out)}; }

ModelParams zero_params(const ModelConfig& config) {
  ModelParams params;
  const Index h = config.hidden_size;
  for (Index s = 0; s < config.n_sources; ++s) {
    SourceParams src;
    Index in = config.input_dims[s];
    for (Index l = 0; l < config.encoder_layers; ++l) {
      src.encoder.push_back({Matrix::Zero(in, 4 * h), Matrix::Zero(h, 4 * h), Matrix::Zero(1, 4 * h)});
      in = h;
    }
    Index width = h;
    for (Index units : config.head_hidden) {
      src.head.push_back(dense_shape(width, units));
      width = units;
    }
    src.head.push_back(dense_shape(width, 2));
    src.logit_hidden = dense_shape(h, config.weight_hidden);
    src.logit_out = dense_shape(config.weight_hidden, 1);
    params.sources.push_back(std::move(src));
  }
  return params;
}

void check_instance(const ModelConfig& config, const WindowedInstance& instance) {
  if (static_cast<Index>(instance.windows.size()) != config.n_sources) {
    throw DataError("instance has " + std::to_string(instance.windows.size()) + " source windows, model expects " +
                    std::to_string(config.n_sources));
  }
  for (Index s = 0; s < config.n_sources; ++s) {
    const Matrix& w = instance.windows[s];
    if (w.rows() != config.lookback || w.cols() != config.input_dims[s]) {
      throw DataError("source " + std::to_string(s) + " window is " + shape_string(w) + ", expected (" +
                      std::to_string(config.lookback) + "x" + std::to_string(config.input_dims[s]) + ")");
    }
  }
}

Var dense(const Var& x, const std::array<Var, 2>& layer) { return matmul(x, layer[0]) + layer[1]; }

Var logit_graph(const Var& rep, const BoundSource& src) {
  return dense(tanh(dense(rep, src.logit_hidden)), src.logit_out);
}

}  // namespace

void ModelConfig::validate() const {
  if (n_sources < 1) throw ConfigError("model: n_sources must be >= 1");
  if (static_cast<Index>(input_dims.size()) != n_sources) {
    throw ConfigError("model: input_dims has " + std::to_string(input_dims.size()) + " entries for " +
                      std::to_string(n_sources) + " sources");
  }
  for (Index d : input_dims) {
    if (d < 1) throw ConfigError("model: input dims must be >= 1");
  }
  if (lookback < 1) throw ConfigError("model: lookback must be >= 1");
  if (hidden_size < 1) throw ConfigError("model: hidden_size must be >= 1");
  if (encoder_layers < 1) throw ConfigError("model: encoder_layers must be >= 1");
  if (weight_hidden < 1) throw ConfigError("model: weight_hidden must be >= 1");
  for (Index u : head_hidden) {
    if (u < 1) throw ConfigError("model: head hidden sizes must be >= 1");
  }
}

std::vector<ParamRef> param_refs(ModelParams& params) { return collect_refs<ModelParams, ParamRef>(params); }

std::vector<ConstParamRef> param_refs(const ModelParams& params) {
  return collect_refs<const ModelParams, ConstParamRef>(params);
}

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  ModelParams params = zero_params(config);
  Rng rng(config.seed);
  auto fill = [&](Matrix& m, Index fan_in) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * rng.uniform() - 1.0) * a;
  };
  auto fill_dense = [&](DenseLayer& layer) {
    fill(layer.weight, layer.weight.rows());
    fill(layer.bias, layer.weight.rows());
  };
  // Same order as param_refs().
  for (SourceParams& src : params.sources) {
    for (LstmLayer& layer : src.encoder) {
      fill(layer.input_weight, layer.input_weight.rows());
      fill(layer.recurrent_weight, layer.recurrent_weight.rows());
      fill(layer.bias, layer.recurrent_weight.rows());
    }
    for (DenseLayer& layer : src.head) fill_dense(layer);
    fill_dense(src.logit_hidden);
    fill_dense(src.logit_out);
  }
  return params;
}

void check_params(const ModelConfig& config, const ModelParams& params) {
  config.validate();
  const ModelParams expected = zero_params(config);
  const auto want = param_refs(expected);
  const auto got = param_refs(params);
  if (want.size() != got.size()) {
    throw ConfigError("model parameters: expected " + std::to_string(want.size()) + " tensors, got " +
                      std::to_string(got.size()));
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].value->rows() != got[i].value->rows() || want[i].value->cols() != got[i].value->cols()) {
      throw ConfigError("model parameters: " + want[i].name + " is " + shape_string(*got[i].value) + ", expected " +
                        shape_string(*want[i].value));
    }
    if (!got[i].value->allFinite()) throw NumericError("model parameters: " + want[i].name + " has non-finite entries");
  }
}

BoundParams bind_params(Tape& tape, const ModelParams& params, GroupMask trainable) {
  BoundParams bound;
  auto put = [&](const Matrix& m, ParamGroup g) {
    Var v = trainable.trainable(g) ? tape.variable(m) : tape.constant(m);
    bound.flat.push_back(v);
    return v;
  };
  for (const SourceParams& src : params.sources) {
    BoundSource b;
    for (const LstmLayer& layer : src.encoder) {
      b.encoder.push_back({put(layer.input_weight, ParamGroup::Encoder), put(layer.recurrent_weight, ParamGroup::Encoder),
                           put(layer.bias, ParamGroup::Encoder)});
    }
    for (const DenseLayer& layer : src.head) {
      b.head.push_back({put(layer.weight, ParamGroup::Head), put(layer.bias, ParamGroup::Head)});
    }
    b.logit_hidden = {put(src.logit_hidden.weight, ParamGroup::Weight), put(src.logit_hidden.bias, ParamGroup::Weight)};
    b.logit_out = {put(src.logit_out.weight, ParamGroup::Weight), put(src.logit_out.bias, ParamGroup::Weight)};
    bound.sources.push_back(std::move(b));
  }
  return bound;
}

BoundParams bind_flat(const ModelConfig& config, std::span<const Var> flat) {
  config.validate();
  const std::size_t per_source = 3 * static_cast<std::size_t>(config.encoder_layers) + 2 * (config.head_hidden.size() + 1) + 4;
  if (flat.size() != per_source * static_cast<std::size_t>(config.n_sources)) {
    throw ConfigError("bind_flat: expected " + std::to_string(per_source * config.n_sources) + " tensors, got " +
                      std::to_string(flat.size()));
  }
  BoundParams bound;
  bound.flat.assign(flat.begin(), flat.end());
  std::size_t k = 0;
  for (Index s = 0; s < config.n_sources; ++s) {
    BoundSource b;
    for (Index l = 0; l < config.encoder_layers; ++l, k += 3) b.encoder.push_back({flat[k], flat[k + 1], flat[k + 2]});
    for (std::size_t l = 0; l <= config.head_hidden.size(); ++l, k += 2) b.head.push_back({flat[k], flat[k + 1]});
    b.logit_hidden = {flat[k], flat[k + 1]};
    b.logit_out = {flat[k + 2], flat[k + 3]};
    k += 4;
    bound.sources.push_back(std::move(b));
  }
  return bound;
}

Var encode_graph(Tape& tape, std::span<const std::array<Var, 3>> layers, std::span<const Var> steps) {
  if (steps.empty()) throw ConfigError("encode_graph: empty window");
  for (const Var& x : steps) {
    if (&x.tape() != &tape) throw std::invalid_argument("encode_graph: input belongs to a different tape");
  }
  std::vector<Var> inputs(steps.begin(), steps.end());
  Var h;
  for (const auto& layer : layers) {
    const Index hidden = layer[1].value().rows();
    Var c;
    std::vector<Var> outputs;
    outputs.reserve(inputs.size());
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      // The initial state is zero, so the first step drops the recurrent and forget terms.
      const bool first = t == 0;
      const Var xz = matmul(inputs[t], layer[0]) + layer[2];
      const Var z = first ? xz : xz + matmul(h, layer[1]);
      const Var in_gate = sigmoid(slice(z, 0, hidden));
      const Var cell = tanh(slice(z, 2 * hidden, hidden));
      const Var out_gate = sigmoid(slice(z, 3 * hidden, hidden));
      c = first ? in_gate * cell : sigmoid(slice(z, hidden, hidden)) * c + in_gate * cell;
      h = out_gate * tanh(c);
      outputs.push_back(h);
    }
    inputs = std::move(outputs);
  }
  return h;
}

MixtureGraph build_mixture_graph(Tape& tape, const BoundParams& bound, const ModelConfig& config,
                                 std::span<const WindowedInstance* const> batch, bool with_weights) {
  if (batch.empty()) throw DataError("build_mixture_graph: empty batch");
  for (const WindowedInstance* inst : batch) check_instance(config, *inst);

  const auto rows = static_cast<Index>(batch.size());
  MixtureGraph graph;
  std::vector<Var> logits;
  for (Index s = 0; s < config.n_sources; ++s) {
    const BoundSource& src = bound.sources[s];
    std::vector<Var> steps;
    steps.reserve(config.lookback);
    for (Index j = 0; j < config.lookback; ++j) {
      Matrix x(rows, config.input_dims[s]);
      for (Index b = 0; b < rows; ++b) x.row(b) = batch[b]->windows[s].row(j);
      steps.push_back(tape.constant(std::move(x)));
    }
    const Var rep = encode_graph(tape, src.encoder, steps);

    Var hidden = rep;
    for (std::size_t l = 0; l + 1 < src.head.size(); ++l) hidden = tanh(dense(hidden, src.head[l]));
    const Var out = dense(hidden, src.head.back());
    graph.reps.push_back(rep);
    graph.mu.push_back(slice(out, 0, 1));
    graph.sigma2.push_back(softplus(slice(out, 1, 1)) + kSigma2Min);
    if (with_weights) logits.push_back(logit_graph(rep, src));
  }
  if (with_weights) {
    graph.logits = concat(logits);
    graph.log_weights = graph.logits - log_sum_exp(graph.logits);
  }
  return graph;
}

Var component_log_pdf(Tape& tape, const MixtureGraph& graph, DistKind kind, const Vector& targets) {
  const Index rows = targets.size();
  Matrix y(rows, 1);
  Matrix log_y = Matrix::Zero(rows, 1);
  for (Index i = 0; i < rows; ++i) {
    if (kind == DistKind::LogNormal) {
      if (!(targets[i] > 0.0)) {
        throw DataError("log-normal target must be positive, got " + std::to_string(targets[i]) + " at row " +
                        std::to_string(i));
      }
      y(i, 0) = std::log(targets[i]);
      log_y(i, 0) = y(i, 0);
    } else {
      y(i, 0) = targets[i];
    }
  }
  const Var yv = tape.constant(std::move(y));
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  std::vector<Var> cols;
  for (std::size_t s = 0; s < graph.mu.size(); ++s) {
    const Var r = yv - graph.mu[s];
    Var lp = (-half_log_2pi) - 0.5 * log(graph.sigma2[s]) - square(r) / (2.0 * graph.sigma2[s]);
    if (kind == DistKind::LogNormal) lp = lp - tape.constant(log_y);
    cols.push_back(lp);
  }
  return concat(cols);
}

Vector encode(const ModelConfig& config, const ModelParams& params, Index source, const Matrix& window) {
  if (source < 0 || source >= config.n_sources) throw ConfigError("encode: source index out of range");
  if (window.rows() != config.lookback) {
    throw DataError("encode: window has " + std::to_string(window.rows()) + " rows, lookback is " +
                    std::to_string(config.lookback));
  }
  if (window.cols() != config.input_dims[source]) {
    throw DataError("encode: window has " + std::to_string(window.cols()) + " features, source " +
                    std::to_string(source) + " expects " + std::to_string(config.input_dims[source]));
  }
  Tape tape;
  const BoundParams bound = bind_params(tape, params, {false, false, false});
  std::vector<Var> steps;
  for (Index j = 0; j < window.rows(); ++j) steps.push_back(tape.constant(window.row(j)));
  const Var h = encode_graph(tape, bound.sources[source].encoder, steps);
  return h.value().row(0).transpose();
}

DistParams<double> head(const ModelConfig& config, const SourceParams& source, const Vector& rep) {
  if (rep.size() != config.hidden_size) throw DataError("head: representation size mismatch");
  Matrix hidden = rep.transpose();
  for (std::size_t l = 0; l + 1 < source.head.size(); ++l) {
    hidden = ((hidden * source.head[l].weight) + source.head[l].bias).array().tanh().matrix();
  }
  const Matrix out = hidden * source.head.back().weight + source.head.back().bias;
  Tape tape;
  const double var = softplus(tape.constant(scalar_tensor(out(0, 1)))).value()(0, 0) + kSigma2Min;
  return {out(0, 0), var};
}

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).exp().matrix();
}

Vector mixture_weights(const ModelParams& params, std::span<const Vector> reps) {
  if (reps.size() != params.sources.size()) throw DataError("mixture_weights: one representation per source required");
  Vector logits(static_cast<Index>(reps.size()));
  for (std::size_t s = 0; s < reps.size(); ++s) {
    const SourceParams& src = params.sources[s];
    const Matrix hidden =
        ((reps[s].transpose() * src.logit_hidden.weight) + src.logit_hidden.bias).array().tanh().matrix();
    logits[static_cast<Index>(s)] = (hidden * src.logit_out.weight + src.logit_out.bias)(0, 0);
  }
  return softmax(logits);
}

MixtureOutput forward(const ModelConfig& config, const ModelParams& params, const WindowedInstance& instance) {
  return forward_batch(config, params, std::span<const WindowedInstance>(&instance, 1)).front();
}

std::vector<MixtureOutput> forward_batch(const ModelConfig& config, const ModelParams& params,
                                         std::span<const WindowedInstance> instances) {
  std::vector<MixtureOutput> outputs;
  outputs.reserve(instances.size());
  for (std::size_t start = 0; start < instances.size(); start += kForwardChunk) {
    const std::size_t stop = std::min(instances.size(), start + kForwardChunk);
    std::vector<const WindowedInstance*> batch;
    for (std::size_t i = start; i < stop; ++i) batch.push_back(&instances[i]);

    Tape tape;
    const BoundParams bound = bind_params(tape, params, {false, false, false});
    const MixtureGraph graph = build_mixture_graph(tape, bound, config, batch);
    const Matrix& log_w = graph.log_weights.value();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto row = static_cast<Index>(b);
      MixtureOutput out;
      out.kind = config.dist;
      out.weights = log_w.row(row).transpose().array().exp().matrix();
      for (Index s = 0; s < config.n_sources; ++s) {
        out.components.push_back({graph.mu[s].value()(row, 0), graph.sigma2[s].value()(row, 0)});
        out.reps.push_back(graph.reps[s].value().row(row).transpose());
      }
      outputs.push_back(std::move(out));
    }
  }
  return outputs;
}

}  // namespace mixfc
