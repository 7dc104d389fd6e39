#include "cli.hpp"

#include "mixfc/bundle.hpp"
#include "mixfc/checkpoint.hpp"
#include "mixfc/csv.hpp"
#include "mixfc/errors.hpp"
#include "mixfc/featurize.hpp"
#include "mixfc/inference.hpp"
#include "mixfc/metrics.hpp"
#include "mixfc/synth.hpp"
#include "mixfc/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <sstream>

namespace mixfc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kDataDirEnv = "MIXFC_DATA_DIR";

// --- config file and provenance --------------------------------------------

std::string json_scalar(const json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number()) return v.dump();
  throw ConfigError("config key '" + key + "': expected a string, number, boolean or array of those");
}

/// Fills options not given on the command line from a JSON object keyed by
/// long option name ('-' or '_' separators).
void apply_config_file(CLI::App& sub, const std::string& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  if (!j.is_object()) throw ConfigError("config file " + path + ": top level must be an object");
  for (const auto& [raw_key, value] : j.items()) {
    std::string key = raw_key;
    std::replace(key.begin(), key.end(), '_', '-');
    CLI::Option* opt = key == "config" || key == "help" ? nullptr : sub.get_option_no_throw("--" + key);
    if (opt == nullptr) throw ConfigError("config file " + path + ": unknown key '" + raw_key + "'");
    if (opt->count() > 0) continue;
    std::vector<std::string> values;
    if (value.is_array()) {
      for (const auto& v : value) values.push_back(json_scalar(v, raw_key));
    } else {
      values.push_back(json_scalar(value, raw_key));
    }
    try {
      opt->clear();
      for (const auto& v : values) opt->add_result(v);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ConfigError("config key '" + raw_key + "': " + e.what());
    }
  }
}

json effective_config(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help" || name == "help-all" || name == "config") continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      if (r.size() == 1 && opt->get_expected_max() <= 1) {
        j[name] = r.front();
      } else {
        j[name] = r;
      }
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

void write_effective_config(const fs::path& dir, const CLI::App& sub) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  json j;
  j["command"] = sub.get_name();
  j["options"] = effective_config(sub);
  write_text(dir / "effective_config.json", j.dump(2) + "\n");
}

std::string resolve_data_dir(const std::string& given, const char* what) {
  if (!given.empty()) return given;
  if (const char* env = std::getenv(kDataDirEnv); env != nullptr && *env != '\0') return env;
  throw ConfigError(std::string("no ") + what + " given and " + kDataDirEnv + " is unset");
}

std::string num(double v) { return format_double(v); }

// --- shared prediction path -------------------------------------------------

struct SplitOutputs {
  std::vector<MixtureOutput> outputs;  // raw units
  Vector y;                            // raw units
  std::vector<std::int64_t> timestamps;
};

SplitOutputs predict_split(const Checkpoint& cp, const MultiSourceDataset& data, const std::string& split) {
  if (model_input_dims(data, cp.window) != cp.config.input_dims) {
    throw DataError("bundle sources do not match the checkpoint's input dimensions");
  }
  const WindowedData wd = window_and_split(data, cp.window);
  const auto& instances = wd.split(split);
  if (instances.empty()) throw DataError("split '" + split + "' has no instances");
  const std::vector<MixtureOutput> model_out = forward_batch(cp.config, cp.params, instances);
  SplitOutputs r;
  r.y.resize(static_cast<Index>(instances.size()));
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const WindowedInstance& inst = instances[i];
    const double shift = wd.transform.offset_at(inst.timestamp);
    r.outputs.push_back(affine_transform(model_out[i], shift, wd.transform.scale));
    r.y[static_cast<Index>(i)] = wd.transform.to_raw(inst.target, inst.timestamp);
    r.timestamps.push_back(inst.timestamp);
  }
  return r;
}

json report_json(const EvalReport& rep, const std::string& split) {
  json ql = json::object();
  for (const auto& [alpha, v] : rep.ql_by_alpha) ql[num(alpha)] = v;
  json bins = json::array();
  for (std::size_t b = 0; b < rep.unc.bins.size(); ++b) {
    const UncertaintyBin& u = rep.unc.bins[b];
    bins.push_back({{"bin", b},
                    {"level_lo", u.level_lo},
                    {"level_hi", u.level_hi},
                    {"unc_lo", u.unc_lo},
                    {"unc_hi", u.unc_hi},
                    {"count", u.count},
                    {"rmse", u.rmse}});
  }
  return {{"split", split},     {"count", rep.count}, {"rmse", rep.rmse},          {"mae", rep.mae},
          {"nllm", rep.nllm},   {"qlm", rep.qlm},     {"ql_by_alpha", ql},        {"unc_bins", bins},
          {"unc_spearman", rep.unc.spearman}, {"unc_degenerate", rep.unc.degenerate}};
}

std::string report_csv(const EvalReport& rep, const std::string& split) {
  std::ostringstream os;
  os << "metric,value\n";
  os << "split," << split << '\n';
  os << "count," << rep.count << '\n';
  os << "rmse," << num(rep.rmse) << '\n';
  os << "mae," << num(rep.mae) << '\n';
  os << "nllm," << num(rep.nllm) << '\n';
  os << "qlm," << num(rep.qlm) << '\n';
  for (const auto& [alpha, v] : rep.ql_by_alpha) os << "ql_" << num(alpha) << ',' << num(v) << '\n';
  for (std::size_t b = 0; b < rep.unc.bins.size(); ++b) {
    const UncertaintyBin& u = rep.unc.bins[b];
    const std::string p = "unc_bin_" + std::to_string(b) + "_";
    os << p << "count," << u.count << '\n';
    os << p << "unc_lo," << num(u.unc_lo) << '\n';
    os << p << "unc_hi," << num(u.unc_hi) << '\n';
    os << p << "rmse," << num(u.rmse) << '\n';
  }
  os << "unc_spearman," << num(rep.unc.spearman) << '\n';
  return os.str();
}

std::string bins_csv(const UncertaintyConditionedErrors& unc) {
  std::ostringstream os;
  os << "bin,level_lo,level_hi,unc_lo,unc_hi,count,rmse\n";
  for (std::size_t b = 0; b < unc.bins.size(); ++b) {
    const UncertaintyBin& u = unc.bins[b];
    os << b << ',' << num(u.level_lo) << ',' << num(u.level_hi) << ',' << num(u.unc_lo) << ',' << num(u.unc_hi) << ','
       << u.count << ',' << num(u.rmse) << '\n';
  }
  return os.str();
}

// --- verify helpers ---------------------------------------------------------

WindowedInstance random_instance(const ModelConfig& config, Rng& rng) {
  WindowedInstance inst;
  for (Index s = 0; s < config.n_sources; ++s) {
    Matrix w(config.lookback, config.input_dims[static_cast<std::size_t>(s)]);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
    inst.windows.push_back(std::move(w));
  }
  const double z = rng.normal();
  inst.target = config.dist == DistKind::Normal ? z : std::exp(z);
  return inst;
}

// --- commands ---------------------------------------------------------------

struct SynthArgs {
  SynthOptions opt;
  std::string dist = "normal";
  std::string out;
};

struct FeaturizeArgs {
  std::vector<std::string> trades;
  std::vector<std::string> lob;
  std::vector<std::string> markets;
  FeaturizeOptions opt;
  std::vector<double> fractions{0.7, 0.1, 0.2};
  std::string out;
};

struct TrainArgs {
  std::string data;
  std::string out;
  std::string dist = "normal";
  Index lookback = 12;
  Index horizon = 1;
  int ar_source = -1;
  Index hidden = 16;
  Index layers = 1;
  std::vector<Index> head_hidden;
  Index weight_hidden = 8;
  PhasedSchedule schedule;
  std::string optimizer = "adam";
  double grad_clip = 0.0;
  std::uint64_t seed = 0;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  Index bins = 5;
  std::string format = "json";
  std::string out;
};

struct VerifyArgs {
  Index draws = 100;
  Index bound_draws = 1000;
  std::uint64_t seed = 0;
  Index sources = 3;
  Index dims = 4;
  Index hidden = 8;
  Index lookback = 12;
};

int cmd_synth(const CLI::App& sub, SynthArgs& a, std::ostream& out) {
  a.opt.dist = parse_dist_kind(a.dist);
  a.out = resolve_data_dir(a.out, "output directory (-o)");
  const SynthResult r = synth_generate(a.opt);
  save_bundle(a.out, r.data, &r.truth);
  write_effective_config(a.out, sub);
  out << "wrote " << a.out << ": " << r.data.n_sources() << " sources, " << r.data.length() << " rows\n";
  return kOk;
}

int cmd_featurize(const CLI::App& sub, FeaturizeArgs& a, std::ostream& out) {
  if (a.trades.size() != a.lob.size()) throw ConfigError("give one --lob file per --trades file");
  if (!a.markets.empty() && a.markets.size() != a.trades.size()) throw ConfigError("give one --markets name per market");
  if (a.fractions.size() != 3) throw ConfigError("--fractions takes three values");
  a.opt.fractions = {a.fractions[0], a.fractions[1], a.fractions[2]};
  a.out = resolve_data_dir(a.out, "output directory (-o)");
  std::vector<MarketData> markets;
  for (std::size_t i = 0; i < a.trades.size(); ++i) {
    MarketData m;
    m.market_id = a.markets.empty() ? "m" + std::to_string(i) : a.markets[i];
    m.trades = read_trades_csv(a.trades[i]);
    m.snapshots = read_lob_csv(a.lob[i]);
    markets.push_back(std::move(m));
  }
  const MultiSourceDataset data = build_market_dataset(markets, a.opt);
  save_bundle(a.out, data);
  write_effective_config(a.out, sub);
  out << "wrote " << a.out << ": " << data.n_sources() << " sources, " << data.length() << " rows\n";
  return kOk;
}

int cmd_train(const CLI::App& sub, TrainArgs& a, std::ostream& out) {
  a.data = resolve_data_dir(a.data, "bundle (--data)");
  if (a.out.empty()) throw ConfigError("no output directory (-o) given");
  const Bundle bundle = load_bundle(a.data);

  WindowOptions window;
  window.lookback = a.lookback;
  window.horizon = a.horizon;
  window.ar_source = a.ar_source;
  window.dist = parse_dist_kind(a.dist);
  // Validates targets (e.g. positivity for log-normal) before any training.
  const WindowedData wd = window_and_split(bundle.data, window);

  ModelConfig config;
  config.n_sources = bundle.data.n_sources();
  config.input_dims = wd.input_dims;
  config.lookback = a.lookback;
  config.hidden_size = a.hidden;
  config.encoder_layers = a.layers;
  config.head_hidden = a.head_hidden;
  config.weight_hidden = a.weight_hidden;
  config.dist = window.dist;
  config.seed = a.seed;
  config.validate();

  PhasedSchedule schedule = a.schedule;
  schedule.seed = a.seed;
  if (a.optimizer == "adam") {
    schedule.optimizer.kind = OptimizerKind::Adam;
  } else if (a.optimizer == "sgd") {
    schedule.optimizer.kind = OptimizerKind::SGD;
  } else {
    throw ConfigError("unknown optimizer '" + a.optimizer + "'");
  }
  if (a.grad_clip > 0.0) schedule.grad_clip = a.grad_clip;
  schedule.validate();

  const fs::path dir = a.out;
  write_effective_config(dir, sub);
  TrainResult result;
  try {
    result = train(config, schedule, wd.train, wd.val);
  } catch (const TrainingDiverged& e) {
    save_checkpoint(dir / "checkpoint_last_good.json", {config, e.last_good(), window});
    throw;
  }
  save_checkpoint(dir / "checkpoint.json", {config, result.params, window});
  std::ostringstream diag;
  write_diagnostics_csv(diag, result.diagnostics);
  write_text(dir / "diagnostics.csv", diag.str());

  const auto& d = result.diagnostics;
  out << "trained " << d.loss.size() << " epochs (impartial " << d.phase_boundary << ")";
  if (d.best_epoch >= 0) out << ", best epoch " << d.best_epoch << " val nll " << num(d.val_nll[d.best_epoch]);
  out << "\nwrote " << (dir / "checkpoint.json").string() << '\n';
  return kOk;
}

int cmd_evaluate(const CLI::App& sub, EvalArgs& a, std::ostream& out) {
  a.data = resolve_data_dir(a.data, "bundle (--data)");
  const Checkpoint cp = load_checkpoint(a.checkpoint);
  const Bundle bundle = load_bundle(a.data);
  const SplitOutputs so = predict_split(cp, bundle.data, a.split);
  const EvalReport rep = evaluate(so.outputs, so.y, a.bins);
  const std::string text = a.format == "json" ? report_json(rep, a.split).dump(2) + "\n" : report_csv(rep, a.split);
  if (a.out.empty()) {
    out << text;
  } else {
    write_effective_config(a.out, sub);
    write_text(fs::path(a.out) / ("report." + a.format), text);
    out << "wrote " << (fs::path(a.out) / ("report." + a.format)).string() << '\n';
  }
  return kOk;
}

int cmd_predict(const CLI::App& sub, EvalArgs& a, std::ostream& out) {
  a.data = resolve_data_dir(a.data, "bundle (--data)");
  const Checkpoint cp = load_checkpoint(a.checkpoint);
  const Bundle bundle = load_bundle(a.data);
  const SplitOutputs so = predict_split(cp, bundle.data, a.split);
  std::ostringstream os;
  for (std::size_t i = 0; i < so.outputs.size(); ++i) {
    const ForecastResult f = forecast(so.outputs[i]);
    json rec;
    rec["timestamp"] = so.timestamps[i];
    rec["mean"] = f.mean;
    rec["aleatoric"] = f.aleatoric;
    rec["mixture"] = f.mixture_unc;
    rec["total"] = f.total;
    for (const double alpha : kReportQuantiles) {
      rec["q" + std::to_string(static_cast<int>(std::lround(alpha * 100)))] = f.quantiles.at(alpha);
    }
    const Vector& w = so.outputs[i].weights;
    rec["weights"] = std::vector<double>(w.data(), w.data() + w.size());
    os << rec.dump() << '\n';
  }
  if (a.out.empty()) {
    out << os.str();
  } else {
    write_effective_config(a.out, sub);
    write_text(fs::path(a.out) / "predictions.jsonl", os.str());
    out << "wrote " << so.outputs.size() << " records to " << (fs::path(a.out) / "predictions.jsonl").string() << '\n';
  }
  return kOk;
}

int cmd_report(const CLI::App& sub, EvalArgs& a, const std::string& run_dir, std::ostream& out) {
  a.data = resolve_data_dir(a.data, "bundle (--data)");
  if (a.out.empty()) throw ConfigError("no output directory (-o) given");
  const fs::path run = run_dir;
  const Checkpoint cp = load_checkpoint(run / "checkpoint.json");
  const Bundle bundle = load_bundle(a.data);
  const SplitOutputs so = predict_split(cp, bundle.data, a.split);
  Vector mean(static_cast<Index>(so.outputs.size()));
  Vector unc(mean.size());
  for (std::size_t i = 0; i < so.outputs.size(); ++i) {
    mean[static_cast<Index>(i)] = predictive_mean(so.outputs[i]);
    unc[static_cast<Index>(i)] = predictive_uncertainty(so.outputs[i]).total;
  }
  const UncertaintyConditionedErrors bins = uncertainty_conditioned_errors(so.y, mean, unc, a.bins);

  // Per-epoch per-source training RMSE, copied out of the diagnostics file.
  const CsvTable diag = read_csv(run / "diagnostics.csv");
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < diag.header.size(); ++c) {
    const std::string& h = diag.header[c];
    if (h == "epoch" || h == "phase" || h.rfind("rmse_src_", 0) == 0) keep.push_back(c);
  }
  std::ostringstream curves;
  for (std::size_t k = 0; k < keep.size(); ++k) curves << (k ? "," : "") << diag.header[keep[k]];
  curves << '\n';
  for (const auto& row : diag.rows) {
    for (std::size_t k = 0; k < keep.size(); ++k) curves << (k ? "," : "") << row.fields[keep[k]];
    curves << '\n';
  }

  const fs::path dir = a.out;
  write_effective_config(dir, sub);
  write_text(dir / "source_rmse_curves.csv", curves.str());
  write_text(dir / "uncertainty_bins.csv", bins_csv(bins));
  out << "wrote " << (dir / "source_rmse_curves.csv").string() << " and " << (dir / "uncertainty_bins.csv").string()
      << '\n';
  return kOk;
}

int cmd_verify(const VerifyArgs& a, std::ostream& out) {
  if (a.sources < 2 || a.dims < 1 || a.hidden < 1 || a.lookback < 1 || a.draws < 1 || a.bound_draws < 1) {
    throw ConfigError("verify: sizes and draw counts must be positive, sources at least 2");
  }
  bool ok = true;
  for (const DistKind kind : {DistKind::Normal, DistKind::LogNormal}) {
    ModelConfig config;
    config.n_sources = a.sources;
    config.input_dims.assign(static_cast<std::size_t>(a.sources), a.dims);
    config.lookback = a.lookback;
    config.hidden_size = a.hidden;
    config.dist = kind;
    Rng rng(a.seed);

    // Autodiff vs central differences on a small batch.
    config.seed = a.seed;
    const ModelParams params = init_params(config);
    std::vector<WindowedInstance> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(random_instance(config, rng));
    std::vector<const WindowedInstance*> ptrs;
    for (const auto& inst : batch) ptrs.push_back(&inst);
    const Vector y = targets_of(batch);
    std::vector<Tensor> flat;
    for (const auto& ref : param_refs(params)) flat.push_back(*ref.value);
    const double grad_err = check_gradients(
        [&](Tape& tape, std::span<const Var> vars) {
          const BoundParams bound = bind_flat(config, vars);
          const MixtureGraph graph = build_mixture_graph(tape, bound, config, ptrs);
          return mixture_nll_graph(tape, graph, kind, y);
        },
        flat, 1e-5);

    double l41 = 0.0;
    for (Index d = 0; d < a.draws; ++d) {
      config.seed = a.seed + 1 + static_cast<std::uint64_t>(d);
      const ModelParams p = init_params(config);
      const WindowedInstance inst = random_instance(config, rng);
      l41 = std::max(l41, verify_lemma41(config, p, std::span<const WindowedInstance>(&inst, 1)));
    }

    double slack = -std::numeric_limits<double>::infinity();
    for (Index d = 0; d < a.bound_draws; ++d) {
      config.seed = a.seed + 100000 + static_cast<std::uint64_t>(d);
      const ModelParams p = init_params(config);
      const BoundCheck b = verify_lemma42(config, p, random_instance(config, rng));
      slack = std::max(slack, b.loss - b.bound);
    }

    const std::string name(dist_name(kind));
    out << name << " gradient_check max_rel_err " << num(grad_err) << '\n';
    out << name << " posterior_identity max_rel_gap " << num(l41) << '\n';
    out << name << " upper_bound max(loss - bound) " << num(slack) << '\n';
    ok = ok && grad_err < 1e-4 && l41 < 1e-8 && slack <= 1e-9;
  }
  out << (ok ? "verify: ok\n" : "verify: FAILED\n");
  return ok ? kOk : kNumeric;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-source mixture forecaster", "mixfc"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for every subcommand");

  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON file of option values; command-line flags take precedence");
  };

  SynthArgs synth;
  CLI::App* s = app.add_subcommand("synth", "Generate a synthetic regime-switching bundle");
  add_config(s);
  s->add_option("--sources", synth.opt.n_sources, "Number of sources");
  s->add_option("--length", synth.opt.length, "Number of timesteps");
  s->add_option("--seed", synth.opt.seed, "Random seed");
  s->add_option("--dist", synth.dist, "normal or lognormal");
  s->add_option("--stay-probability", synth.opt.stay_probability, "Regime persistence");
  s->add_option("--signal-ar", synth.opt.signal_ar, "AR(1) coefficient of source signals");
  s->add_option("--indicator-noise", synth.opt.indicator_noise, "Noise sd of the regime indicators");
  s->add_option("--noise-sd", synth.opt.noise_sd, "Target noise sd");
  s->add_option("--gain", synth.opt.gain, "Signal-to-target gain");
  s->add_option("--features", synth.opt.features_per_source, "Features per source (>= 3)");
  s->add_option("--interval", synth.opt.interval_seconds, "Seconds between rows");
  s->add_option("-o,--out", synth.out, "Output bundle directory");

  FeaturizeArgs feat;
  CLI::App* f = app.add_subcommand("featurize", "Build a bundle from raw trade and order-book CSVs");
  add_config(f);
  f->add_option("--trades", feat.trades, "Trades CSV per market")->required();
  f->add_option("--lob", feat.lob, "Order-book CSV per market")->required();
  f->add_option("--markets", feat.markets, "Market names");
  f->add_option("--interval", feat.opt.interval_seconds, "Aggregation interval in seconds");
  f->add_option("--tick", feat.opt.lob.tick, "Price floor for slope offsets");
  f->add_option("--depth-fractions", feat.opt.lob.depth_fractions, "Depth fractions for book slopes");
  f->add_option("--deseasonalize", feat.opt.deseasonalize, "Subtract the time-of-day profile from the target");
  f->add_option("--target-market", feat.opt.target_market, "Index of the market whose volume is the target");
  f->add_option("--fractions", feat.fractions, "Train/validation/test fractions")->expected(3);
  f->add_option("-o,--out", feat.out, "Output bundle directory");

  TrainArgs tr;
  CLI::App* t = app.add_subcommand("train", "Train the mixture model on a bundle");
  add_config(t);
  t->add_option("--data", tr.data, "Bundle directory (default $MIXFC_DATA_DIR)");
  t->add_option("-o,--out", tr.out, "Output directory for checkpoint and diagnostics");
  t->add_option("--dist", tr.dist, "normal or lognormal");
  t->add_option("--lookback", tr.lookback, "Window length L");
  t->add_option("--horizon", tr.horizon, "Forecast horizon h");
  t->add_option("--ar-source", tr.ar_source, "Source receiving the lagged target column (-1 = none)");
  t->add_option("--hidden", tr.hidden, "LSTM hidden size");
  t->add_option("--layers", tr.layers, "LSTM layers");
  t->add_option("--head-hidden", tr.head_hidden, "Hidden widths of the prediction heads");
  t->add_option("--weight-hidden", tr.weight_hidden, "Hidden width of the weight perceptrons");
  t->add_option("--impartial-epochs", tr.schedule.impartial_epochs, "Epochs of the impartial phase");
  t->add_option("--epochs", tr.schedule.total_epochs, "Total epochs");
  t->add_option("--lr", tr.schedule.step_size, "Initial step size");
  t->add_option("--batch-size", tr.schedule.batch_size, "Mini-batch size");
  t->add_option("--lr-decay", tr.schedule.lr_decay, "Step size multiplier per decay period");
  t->add_option("--decay-every", tr.schedule.decay_every, "Epochs per decay period");
  t->add_option("--grad-clip", tr.grad_clip, "Global gradient norm clip (0 = off)");
  t->add_option("--optimizer", tr.optimizer, "adam or sgd");
  t->add_option("--seed", tr.seed, "Seed for initialisation and shuffling");

  EvalArgs ev;
  CLI::App* e = app.add_subcommand("evaluate", "Score a checkpoint on one split");
  add_config(e);
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint JSON")->required();
  e->add_option("--data", ev.data, "Bundle directory (default $MIXFC_DATA_DIR)");
  e->add_option("--split", ev.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  e->add_option("--bins", ev.bins, "Uncertainty bins");
  e->add_option("--format", ev.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  e->add_option("-o,--out", ev.out, "Output directory (default: print)");

  EvalArgs pr;
  CLI::App* p = app.add_subcommand("predict", "Write per-instance forecasts as JSON lines");
  add_config(p);
  p->add_option("--checkpoint", pr.checkpoint, "Checkpoint JSON")->required();
  p->add_option("--data", pr.data, "Bundle directory (default $MIXFC_DATA_DIR)");
  p->add_option("--split", pr.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  p->add_option("-o,--out", pr.out, "Output directory (default: print)");

  EvalArgs rp;
  std::string run_dir;
  CLI::App* r = app.add_subcommand("report", "Write plot-ready CSVs for a trained run");
  add_config(r);
  r->add_option("--run", run_dir, "Directory written by train")->required();
  r->add_option("--data", rp.data, "Bundle directory (default $MIXFC_DATA_DIR)");
  r->add_option("--split", rp.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  r->add_option("--bins", rp.bins, "Uncertainty bins");
  r->add_option("-o,--out", rp.out, "Output directory");

  VerifyArgs ve;
  CLI::App* v = app.add_subcommand("verify", "Run gradient and identity checks on random models");
  add_config(v);
  v->add_option("--draws", ve.draws, "Random draws for the posterior-weight identity");
  v->add_option("--bound-draws", ve.bound_draws, "Random draws for the upper bound");
  v->add_option("--seed", ve.seed, "Random seed");
  v->add_option("--sources", ve.sources, "Sources per random model");
  v->add_option("--dims", ve.dims, "Features per source");
  v->add_option("--hidden", ve.hidden, "LSTM hidden size");
  v->add_option("--lookback", ve.lookback, "Window length");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    return app.exit(pe, out, err) == 0 ? kOk : kConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (!config_path.empty()) apply_config_file(*sub, config_path);

  if (sub == s) return cmd_synth(*s, synth, out);
  if (sub == f) return cmd_featurize(*f, feat, out);
  if (sub == t) return cmd_train(*t, tr, out);
  if (sub == e) return cmd_evaluate(*e, ev, out);
  if (sub == p) return cmd_predict(*p, pr, out);
  if (sub == r) return cmd_report(*r, rp, run_dir, out);
  return cmd_verify(ve, out);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    err << "invalid argument: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kNumeric;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace mixfc::cli
