#include "mixfc/checkpoint.hpp"

#include "mixfc/csv.hpp"
#include "mixfc/errors.hpp"

#include <json.hpp>

namespace mixfc {

using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;

json config_json(const ModelConfig& c) {
  return {{"n_sources", c.n_sources},         {"input_dims", c.input_dims},
          {"lookback", c.lookback},           {"hidden_size", c.hidden_size},
          {"encoder_layers", c.encoder_layers}, {"head_hidden", c.head_hidden},
          {"weight_hidden", c.weight_hidden}, {"dist", dist_name(c.dist)},
          {"seed", c.seed}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.n_sources = j.at("n_sources").get<Index>();
  c.input_dims = j.at("input_dims").get<std::vector<Index>>();
  c.lookback = j.at("lookback").get<Index>();
  c.hidden_size = j.at("hidden_size").get<Index>();
  c.encoder_layers = j.at("encoder_layers").get<Index>();
  c.head_hidden = j.at("head_hidden").get<std::vector<Index>>();
  c.weight_hidden = j.at("weight_hidden").get<Index>();
  c.dist = parse_dist_kind(j.at("dist").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& cp) {
  cp.config.validate();
  check_params(cp.config, cp.params);
  json params = json::object();
  for (const auto& ref : param_refs(cp.params)) {
    const Matrix& m = *ref.value;
    params[ref.name] = {{"rows", m.rows()},
                        {"cols", m.cols()},
                        {"data", std::vector<double>(m.data(), m.data() + m.size())}};
  }
  json j;
  j["format_version"] = kCheckpointVersion;
  j["config"] = config_json(cp.config);
  j["window"] = {{"lookback", cp.window.lookback},
                 {"horizon", cp.window.horizon},
                 {"fractions", cp.window.fractions},
                 {"ar_source", cp.window.ar_source},
                 {"dist", dist_name(cp.window.dist)}};
  j["params"] = std::move(params);
  return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  Checkpoint cp;
  try {
    const json j = json::parse(text);
    if (j.at("format_version").get<int>() != kCheckpointVersion) throw DataError("checkpoint: unsupported format_version");
    cp.config = config_from(j.at("config"));
    const json& w = j.at("window");
    cp.window.lookback = w.at("lookback").get<Index>();
    cp.window.horizon = w.at("horizon").get<Index>();
    cp.window.fractions = w.at("fractions").get<SplitFractions>();
    cp.window.ar_source = w.at("ar_source").get<int>();
    cp.window.dist = parse_dist_kind(w.at("dist").get<std::string>());
    cp.config.validate();

    // Shapes come from a fresh initialisation; stored tensors must match them.
    ModelConfig shapes = cp.config;
    cp.params = init_params(shapes);
    const json& params = j.at("params");
    std::size_t seen = 0;
    for (auto& ref : param_refs(cp.params)) {
      if (!params.contains(ref.name)) throw DataError("checkpoint: missing parameter " + ref.name);
      const json& p = params.at(ref.name);
      const auto rows = p.at("rows").get<Index>();
      const auto cols = p.at("cols").get<Index>();
      const auto data = p.at("data").get<std::vector<double>>();
      if (rows != ref.value->rows() || cols != ref.value->cols() || static_cast<Index>(data.size()) != rows * cols) {
        throw DataError("checkpoint: parameter " + ref.name + " has the wrong shape");
      }
      *ref.value = Eigen::Map<const Matrix>(data.data(), rows, cols);
      ++seen;
    }
    if (seen != params.size()) throw DataError("checkpoint: unexpected extra parameters");
  } catch (const json::exception& e) {
    throw DataError("checkpoint: " + std::string(e.what()));
  }
  check_params(cp.config, cp.params);
  return cp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_text(path, checkpoint_to_json(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_text(path)); }

}  // namespace mixfc
