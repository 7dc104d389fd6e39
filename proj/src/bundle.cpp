#include "mixfc/bundle.hpp"

#include "mixfc/csv.hpp"
#include "mixfc/errors.hpp"

#include <json.hpp>

#include <sstream>

namespace mixfc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kBundleVersion = 1;

std::string source_file(std::size_t i) { return "source_" + std::to_string(i) + ".csv"; }

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw DataError(where + ": missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DataError(where + ": bad '" + key + "': " + e.what());
  }
}

void check_timestamps(const std::vector<std::int64_t>& got, const std::vector<std::int64_t>& want,
                      const std::string& file) {
  if (got != want) throw DataError(file + ": timestamps differ from target.csv");
}

}  // namespace

void save_bundle(const fs::path& dir, const MultiSourceDataset& data, const SynthGroundTruth* truth) {
  data.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

  const Index T = data.length();
  json sources = json::array();
  for (std::size_t i = 0; i < data.sources.size(); ++i) {
    const SourceSeries& s = data.sources[i];
    std::ostringstream os;
    os << "timestamp";
    for (const auto& name : s.feature_names) os << ',' << name;
    os << '\n';
    for (Index t = 0; t < T; ++t) {
      os << s.timestamps[static_cast<std::size_t>(t)];
      for (Index j = 0; j < s.dim(); ++j) os << ',' << format_double(s.values(t, j));
      os << '\n';
    }
    write_text(dir / source_file(i), os.str());
    sources.push_back({{"id", s.source_id}, {"market", s.market_id}, {"file", source_file(i)},
                       {"features", s.feature_names}});
  }

  std::ostringstream target;
  target << "timestamp,target\n";
  for (Index t = 0; t < T; ++t) {
    target << data.timestamps[static_cast<std::size_t>(t)] << ',' << format_double(data.target[t]) << '\n';
  }
  write_text(dir / "target.csv", target.str());

  const Standardization stats = fit_standardization(data, DistKind::Normal);
  json feature_mean = json::array();
  json feature_std = json::array();
  for (std::size_t i = 0; i < stats.feature_mean.size(); ++i) {
    feature_mean.push_back(to_std(stats.feature_mean[i]));
    feature_std.push_back(to_std(stats.feature_std[i]));
  }

  json meta;
  meta["format_version"] = kBundleVersion;
  meta["interval_seconds"] = data.sources.front().interval_seconds;
  meta["length"] = T;
  meta["sources"] = sources;
  meta["splits"] = {{"train_end", data.splits.train_end}, {"val_end", data.splits.val_end}};
  meta["standardization"] = {{"feature_mean", feature_mean},
                             {"feature_std", feature_std},
                             {"target_mean", stats.target_mean},
                             {"target_std", stats.target_std}};
  if (data.seasonal_profile) {
    meta["seasonal_profile"] = {{"interval_seconds", data.seasonal_profile->interval_seconds},
                                {"slot_means", data.seasonal_profile->slot_means}};
  } else {
    meta["seasonal_profile"] = nullptr;
  }

  if (truth != nullptr) {
    if (static_cast<Index>(truth->regime.size()) != T) throw DataError("ground truth length differs from target");
    std::ostringstream gt;
    gt << "timestamp,regime,true_mean,true_var\n";
    for (Index t = 0; t < T; ++t) {
      gt << data.timestamps[static_cast<std::size_t>(t)] << ',' << truth->regime[static_cast<std::size_t>(t)] << ','
         << format_double(truth->true_mean[t]) << ',' << format_double(truth->true_var[t]) << '\n';
    }
    write_text(dir / "ground_truth.csv", gt.str());
    meta["ground_truth"] = {{"file", "ground_truth.csv"},
                            {"regime_gain", to_std(truth->regime_gain)},
                            {"noise_sd", truth->noise_sd},
                            {"informative_sources", truth->informative_sources}};
  }
  write_text(dir / "meta.json", meta.dump(2) + "\n");
}

Bundle load_bundle(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("bundle directory not found: " + dir.string());
  json meta;
  try {
    meta = json::parse(read_text(dir / "meta.json"));
  } catch (const json::exception& e) {
    throw DataError("meta.json: " + std::string(e.what()));
  }
  if (field<int>(meta, "format_version", "meta.json") != kBundleVersion) {
    throw DataError("meta.json: unsupported format_version");
  }

  Bundle out;
  MultiSourceDataset& data = out.data;
  const auto interval = field<std::int64_t>(meta, "interval_seconds", "meta.json");

  const CsvTable target = read_csv(dir / "target.csv");
  if (target.header != std::vector<std::string>{"timestamp", "target"}) {
    throw DataError("target.csv line 1: expected header timestamp,target");
  }
  const auto T = static_cast<Index>(target.rows.size());
  if (T != field<Index>(meta, "length", "meta.json")) throw DataError("target.csv: row count differs from meta.json");
  data.target.resize(T);
  data.timestamps.resize(static_cast<std::size_t>(T));
  for (Index t = 0; t < T; ++t) {
    const CsvRow& row = target.rows[static_cast<std::size_t>(t)];
    data.timestamps[static_cast<std::size_t>(t)] = parse_int(row.fields[0], row.line);
    data.target[t] = parse_double(row.fields[1], row.line);
  }

  const json sources = field<json>(meta, "sources", "meta.json");
  if (!sources.is_array() || sources.empty()) throw DataError("meta.json: 'sources' must be a nonempty array");
  for (const json& entry : sources) {
    SourceSeries s;
    s.source_id = field<std::string>(entry, "id", "meta.json sources");
    s.market_id = field<std::string>(entry, "market", "meta.json sources");
    s.feature_names = field<std::vector<std::string>>(entry, "features", "meta.json sources");
    s.interval_seconds = interval;
    const auto file = field<std::string>(entry, "file", "meta.json sources");
    const CsvTable table = read_csv(dir / file);
    std::vector<std::string> header{"timestamp"};
    header.insert(header.end(), s.feature_names.begin(), s.feature_names.end());
    if (table.header != header) throw DataError(file + " line 1: header does not match meta.json features");
    if (static_cast<Index>(table.rows.size()) != T) throw DataError(file + ": row count differs from target.csv");
    const auto d = static_cast<Index>(s.feature_names.size());
    s.values.resize(T, d);
    s.timestamps.resize(static_cast<std::size_t>(T));
    for (Index t = 0; t < T; ++t) {
      const CsvRow& row = table.rows[static_cast<std::size_t>(t)];
      s.timestamps[static_cast<std::size_t>(t)] = parse_int(row.fields[0], row.line);
      for (Index j = 0; j < d; ++j) s.values(t, j) = parse_double(row.fields[static_cast<std::size_t>(j + 1)], row.line);
    }
    check_timestamps(s.timestamps, data.timestamps, file);
    data.sources.push_back(std::move(s));
  }

  const json splits = field<json>(meta, "splits", "meta.json");
  data.splits.train_end = field<Index>(splits, "train_end", "meta.json splits");
  data.splits.val_end = field<Index>(splits, "val_end", "meta.json splits");
  if (!(0 < data.splits.train_end && data.splits.train_end <= data.splits.val_end && data.splits.val_end <= T)) {
    throw DataError("meta.json: split indices out of range");
  }

  if (meta.contains("seasonal_profile") && !meta["seasonal_profile"].is_null()) {
    const json& sp = meta["seasonal_profile"];
    SeasonalProfile profile;
    profile.interval_seconds = field<std::int64_t>(sp, "interval_seconds", "meta.json seasonal_profile");
    profile.slot_means = field<std::vector<double>>(sp, "slot_means", "meta.json seasonal_profile");
    if (profile.interval_seconds <= 0 ||
        static_cast<std::int64_t>(profile.slot_means.size()) * profile.interval_seconds != 86400) {
      throw DataError("meta.json: seasonal profile does not cover one day");
    }
    data.seasonal_profile = std::move(profile);
  }

  if (meta.contains("ground_truth")) {
    const json& g = meta["ground_truth"];
    SynthGroundTruth truth;
    truth.regime_gain = to_vector(field<std::vector<double>>(g, "regime_gain", "meta.json ground_truth"));
    truth.noise_sd = field<double>(g, "noise_sd", "meta.json ground_truth");
    truth.informative_sources = field<std::vector<Index>>(g, "informative_sources", "meta.json ground_truth");
    const auto file = field<std::string>(g, "file", "meta.json ground_truth");
    const CsvTable table = read_csv(dir / file);
    if (static_cast<Index>(table.rows.size()) != T) throw DataError(file + ": row count differs from target.csv");
    truth.regime.resize(static_cast<std::size_t>(T));
    truth.true_mean.resize(T);
    truth.true_var.resize(T);
    for (Index t = 0; t < T; ++t) {
      const CsvRow& row = table.rows[static_cast<std::size_t>(t)];
      truth.regime[static_cast<std::size_t>(t)] = parse_int(row.fields[1], row.line);
      truth.true_mean[t] = parse_double(row.fields[2], row.line);
      truth.true_var[t] = parse_double(row.fields[3], row.line);
    }
    out.truth = std::move(truth);
  }

  data.validate();
  return out;
}

}  // namespace mixfc
