#pragma once

#include "mixfc/dataset.hpp"
#include "mixfc/synth.hpp"

#include <filesystem>
#include <optional>

namespace mixfc {

/// On-disk dataset: source_<i>.csv (timestamp then feature columns),
/// target.csv (timestamp,target), meta.json, and ground_truth.csv for
/// synthetic data. Numbers are written in shortest round-trip form.
struct Bundle {
  MultiSourceDataset data;
  std::optional<SynthGroundTruth> truth;
};

void save_bundle(const std::filesystem::path& dir, const MultiSourceDataset& data,
                 const SynthGroundTruth* truth = nullptr);

Bundle load_bundle(const std::filesystem::path& dir);

}  // namespace mixfc
