#pragma once

#include "mixfc/model.hpp"

#include <filesystem>
#include <string>

namespace mixfc {

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  WindowOptions window;
};

/// JSON text with parameters keyed by param_refs() name; doubles round-trip exactly.
std::string checkpoint_to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mixfc
