#include "mixfc/distributions.hpp"

#include <string>

namespace mixfc {

std::string_view dist_name(DistKind kind) { return kind == DistKind::Normal ? "normal" : "lognormal"; }

DistKind parse_dist_kind(std::string_view name) {
  if (name == "normal") return DistKind::Normal;
  if (name == "lognormal") return DistKind::LogNormal;
  throw ConfigError("unknown distribution '" + std::string(name) + "' (expected normal or lognormal)");
}

}  // namespace mixfc
