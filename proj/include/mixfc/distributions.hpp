#pragma once

#include "mixfc/errors.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>

namespace mixfc {

enum class DistKind { Normal, LogNormal };

std::string_view dist_name(DistKind kind);
DistKind parse_dist_kind(std::string_view name);

/// Location and variance of y (Normal) or of ln y (LogNormal).
template <typename Scalar>
struct DistParams {
  Scalar mu{0};
  Scalar sigma2{1};
};

/// Seeded 64-bit stream with explicit Box-Muller normals, so draws are
/// reproducible across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <typename Scalar>
Scalar standard_normal_cdf(Scalar z) {
  using std::erfc;
  return Scalar(0.5) * erfc(-z / std::numbers::sqrt2_v<Scalar>);
}

template <typename Scalar>
Scalar log_pdf(DistKind kind, const DistParams<Scalar>& p, Scalar y) {
  using std::log;
  const Scalar half_log_2pi = Scalar(0.5) * log(Scalar(2) * std::numbers::pi_v<Scalar>);
  if (kind == DistKind::Normal) {
    const Scalar r = y - p.mu;
    return -half_log_2pi - Scalar(0.5) * log(p.sigma2) - r * r / (Scalar(2) * p.sigma2);
  }
  if (!(y > Scalar(0))) {
    throw DataError("log_pdf: log-normal target must be positive, got " + std::to_string(static_cast<double>(y)));
  }
  const Scalar ly = log(y);
  const Scalar r = ly - p.mu;
  return -half_log_2pi - Scalar(0.5) * log(p.sigma2) - r * r / (Scalar(2) * p.sigma2) - ly;
}

template <typename Scalar>
Scalar mean(DistKind kind, const DistParams<Scalar>& p) {
  using std::exp;
  return kind == DistKind::Normal ? p.mu : exp(p.mu + Scalar(0.5) * p.sigma2);
}

// Log-normal: (e^{s2} - 1) e^{2 mu + s2}.
template <typename Scalar>
Scalar variance(DistKind kind, const DistParams<Scalar>& p) {
  using std::exp;
  using std::expm1;
  if (kind == DistKind::Normal) return p.sigma2;
  return expm1(p.sigma2) * exp(Scalar(2) * p.mu + p.sigma2);
}

template <typename Scalar>
Scalar cdf(DistKind kind, const DistParams<Scalar>& p, Scalar y) {
  using std::log;
  using std::sqrt;
  const Scalar sd = sqrt(p.sigma2);
  if (kind == DistKind::Normal) return standard_normal_cdf((y - p.mu) / sd);
  if (!(y > Scalar(0))) return Scalar(0);
  return standard_normal_cdf((log(y) - p.mu) / sd);
}

template <typename Scalar>
Scalar sample(DistKind kind, const DistParams<Scalar>& p, Rng& rng) {
  using std::exp;
  using std::sqrt;
  const Scalar draw = p.mu + sqrt(p.sigma2) * Scalar(rng.normal());
  return kind == DistKind::Normal ? draw : exp(draw);
}

}  // namespace mixfc
