#pragma once

#include <algorithm>
#include <cmath>

#include "dvdamp/core.hpp"

namespace dvdamp {

// Stand-in for +inf PSNR so results stay serialisable.
inline constexpr double kPsnrSentinel = 200.0;

inline double psnr(const ImageGrid& reference, const ImageGrid& estimate, double peak = 255.0) {
  require_same_shape(reference, estimate, "psnr");
  if (!(peak > 0.0)) throw std::invalid_argument("psnr peak must be positive");
  double err = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) err += std::norm(reference[i] - estimate[i]);
  if (err == 0.0) return kPsnrSentinel;
  const double value =
      10.0 * std::log10(peak * peak * static_cast<double>(reference.size()) / err);
  return std::min(value, kPsnrSentinel);
}

}  // namespace dvdamp
