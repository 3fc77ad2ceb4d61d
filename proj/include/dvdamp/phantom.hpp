#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include "dvdamp/core.hpp"

namespace dvdamp {

// Modified (Toft) Shepp-Logan head phantom, real-valued, scaled so the skull is `peak`.
inline ImageGrid shepp_logan(std::size_t height, std::size_t width, double peak = 255.0) {
  struct Ellipse {
    double intensity, semi_x, semi_y, cx, cy, angle_deg;
  };
  static constexpr std::array<Ellipse, 10> kEllipses = {{
      {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},
      {-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0},
      {-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0},
      {-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0},
      {0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0},
      {0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0},
      {0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0},
      {0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0},
      {0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0},
      {0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0},
  }};
  ImageGrid image(height, width);
  for (std::size_t row = 0; row < height; ++row) {
    const double y = 1.0 - (2.0 * static_cast<double>(row) + 1.0) / static_cast<double>(height);
    for (std::size_t col = 0; col < width; ++col) {
      const double x = (2.0 * static_cast<double>(col) + 1.0) / static_cast<double>(width) - 1.0;
      double value = 0.0;
      for (const auto& e : kEllipses) {
        const double t = e.angle_deg * std::numbers::pi / 180.0;
        const double dx = x - e.cx, dy = y - e.cy;
        const double u = (dx * std::cos(t) + dy * std::sin(t)) / e.semi_x;
        const double v = (-dx * std::sin(t) + dy * std::cos(t)) / e.semi_y;
        if (u * u + v * v <= 1.0) value += e.intensity;
      }
      image(row, col) = peak * value;
    }
  }
  return image;
}

}  // namespace dvdamp
