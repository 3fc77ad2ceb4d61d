#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dvdamp {

using Complex = std::complex<double>;

// Number of dyadic Haar levels and the resulting subband count.
inline constexpr int kLevels = 4;
inline constexpr int kNumBands = 3 * kLevels + 1;
// Image dimensions must be divisible by this so every level halves exactly.
inline constexpr std::size_t kDimensionQuantum = std::size_t{1} << kLevels;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeMismatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require_tileable(std::size_t height, std::size_t width) {
  if (height == 0 || width == 0 || height % kDimensionQuantum != 0 ||
      width % kDimensionQuantum != 0) {
    throw DimensionError("image dimensions " + std::to_string(height) + "x" +
                         std::to_string(width) + " must be positive multiples of " +
                         std::to_string(kDimensionQuantum));
  }
}

// Row-major complex image. The nominal display range of the real part is 0-255.
class ImageGrid {
 public:
  ImageGrid() = default;
  ImageGrid(std::size_t height, std::size_t width)
      : height_(height), width_(width), values_(height * width) {}
  ImageGrid(std::size_t height, std::size_t width, std::vector<Complex> values)
      : height_(height), width_(width), values_(std::move(values)) {
    if (values_.size() != height_ * width_) {
      throw ShapeMismatchError("image buffer length does not match dimensions");
    }
  }

  static ImageGrid from_real(std::size_t height, std::size_t width,
                             std::span<const double> real) {
    if (real.size() != height * width) {
      throw ShapeMismatchError("real buffer length does not match dimensions");
    }
    ImageGrid out(height, width);
    for (std::size_t i = 0; i < real.size(); ++i) out.values_[i] = real[i];
    return out;
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  Complex& operator()(std::size_t row, std::size_t col) { return values_[row * width_ + col]; }
  const Complex& operator()(std::size_t row, std::size_t col) const {
    return values_[row * width_ + col];
  }
  Complex& operator[](std::size_t i) { return values_[i]; }
  const Complex& operator[](std::size_t i) const { return values_[i]; }

  std::span<Complex> values() { return values_; }
  std::span<const Complex> values() const { return values_; }

  std::vector<double> real_part() const {
    std::vector<double> out(values_.size());
    for (std::size_t i = 0; i < values_.size(); ++i) out[i] = values_[i].real();
    return out;
  }

  bool same_shape(const ImageGrid& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<Complex> values_;
};

inline void require_same_shape(const ImageGrid& a, const ImageGrid& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeMismatchError(std::string(what) + ": image shapes differ (" +
                             std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                             " vs " + std::to_string(b.height()) + "x" +
                             std::to_string(b.width()) + ")");
  }
}

inline double squared_norm(std::span<const Complex> v) {
  double acc = 0.0;
  for (const auto& c : v) acc += std::norm(c);
  return acc;
}

}  // namespace dvdamp
