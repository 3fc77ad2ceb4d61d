#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dvdamp/core.hpp"

namespace dvdamp {

// Orientation letters are (vertical filter, horizontal filter): LH is lowpass
// down the columns and highpass along the rows.
enum class Orientation { LL, LH, HL, HH };

inline std::string_view to_string(Orientation o) {
  switch (o) {
    case Orientation::LL: return "LL";
    case Orientation::LH: return "LH";
    case Orientation::HL: return "HL";
    case Orientation::HH: return "HH";
  }
  return "?";
}

struct Subband {
  int level = 0;  // 1 = finest, kLevels = coarsest
  Orientation orientation = Orientation::LL;
  std::size_t row_begin = 0, row_end = 0;
  std::size_t col_begin = 0, col_end = 0;

  std::size_t rows() const { return row_end - row_begin; }
  std::size_t cols() const { return col_end - col_begin; }
  std::size_t count() const { return rows() * cols(); }
  std::string name() const { return std::string(to_string(orientation)) + std::to_string(level); }
};

// Mallat layout of a kLevels-deep 2-D Haar pyramid. Bands are ordered
// coarsest first: LL4, LH4, HL4, HH4, LH3, ..., HH1.
class SubbandLayout {
 public:
  SubbandLayout() = default;
  SubbandLayout(std::size_t height, std::size_t width) : height_(height), width_(width) {
    require_tileable(height, width);
    const std::size_t h4 = height >> kLevels, w4 = width >> kLevels;
    bands_[0] = {kLevels, Orientation::LL, 0, h4, 0, w4};
    std::size_t idx = 1;
    for (int level = kLevels; level >= 1; --level) {
      const std::size_t h = height >> level, w = width >> level;
      bands_[idx++] = {level, Orientation::LH, 0, h, w, 2 * w};
      bands_[idx++] = {level, Orientation::HL, h, 2 * h, 0, w};
      bands_[idx++] = {level, Orientation::HH, h, 2 * h, w, 2 * w};
    }
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return height_ * width_; }

  const Subband& band(std::size_t s) const { return bands_.at(s); }
  const std::array<Subband, kNumBands>& bands() const { return bands_; }

  // Band index owning coefficient (row, col).
  std::size_t band_of(std::size_t row, std::size_t col) const {
    for (std::size_t s = 0; s < bands_.size(); ++s) {
      const auto& b = bands_[s];
      if (row >= b.row_begin && row < b.row_end && col >= b.col_begin && col < b.col_end) return s;
    }
    throw std::out_of_range("coefficient index outside the pyramid");
  }

  // Calls f(flat_index) for every coefficient of band s, row-major within the band.
  template <typename F>
  void for_each_in_band(std::size_t s, F&& f) const {
    const auto& b = bands_.at(s);
    for (std::size_t r = b.row_begin; r < b.row_end; ++r) {
      for (std::size_t c = b.col_begin; c < b.col_end; ++c) f(r * width_ + c);
    }
  }

  friend bool operator==(const SubbandLayout& a, const SubbandLayout& b) {
    return a.height_ == b.height_ && a.width_ == b.width_;
  }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::array<Subband, kNumBands> bands_{};
};

// Per-band scalars (variances, thresholds, divergences) in band order.
using BandVector = std::array<double, kNumBands>;

class WaveletPyramid {
 public:
  WaveletPyramid() = default;
  explicit WaveletPyramid(const SubbandLayout& layout)
      : layout_(layout), coefficients_(layout.size()) {}
  WaveletPyramid(const SubbandLayout& layout, std::vector<Complex> coefficients)
      : layout_(layout), coefficients_(std::move(coefficients)) {
    if (coefficients_.size() != layout_.size()) {
      throw ShapeMismatchError("pyramid buffer length does not match layout");
    }
  }

  const SubbandLayout& layout() const { return layout_; }
  std::size_t height() const { return layout_.height(); }
  std::size_t width() const { return layout_.width(); }
  std::size_t size() const { return coefficients_.size(); }

  Complex& operator[](std::size_t i) { return coefficients_[i]; }
  const Complex& operator[](std::size_t i) const { return coefficients_[i]; }
  Complex& operator()(std::size_t row, std::size_t col) {
    return coefficients_[row * layout_.width() + col];
  }
  const Complex& operator()(std::size_t row, std::size_t col) const {
    return coefficients_[row * layout_.width() + col];
  }

  std::span<Complex> coefficients() { return coefficients_; }
  std::span<const Complex> coefficients() const { return coefficients_; }

  std::vector<Complex> extract_band(std::size_t s) const {
    std::vector<Complex> out;
    out.reserve(layout_.band(s).count());
    layout_.for_each_in_band(s, [&](std::size_t i) { out.push_back(coefficients_[i]); });
    return out;
  }

  void insert_band(std::size_t s, std::span<const Complex> values) {
    if (values.size() != layout_.band(s).count()) {
      throw ShapeMismatchError("band length mismatch on insert");
    }
    std::size_t k = 0;
    layout_.for_each_in_band(s, [&](std::size_t i) { coefficients_[i] = values[k++]; });
  }

  friend bool operator==(const WaveletPyramid&, const WaveletPyramid&) = default;

 private:
  SubbandLayout layout_;
  std::vector<Complex> coefficients_;
};

inline void require_same_layout(const WaveletPyramid& a, const WaveletPyramid& b,
                                const char* what) {
  if (!(a.layout() == b.layout())) {
    throw ShapeMismatchError(std::string(what) + ": pyramid layouts differ");
  }
}

namespace detail {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;

// One orthonormal Haar analysis level on the top-left (2h x 2w) block, in place.
inline void haar_analysis_level(std::span<Complex> data, std::size_t stride, std::size_t h2,
                                std::size_t w2, std::vector<Complex>& scratch) {
  const std::size_t h = h2 / 2, w = w2 / 2;
  scratch.resize(std::max(h2, w2));
  for (std::size_t r = 0; r < h2; ++r) {
    Complex* row = data.data() + r * stride;
    for (std::size_t c = 0; c < w; ++c) {
      scratch[c] = (row[2 * c] + row[2 * c + 1]) * kInvSqrt2;
      scratch[w + c] = (row[2 * c] - row[2 * c + 1]) * kInvSqrt2;
    }
    std::copy_n(scratch.begin(), w2, row);
  }
  for (std::size_t c = 0; c < w2; ++c) {
    for (std::size_t r = 0; r < h; ++r) {
      const Complex a = data[(2 * r) * stride + c], b = data[(2 * r + 1) * stride + c];
      scratch[r] = (a + b) * kInvSqrt2;
      scratch[h + r] = (a - b) * kInvSqrt2;
    }
    for (std::size_t r = 0; r < h2; ++r) data[r * stride + c] = scratch[r];
  }
}

inline void haar_synthesis_level(std::span<Complex> data, std::size_t stride, std::size_t h2,
                                 std::size_t w2, std::vector<Complex>& scratch) {
  const std::size_t h = h2 / 2, w = w2 / 2;
  scratch.resize(std::max(h2, w2));
  for (std::size_t c = 0; c < w2; ++c) {
    for (std::size_t r = 0; r < h; ++r) {
      const Complex lo = data[r * stride + c], hi = data[(h + r) * stride + c];
      scratch[2 * r] = (lo + hi) * kInvSqrt2;
      scratch[2 * r + 1] = (lo - hi) * kInvSqrt2;
    }
    for (std::size_t r = 0; r < h2; ++r) data[r * stride + c] = scratch[r];
  }
  for (std::size_t r = 0; r < h2; ++r) {
    Complex* row = data.data() + r * stride;
    for (std::size_t c = 0; c < w; ++c) {
      scratch[2 * c] = (row[c] + row[w + c]) * kInvSqrt2;
      scratch[2 * c + 1] = (row[c] - row[w + c]) * kInvSqrt2;
    }
    std::copy_n(scratch.begin(), w2, row);
  }
}

}  // namespace detail

inline WaveletPyramid haar_forward(const ImageGrid& image) {
  SubbandLayout layout(image.height(), image.width());
  std::vector<Complex> coeffs(image.values().begin(), image.values().end());
  std::vector<Complex> scratch;
  for (int level = 1; level <= kLevels; ++level) {
    detail::haar_analysis_level(coeffs, image.width(), image.height() >> (level - 1),
                                image.width() >> (level - 1), scratch);
  }
  return WaveletPyramid(layout, std::move(coeffs));
}

inline ImageGrid haar_inverse(const WaveletPyramid& pyramid) {
  std::vector<Complex> data(pyramid.coefficients().begin(), pyramid.coefficients().end());
  std::vector<Complex> scratch;
  for (int level = kLevels; level >= 1; --level) {
    detail::haar_synthesis_level(data, pyramid.width(), pyramid.height() >> (level - 1),
                                 pyramid.width() >> (level - 1), scratch);
  }
  return ImageGrid(pyramid.height(), pyramid.width(), std::move(data));
}

// |F psi|^2 for every subband, one length-n row per band. All basis functions
// of a band are translates of each other, so they share this magnitude spectrum.
class SpectralEnergyTable {
 public:
  SpectralEnergyTable() = default;
  SpectralEnergyTable(const SubbandLayout& layout, std::array<std::vector<double>, kNumBands> rows)
      : layout_(layout), rows_(std::move(rows)) {}

  const SubbandLayout& layout() const { return layout_; }
  std::span<const double> row(std::size_t s) const { return rows_.at(s); }

 private:
  SubbandLayout layout_;
  std::array<std::vector<double>, kNumBands> rows_;
};

namespace detail {

// Squared magnitude of the unitary length-n DFT of a level-`level` 1-D Haar
// scaling (highpass = false) or wavelet (highpass = true) function.
inline std::vector<double> haar_1d_energy_spectrum(std::size_t n, int level, bool highpass) {
  const std::size_t support = std::size_t{1} << level;
  const double amp = std::pow(2.0, -0.5 * level);
  std::vector<double> out(n);
  const double norm = 1.0 / static_cast<double>(n);
  for (std::size_t f = 0; f < n; ++f) {
    Complex acc = 0.0;
    for (std::size_t t = 0; t < support; ++t) {
      const double sign = (highpass && t >= support / 2) ? -1.0 : 1.0;
      const double phase = -2.0 * std::numbers::pi * static_cast<double>((f * t) % n) /
                           static_cast<double>(n);
      acc += sign * amp * Complex(std::cos(phase), std::sin(phase));
    }
    out[f] = std::norm(acc) * norm;
  }
  return out;
}

}  // namespace detail

inline SpectralEnergyTable build_spectral_energy(std::size_t height, std::size_t width) {
  SubbandLayout layout(height, width);
  std::array<std::vector<double>, kNumBands> rows;
  for (std::size_t s = 0; s < kNumBands; ++s) {
    const auto& b = layout.band(s);
    const bool vertical_hi = b.orientation == Orientation::HL || b.orientation == Orientation::HH;
    const bool horizontal_hi = b.orientation == Orientation::LH || b.orientation == Orientation::HH;
    const auto vert = detail::haar_1d_energy_spectrum(height, b.level, vertical_hi);
    const auto horiz = detail::haar_1d_energy_spectrum(width, b.level, horizontal_hi);
    auto& row = rows[s];
    row.resize(height * width);
    for (std::size_t f1 = 0; f1 < height; ++f1) {
      for (std::size_t f2 = 0; f2 < width; ++f2) row[f1 * width + f2] = vert[f1] * horiz[f2];
    }
  }
  return SpectralEnergyTable(layout, std::move(rows));
}

// Expands per-band scalars to a coefficient-shaped map.
inline std::vector<double> broadcast_bands(const SubbandLayout& layout, const BandVector& v) {
  std::vector<double> out(layout.size());
  for (std::size_t s = 0; s < kNumBands; ++s) {
    layout.for_each_in_band(s, [&](std::size_t i) { out[i] = v[s]; });
  }
  return out;
}

}  // namespace dvdamp
