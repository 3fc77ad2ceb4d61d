#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include "dvdamp/core.hpp"

namespace dvdamp {

// Unitary 2-D DFT (1/sqrt(n) in both directions) backed by FFTW.
// Plans are created once per (shape, direction) and shared; FFTW's new-array
// execute interface is thread safe, plan creation is serialised here.
class UnitaryFft2d {
 public:
  static void forward(std::size_t height, std::size_t width, std::span<const Complex> in,
                      std::span<Complex> out) {
    run(height, width, FFTW_FORWARD, in, out);
  }

  static void inverse(std::size_t height, std::size_t width, std::span<const Complex> in,
                      std::span<Complex> out) {
    run(height, width, FFTW_BACKWARD, in, out);
  }

 private:
  static void run(std::size_t height, std::size_t width, int sign, std::span<const Complex> in,
                  std::span<Complex> out) {
    const std::size_t n = height * width;
    if (in.size() != n || out.size() != n) {
      throw ShapeMismatchError("fft buffer length does not match dimensions");
    }
    fftw_plan plan = plan_for(height, width, sign);
    if (in.data() != out.data()) std::copy(in.begin(), in.end(), out.begin());
    auto* data = reinterpret_cast<fftw_complex*>(out.data());
    fftw_execute_dft(plan, data, data);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (auto& v : out) v *= scale;
  }

  static fftw_plan plan_for(std::size_t height, std::size_t width, int sign) {
    static std::mutex mutex;
    static std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> plans;
    std::lock_guard lock(mutex);
    auto key = std::make_tuple(height, width, sign);
    if (auto it = plans.find(key); it != plans.end()) return it->second;
    // Planning with ESTIMATE does not touch the buffer contents.
    std::vector<Complex> scratch(height * width);
    auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
    fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(height), static_cast<int>(width), buf,
                                      buf, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans.emplace(key, plan);
    return plan;
  }
};

inline ImageGrid fft2(const ImageGrid& image) {
  ImageGrid out(image.height(), image.width());
  UnitaryFft2d::forward(image.height(), image.width(), image.values(), out.values());
  return out;
}

inline ImageGrid ifft2(const ImageGrid& spectrum) {
  ImageGrid out(spectrum.height(), spectrum.width());
  UnitaryFft2d::inverse(spectrum.height(), spectrum.width(), spectrum.values(), out.values());
  return out;
}

}  // namespace dvdamp
