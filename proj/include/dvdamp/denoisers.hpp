#pragma once

#include <array>
#include <cmath>
#include <concepts>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dvdamp/core.hpp"
#include "dvdamp/wavelet.hpp"

namespace dvdamp {

// Name and parameters recorded in traces and run records.
struct DenoiserDescriptor {
  std::string name;
  std::vector<std::pair<std::string, double>> parameters;
};

// D(x; band_sds): removes noise whose covariance is diagonal in the Haar domain
// with standard deviation band_sds[s] (total, complex) in subband s.
template <typename D>
concept ColoredDenoiser = requires(D& d, const ImageGrid& image, const BandVector& band_sds) {
  { d.denoise(image, band_sds) } -> std::same_as<ImageGrid>;
  { d.descriptor() } -> std::convertible_to<DenoiserDescriptor>;
};

// Type-erased, shared handle so denoisers can be chosen at runtime.
class AnyDenoiser {
 public:
  template <ColoredDenoiser D>
    requires(!std::same_as<std::remove_cvref_t<D>, AnyDenoiser>)
  AnyDenoiser(D denoiser)  // NOLINT(google-explicit-constructor)
      : impl_(std::make_shared<Model<D>>(std::move(denoiser))) {}

  ImageGrid denoise(const ImageGrid& image, const BandVector& band_sds) {
    return impl_->denoise(image, band_sds);
  }
  DenoiserDescriptor descriptor() const { return impl_->descriptor(); }

 private:
  struct Concept {
    virtual ~Concept() = default;
    virtual ImageGrid denoise(const ImageGrid&, const BandVector&) = 0;
    virtual DenoiserDescriptor descriptor() const = 0;
  };
  template <typename D>
  struct Model final : Concept {
    explicit Model(D d) : denoiser(std::move(d)) {}
    ImageGrid denoise(const ImageGrid& image, const BandVector& sds) override {
      return denoiser.denoise(image, sds);
    }
    DenoiserDescriptor descriptor() const override { return denoiser.descriptor(); }
    D denoiser;
  };
  std::shared_ptr<Concept> impl_;
};

// Complex soft threshold: shrinks the magnitude by lambda and keeps the phase.
inline Complex soft_threshold(Complex c, double lambda) {
  const double mag = std::abs(c);
  if (mag <= lambda) return 0.0;
  return c * (1.0 - lambda / mag);
}

inline void require_band_sds(const BandVector& band_sds) {
  for (double sd : band_sds) {
    if (!std::isfinite(sd) || sd < 0.0) {
      throw std::invalid_argument("band standard deviations must be finite and nonnegative");
    }
  }
}

// Wavelet-domain shrinkage with per-band thresholds; band 0 (LL) passes through.
inline ImageGrid threshold_bands(const ImageGrid& image, const BandVector& thresholds) {
  WaveletPyramid w = haar_forward(image);
  for (std::size_t s = 1; s < kNumBands; ++s) {
    w.layout().for_each_in_band(s, [&](std::size_t i) { w[i] = soft_threshold(w[i], thresholds[s]); });
  }
  return haar_inverse(w);
}

class SoftThresholdDenoiser {
 public:
  explicit SoftThresholdDenoiser(double multiplier = 1.0) : multiplier_(multiplier) {}

  ImageGrid denoise(const ImageGrid& image, const BandVector& band_sds) const {
    require_band_sds(band_sds);
    BandVector lambda{};
    for (std::size_t s = 0; s < kNumBands; ++s) lambda[s] = multiplier_ * band_sds[s];
    return threshold_bands(image, lambda);
  }

  DenoiserDescriptor descriptor() const { return {"soft", {{"multiplier", multiplier_}}}; }
  double multiplier() const { return multiplier_; }

 private:
  double multiplier_;
};

// SURE of complex soft thresholding at lambda for coefficients carrying
// circular Gaussian noise of total variance sd^2 (sd^2/2 per component).
inline double soft_threshold_sure(std::span<const Complex> coeffs, double sd, double lambda) {
  const double var = sd * sd;
  double risk = -static_cast<double>(coeffs.size()) * var;
  for (const auto& c : coeffs) {
    const double mag = std::abs(c);
    if (mag > lambda) {
      risk += lambda * lambda + var * (2.0 - lambda / mag);
    } else {
      risk += mag * mag;
    }
  }
  return risk;
}

inline constexpr std::array<double, 6> kSureThresholdGrid = {1.0, 1.25, 1.5, 2.0, 2.5, 3.0};

// Grid threshold minimising SURE; ties go to the smaller threshold.
inline double select_sure_threshold(std::span<const Complex> coeffs, double sd) {
  if (!(sd > 0.0)) return 0.0;
  // Bands whose energy is indistinguishable from noise get the largest threshold.
  const double n = static_cast<double>(coeffs.size());
  if (n > 1.0) {
    double energy = 0.0;
    for (const auto& c : coeffs) energy += std::norm(c);
    if (energy / (n * sd * sd) - 1.0 <= std::sqrt(2.0 * std::log(n) / n)) return kSureThresholdGrid.back() * sd;
  }
  double best_lambda = kSureThresholdGrid.front() * sd;
  double best_risk = std::numeric_limits<double>::infinity();
  for (double mult : kSureThresholdGrid) {
    const double risk = soft_threshold_sure(coeffs, sd, mult * sd);
    if (risk < best_risk) {
      best_risk = risk;
      best_lambda = mult * sd;
    }
  }
  return best_lambda;
}

class SureThresholdDenoiser {
 public:
  ImageGrid denoise(const ImageGrid& image, const BandVector& band_sds) const {
    require_band_sds(band_sds);
    WaveletPyramid w = haar_forward(image);
    for (std::size_t s = 1; s < kNumBands; ++s) {
      const auto band = w.extract_band(s);
      const double lambda = select_sure_threshold(band, band_sds[s]);
      w.layout().for_each_in_band(s, [&](std::size_t i) { w[i] = soft_threshold(w[i], lambda); });
    }
    return haar_inverse(w);
  }

  DenoiserDescriptor descriptor() const { return {"sure", {}}; }
};

// Per-band linear shrinkage by v / (v + sd^2), v the excess band energy.
inline double wiener_gain(std::span<const Complex> coeffs, double sd) {
  const double var = sd * sd;
  double energy = 0.0;
  for (const auto& c : coeffs) energy += std::norm(c);
  energy /= static_cast<double>(coeffs.size());
  const double signal = std::max(0.0, energy - var);
  if (signal + var == 0.0) return 1.0;
  return signal / (signal + var);
}

class WienerSubbandDenoiser {
 public:
  ImageGrid denoise(const ImageGrid& image, const BandVector& band_sds) const {
    require_band_sds(band_sds);
    WaveletPyramid w = haar_forward(image);
    for (std::size_t s = 1; s < kNumBands; ++s) {
      const double gain = wiener_gain(w.extract_band(s), band_sds[s]);
      w.layout().for_each_in_band(s, [&](std::size_t i) { w[i] *= gain; });
    }
    return haar_inverse(w);
  }

  DenoiserDescriptor descriptor() const { return {"wiener", {}}; }
};

class IdentityDenoiser {
 public:
  ImageGrid denoise(const ImageGrid& image, const BandVector&) const { return image; }
  DenoiserDescriptor descriptor() const { return {"identity", {}}; }
};

enum class ImaginaryMode { scale, zero, passthrough };

struct ImaginaryPolicy {
  ImaginaryMode mode = ImaginaryMode::scale;
  double scale_factor = 0.1;
};

inline std::string to_string(ImaginaryMode mode) {
  switch (mode) {
    case ImaginaryMode::scale: return "scale";
    case ImaginaryMode::zero: return "zero";
    case ImaginaryMode::passthrough: return "passthrough";
  }
  return "?";
}

// Runs a real-valued denoiser on the real part and handles the imaginary part
// per the policy. The divergence estimator sees this wrapped operator.
template <ColoredDenoiser Inner>
class RealPartDenoiser {
 public:
  RealPartDenoiser(Inner inner, ImaginaryPolicy policy) : inner_(std::move(inner)), policy_(policy) {
    if (!(policy_.scale_factor >= 0.0 && policy_.scale_factor <= 1.0)) {
      throw std::invalid_argument("imaginary scale factor must lie in [0, 1]");
    }
  }

  ImageGrid denoise(const ImageGrid& image, const BandVector& band_sds) {
    ImageGrid real_only(image.height(), image.width());
    for (std::size_t i = 0; i < image.size(); ++i) real_only[i] = image[i].real();
    const ImageGrid denoised = inner_.denoise(real_only, band_sds);
    require_same_shape(image, denoised, "real-part denoiser");
    const double factor = policy_.mode == ImaginaryMode::scale       ? policy_.scale_factor
                          : policy_.mode == ImaginaryMode::passthrough ? 1.0
                                                                       : 0.0;
    ImageGrid out(image.height(), image.width());
    for (std::size_t i = 0; i < image.size(); ++i) {
      out[i] = Complex(denoised[i].real(), factor * image[i].imag());
    }
    return out;
  }

  DenoiserDescriptor descriptor() const {
    auto d = inner_.descriptor();
    d.name += "+imag-" + to_string(policy_.mode);
    d.parameters.emplace_back("imag_scale", policy_.scale_factor);
    return d;
  }

 private:
  Inner inner_;
  ImaginaryPolicy policy_;
};

template <ColoredDenoiser Inner>
RealPartDenoiser<Inner> apply_imaginary_policy(Inner inner, ImaginaryPolicy policy) {
  return RealPartDenoiser<Inner>(std::move(inner), policy);
}

}  // namespace dvdamp
