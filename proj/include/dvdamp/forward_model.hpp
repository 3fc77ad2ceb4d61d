#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dvdamp/core.hpp"
#include "dvdamp/fft.hpp"
#include "dvdamp/random.hpp"
#include "dvdamp/wavelet.hpp"

namespace dvdamp {

class InfeasibleRateError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SchemeInvariantError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SamplingParameters {
  double target_rate = 0.25;
  double density_exponent = 4.0;
  // Radius of the fully sampled disk, as a fraction of the DC-to-corner distance.
  double fully_sampled_radius = 0.06;
  double p_min = 1e-3;
  std::uint64_t seed = 0;

  friend bool operator==(const SamplingParameters&, const SamplingParameters&) = default;
};

// Sampling set (omega), its inclusion probabilities (density = diag of P) and
// the parameters that generated them. Indices follow the unshifted DFT layout.
struct SamplingScheme {
  std::size_t height = 0;
  std::size_t width = 0;
  SamplingParameters params;
  std::vector<std::uint8_t> omega;
  std::vector<double> density;

  std::size_t size() const { return height * width; }
  std::size_t sample_count() const {
    std::size_t m = 0;
    for (auto o : omega) m += o;
    return m;
  }

  void validate() const {
    if (omega.size() != size() || density.size() != size()) {
      throw SchemeInvariantError("sampling scheme buffers do not match its dimensions");
    }
    for (std::size_t i = 0; i < size(); ++i) {
      if (omega[i] > 1) throw SchemeInvariantError("omega entries must be 0 or 1");
      if (!(density[i] >= params.p_min) || density[i] > 1.0) {
        throw SchemeInvariantError("density entry " + std::to_string(i) + " = " +
                                   std::to_string(density[i]) + " outside [p_min, 1]");
      }
    }
  }

  friend bool operator==(const SamplingScheme&, const SamplingScheme&) = default;
};

// Frequency-domain data (measurements, residuals) on the unshifted DFT grid.
using KSpaceResidual = ImageGrid;

struct KSpaceMeasurement {
  ImageGrid values;
  double noise_sd = 0.0;
};

namespace detail {

// Distance of DFT index (u, v) from DC, normalised so the farthest corner is 1.
inline double normalized_frequency_radius(std::size_t u, std::size_t v, std::size_t height,
                                          std::size_t width) {
  const double half_h = static_cast<double>(height) / 2.0;
  const double half_w = static_cast<double>(width) / 2.0;
  const double fu = (u < height / 2 ? double(u) : double(u) - double(height)) / half_h;
  const double fv = (v < width / 2 ? double(v) : double(v) - double(width)) / half_w;
  return std::min(1.0, std::sqrt(fu * fu + fv * fv) / std::numbers::sqrt2);
}

}  // namespace detail

// Radial polynomial density profile (1 - d)^exponent with a fully sampled
// centre disk, fitted to an expected sample count of target_rate * n:
//   level t >= 0: density = clamp(profile + t, p_min, 1)        (offset)
//   level t <  0: density = clamp((1 + t) * profile, p_min, 1)  (scaling)
// The offset branch keeps P^-1 bounded at moderate rates; the scaling branch
// only engages at rates too low for a nonnegative offset. Omega is then an
// i.i.d. Bernoulli draw with these inclusion probabilities.
inline SamplingScheme make_variable_density_scheme(std::size_t height, std::size_t width,
                                                   const SamplingParameters& params) {
  require_tileable(height, width);
  if (!(params.target_rate > 0.0 && params.target_rate <= 1.0)) {
    throw std::invalid_argument("target_rate must lie in (0, 1]");
  }
  if (!(params.density_exponent >= 0.0)) {
    throw std::invalid_argument("density_exponent must be nonnegative");
  }
  if (!(params.p_min > 0.0 && params.p_min <= 1.0)) {
    throw std::invalid_argument("p_min must lie in (0, 1]");
  }
  if (!(params.fully_sampled_radius >= 0.0)) {
    throw std::invalid_argument("fully_sampled_radius must be nonnegative");
  }

  SamplingScheme scheme{height, width, params, {}, {}};
  const std::size_t n = height * width;
  scheme.density.assign(n, 1.0);
  scheme.omega.assign(n, 1);
  if (params.target_rate == 1.0) return scheme;

  std::vector<double> profile(n);
  std::vector<std::uint8_t> centre(n, 0);
  std::size_t centre_count = 0;
  for (std::size_t u = 0; u < height; ++u) {
    for (std::size_t v = 0; v < width; ++v) {
      const double d = detail::normalized_frequency_radius(u, v, height, width);
      const std::size_t i = u * width + v;
      profile[i] = std::pow(1.0 - d, params.density_exponent);
      if (d <= params.fully_sampled_radius) {
        centre[i] = 1;
        ++centre_count;
      }
    }
  }

  auto density_at = [&](double level, std::size_t i) {
    if (centre[i]) return 1.0;
    const double raw = level >= 0.0 ? profile[i] + level : (1.0 + level) * profile[i];
    return std::clamp(raw, params.p_min, 1.0);
  };
  auto expected_count = [&](double level) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += density_at(level, i);
    return acc;
  };

  const double target = params.target_rate * static_cast<double>(n);
  const double floor_count =
      static_cast<double>(centre_count) + params.p_min * static_cast<double>(n - centre_count);
  if (target < floor_count) {
    throw InfeasibleRateError(
        "target rate " + std::to_string(params.target_rate) +
        " is below the minimum achievable rate " + std::to_string(floor_count / double(n)) +
        "; lower the fully sampled radius or p_min");
  }

  double lo = -1.0, hi = 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    (expected_count(mid) < target ? lo : hi) = mid;
  }
  const double level = hi;
  if (std::abs(expected_count(level) - target) > 1e-6 * target + 1e-9) {
    throw InfeasibleRateError("could not match the target rate after clamping; lower the "
                              "fully sampled radius or the density exponent");
  }

  Rng rng(derive_seed(params.seed, "omega"));
  for (std::size_t i = 0; i < n; ++i) {
    scheme.density[i] = density_at(level, i);
    scheme.omega[i] = uniform01(rng) < scheme.density[i] ? 1 : 0;
  }
  return scheme;
}

inline void require_scheme_matches(const SamplingScheme& scheme, std::size_t height,
                                   std::size_t width, const char* what) {
  if (scheme.height != height || scheme.width != width) {
    throw ShapeMismatchError(std::string(what) + ": sampling scheme is " +
                             std::to_string(scheme.height) + "x" + std::to_string(scheme.width) +
                             " but data is " + std::to_string(height) + "x" +
                             std::to_string(width));
  }
}

// y = M_omega (F x + eps), eps circular complex Gaussian with E|eps|^2 = noise_sd^2.
inline KSpaceMeasurement measure(const ImageGrid& image, const SamplingScheme& scheme,
                                 double noise_sd, std::uint64_t seed) {
  require_scheme_matches(scheme, image.height(), image.width(), "measure");
  if (!(noise_sd >= 0.0)) throw std::invalid_argument("noise_sd must be nonnegative");
  ImageGrid y = fft2(image);
  Rng rng(derive_seed(seed, "measurement-noise"));
  const double component_sd = noise_sd / std::numbers::sqrt2;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double re = standard_normal(rng), im = standard_normal(rng);
    if (scheme.omega[i]) {
      if (noise_sd > 0.0) y[i] += component_sd * Complex(re, im);
    } else {
      y[i] = 0.0;
    }
  }
  return {std::move(y), noise_sd};
}

// Psi F^H P^{-1} z.
inline WaveletPyramid density_compensated_backproject(const KSpaceResidual& z,
                                                      const SamplingScheme& scheme) {
  require_scheme_matches(scheme, z.height(), z.width(), "backproject");
  scheme.validate();
  ImageGrid weighted(z.height(), z.width());
  for (std::size_t i = 0; i < z.size(); ++i) weighted[i] = z[i] / scheme.density[i];
  return haar_forward(ifft2(weighted));
}

// F^H P^{-1} y: the density-compensated zero-filled reconstruction.
inline ImageGrid zero_filled_reconstruction(const KSpaceMeasurement& y,
                                            const SamplingScheme& scheme) {
  return haar_inverse(density_compensated_backproject(y.values, scheme));
}

// Noise standard deviation giving the requested SNR, where signal power is the
// mean |Fx|^2 over the sampled frequencies and noise power is noise_sd^2.
inline double snr_to_noise_sd(const ImageGrid& image, double target_snr_db,
                              const SamplingScheme& scheme) {
  require_scheme_matches(scheme, image.height(), image.width(), "snr_to_noise_sd");
  if (std::isnan(target_snr_db)) throw std::invalid_argument("target SNR is NaN");
  const ImageGrid spectrum = fft2(image);
  double power = 0.0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    if (scheme.omega[i]) {
      power += std::norm(spectrum[i]);
      ++m;
    }
  }
  if (m == 0 || power == 0.0) {
    throw std::invalid_argument("image has zero energy on the sampled frequencies");
  }
  if (target_snr_db == std::numeric_limits<double>::infinity()) return 0.0;
  power /= static_cast<double>(m);
  return std::sqrt(power / std::pow(10.0, target_snr_db / 10.0));
}

}  // namespace dvdamp
