#pragma once

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dvdamp/core.hpp"
#include "dvdamp/denoisers.hpp"
#include "dvdamp/dvdamp.hpp"
#include "dvdamp/metrics.hpp"
#include "dvdamp/random.hpp"
#include "dvdamp/wavelet.hpp"

namespace dvdamp {

// Bands smaller than this get no Gaussianity score.
inline constexpr std::size_t kMinGaussianitySamples = 16;

// Pearson correlation between the sorted samples and standard normal
// quantiles at (i + 0.5) / J: a numeric QQ-plot linearity score.
inline std::optional<double> normal_quantile_correlation(std::vector<double> samples) {
  const std::size_t n = samples.size();
  if (n < 2) return std::nullopt;
  std::sort(samples.begin(), samples.end());
  const boost::math::normal standard;
  std::vector<double> q(n);
  for (std::size_t i = 0; i < n; ++i) {
    q[i] = boost::math::quantile(standard, (static_cast<double>(i) + 0.5) / static_cast<double>(n));
  }
  const double mean_x = std::accumulate(samples.begin(), samples.end(), 0.0) / double(n);
  const double mean_q = std::accumulate(q.begin(), q.end(), 0.0) / double(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = samples[i] - mean_x, dq = q[i] - mean_q;
    sxy += dx * dq;
    sxx += dx * dx;
    syy += dq * dq;
  }
  if (sxx == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

struct BandNoiseStats {
  std::size_t band = 0;
  std::string name;
  std::size_t count = 0;
  double predicted = 0.0;
  // Total (real + imaginary) and per-component mean squared effective noise.
  double empirical = 0.0;
  double empirical_real = 0.0;
  double empirical_imag = 0.0;
  // predicted / empirical; absent when the empirical variance is zero.
  std::optional<double> ratio;
  std::optional<double> gaussianity_real;
  std::optional<double> gaussianity_imag;
};

struct SubbandNoiseReport {
  int iteration = 0;
  std::vector<BandNoiseStats> bands;
};

inline SubbandNoiseReport subband_noise_report(const WaveletPyramid& r, const WaveletPyramid& w_true,
                                               const BandVector& tau, int iteration = 0) {
  require_same_layout(r, w_true, "subband_noise_report");
  const auto& layout = r.layout();
  SubbandNoiseReport report;
  report.iteration = iteration;
  for (std::size_t s = 0; s < kNumBands; ++s) {
    BandNoiseStats st;
    st.band = s;
    st.name = layout.band(s).name();
    st.count = layout.band(s).count();
    st.predicted = tau[s];
    std::vector<double> re, im;
    re.reserve(st.count);
    im.reserve(st.count);
    layout.for_each_in_band(s, [&](std::size_t i) {
      const Complex e = r[i] - w_true[i];
      re.push_back(e.real());
      im.push_back(e.imag());
    });
    for (std::size_t k = 0; k < st.count; ++k) {
      st.empirical_real += re[k] * re[k];
      st.empirical_imag += im[k] * im[k];
    }
    st.empirical_real /= double(st.count);
    st.empirical_imag /= double(st.count);
    st.empirical = st.empirical_real + st.empirical_imag;
    if (st.empirical > 0.0) st.ratio = st.predicted / st.empirical;
    if (st.count >= kMinGaussianitySamples) {
      st.gaussianity_real = normal_quantile_correlation(std::move(re));
      st.gaussianity_imag = normal_quantile_correlation(std::move(im));
    }
    report.bands.push_back(std::move(st));
  }
  return report;
}

// Thresholds for the per-subband state evolution check.
struct StateEvolutionTolerances {
  double ratio_factor = 1.5;
  std::size_t ratio_min_count = 64;
  int ratio_max_iteration = 3;
  double gaussianity_min = 0.99;
  std::size_t gaussianity_min_count = 256;
  int gaussianity_iteration = 2;
  // Bands whose predicted and empirical variances are both below this are exempt.
  double negligible_variance = 1e-12;
};

struct StateEvolutionCheck {
  bool passed = true;
  std::vector<SubbandNoiseReport> reports;
  std::vector<std::string> failures;
};

// Builds one report per recorded iteration (states and ground truth required)
// and checks variance ratios and real-part Gaussianity against the tolerances.
inline StateEvolutionCheck check_state_evolution(const IterationTrace& trace,
                                                 const WaveletPyramid& w_true,
                                                 const StateEvolutionTolerances& tol = {}) {
  StateEvolutionCheck out;
  for (const auto& rec : trace.iterations) {
    if (!rec.r) throw std::invalid_argument("trace has no recorded r_k states");
    auto report = subband_noise_report(*rec.r, w_true, rec.tau, rec.k);
    for (const auto& b : report.bands) {
      const std::string where = "k=" + std::to_string(rec.k) + " band " + b.name;
      if (b.predicted <= tol.negligible_variance && b.empirical <= tol.negligible_variance) continue;
      if (rec.k <= tol.ratio_max_iteration && b.count >= tol.ratio_min_count && b.ratio) {
        if (*b.ratio > tol.ratio_factor || *b.ratio < 1.0 / tol.ratio_factor) {
          out.failures.push_back(where + ": variance ratio " + std::to_string(*b.ratio));
        }
      }
      if (rec.k == tol.gaussianity_iteration && b.count >= tol.gaussianity_min_count &&
          b.gaussianity_real && *b.gaussianity_real < tol.gaussianity_min) {
        out.failures.push_back(where + ": gaussianity " + std::to_string(*b.gaussianity_real));
      }
    }
    out.reports.push_back(std::move(report));
  }
  out.passed = out.failures.empty();
  return out;
}

struct RiskMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  // SURE of the whole image divided by n; equals the mean of `values`.
  double mean_risk = 0.0;
};

// Per-pixel variance of noise that is white within each Haar band with the
// given total sd: every band's basis functions tile the image with squared
// amplitude 4^-level, so the map is constant.
inline double haar_colored_pixel_variance(const SubbandLayout& layout, const BandVector& band_sds) {
  double v = 0.0;
  for (std::size_t s = 0; s < kNumBands; ++s) {
    v += band_sds[s] * band_sds[s] * std::pow(4.0, -layout.band(s).level);
  }
  return v;
}

// Colored circular Gaussian noise: white per band with total sd band_sds[s].
inline ImageGrid synthesize_colored_noise(const SubbandLayout& layout, const BandVector& band_sds,
                                          std::uint64_t seed) {
  WaveletPyramid w(layout);
  Rng rng(seed);
  for (std::size_t s = 0; s < kNumBands; ++s) {
    const double c = band_sds[s] / std::numbers::sqrt2;
    layout.for_each_in_band(s, [&](std::size_t i) {
      const double re = standard_normal(rng), im = standard_normal(rng);
      w[i] = c * Complex(re, im);
    });
  }
  return haar_inverse(w);
}

namespace detail {

// Periodic box mean over a window x window neighbourhood; preserves the total.
inline std::vector<double> box_smooth_periodic(std::span<const double> in, std::size_t height,
                                               std::size_t width, std::size_t window) {
  std::vector<double> tmp(in.size()), out(in.size());
  const std::ptrdiff_t lo = -static_cast<std::ptrdiff_t>(window / 2);
  const std::ptrdiff_t hi = lo + static_cast<std::ptrdiff_t>(window);
  const auto wrap = [](std::ptrdiff_t i, std::size_t n) {
    const auto m = static_cast<std::ptrdiff_t>(n);
    return static_cast<std::size_t>(((i % m) + m) % m);
  };
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      double acc = 0.0;
      for (auto d = lo; d < hi; ++d) acc += in[r * width + wrap(std::ptrdiff_t(c) + d, width)];
      tmp[r * width + c] = acc / double(window);
    }
  }
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      double acc = 0.0;
      for (auto d = lo; d < hi; ++d) acc += tmp[wrap(std::ptrdiff_t(r) + d, height) * width + c];
      out[r * width + c] = acc / double(window);
    }
  }
  return out;
}

}  // namespace detail

inline constexpr std::size_t kRiskSmoothingWindow = 8;

// Per-pixel SURE of D(noisy; band_sds) under Haar-colored circular Gaussian
// noise: |D(y) - y|^2 - var + 2 div, where div is the diagonal of the
// covariance-weighted Jacobian from one colored Monte Carlo probe, box-smoothed.
template <ColoredDenoiser D>
RiskMap sure_risk_map(const ImageGrid& noisy, D& denoiser, const BandVector& band_sds,
                      std::uint64_t probe_seed) {
  require_band_sds(band_sds);
  const SubbandLayout layout(noisy.height(), noisy.width());
  const std::size_t n = noisy.size();
  const ImageGrid out = denoiser.denoise(noisy, band_sds);
  require_same_shape(noisy, out, "sure_risk_map");

  const ImageGrid probe = synthesize_colored_noise(layout, band_sds, probe_seed);
  double peak = 0.0;
  for (const auto& v : noisy.values()) peak = std::max(peak, std::abs(v));
  const double eta = std::max(peak / 1000.0, 1e-8);
  ImageGrid shifted = noisy;
  for (std::size_t i = 0; i < n; ++i) shifted[i] += eta * probe[i];
  const ImageGrid moved = denoiser.denoise(shifted, band_sds);
  require_same_shape(noisy, moved, "sure_risk_map");

  std::vector<double> divergence(n);
  for (std::size_t i = 0; i < n; ++i) {
    divergence[i] = (std::conj(probe[i]) * (moved[i] - out[i])).real() / eta;
  }
  const auto smoothed =
      detail::box_smooth_periodic(divergence, noisy.height(), noisy.width(), kRiskSmoothingWindow);

  const double pixel_var = haar_colored_pixel_variance(layout, band_sds);
  RiskMap map{noisy.height(), noisy.width(), std::vector<double>(n), 0.0};
  double residual = 0.0, div_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double res = std::norm(out[i] - noisy[i]);
    map.values[i] = res - pixel_var + 2.0 * smoothed[i];
    residual += res;
    div_total += divergence[i];
  }
  map.mean_risk = (residual - double(n) * pixel_var + 2.0 * div_total) / double(n);
  return map;
}

}  // namespace dvdamp
