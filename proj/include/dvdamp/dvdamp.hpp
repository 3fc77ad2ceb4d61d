#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dvdamp/core.hpp"
#include "dvdamp/denoisers.hpp"
#include "dvdamp/fft.hpp"
#include "dvdamp/forward_model.hpp"
#include "dvdamp/metrics.hpp"
#include "dvdamp/random.hpp"
#include "dvdamp/wavelet.hpp"

namespace dvdamp {

struct DivergenceProbeConfig {
  double eta_scale = 1.0 / 1000.0;
  double eta_floor = 1e-8;
  int probes_per_band = 1;
  std::uint64_t seed = 0;
};

struct ReconstructionConfig {
  int max_iterations = 10;
  BandVector gamma = filled(0.75);
  DivergenceProbeConfig divergence;
  bool stop_on_tau_increase = true;
  double alpha_limit = 0.95;
  // Keep r~, z, r and w^ of every iteration in the trace.
  bool record_states = true;

  static BandVector filled(double value) {
    BandVector v;
    v.fill(value);
    return v;
  }

  void validate() const {
    if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
    for (double g : gamma) {
      if (!(g > 0.0) || !std::isfinite(g)) throw std::invalid_argument("gamma must be positive");
    }
    if (!(divergence.eta_scale > 0.0)) throw std::invalid_argument("eta_scale must be positive");
    if (!(divergence.eta_floor > 0.0)) throw std::invalid_argument("eta_floor must be positive");
    if (divergence.probes_per_band < 1) throw std::invalid_argument("probes_per_band must be >= 1");
    if (!(alpha_limit > 0.0 && alpha_limit < 1.0)) {
      throw std::invalid_argument("alpha_limit must lie in (0, 1)");
    }
  }
};

inline double l1_norm(const BandVector& v) {
  double acc = 0.0;
  for (double x : v) acc += std::abs(x);
  return acc;
}

// z = y - M_omega F Psi^H r~.
inline KSpaceResidual compute_residual(const KSpaceMeasurement& y, const SamplingScheme& scheme,
                                       const WaveletPyramid& r_tilde) {
  require_scheme_matches(scheme, y.values.height(), y.values.width(), "compute_residual");
  require_scheme_matches(scheme, r_tilde.height(), r_tilde.width(), "compute_residual");
  ImageGrid z = fft2(haar_inverse(r_tilde));
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = scheme.omega[i] ? y.values[i] - z[i] : Complex{};
  }
  return z;
}

// tau_s = sum_f S_s(f) M(f) P(f)^-1 [(P(f)^-1 - 1) |z(f)|^2 + noise_sd^2], clamped at 0.
inline BandVector predict_tau(const KSpaceResidual& z, const SamplingScheme& scheme,
                              const SpectralEnergyTable& energy, double noise_sd) {
  require_scheme_matches(scheme, z.height(), z.width(), "predict_tau");
  if (!(energy.layout() == SubbandLayout(z.height(), z.width()))) {
    throw ShapeMismatchError("predict_tau: spectral table does not match the residual");
  }
  scheme.validate();
  const double noise_var = noise_sd * noise_sd;
  std::vector<double> weight(z.size(), 0.0);
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!scheme.omega[i]) continue;
    const double inv_p = 1.0 / scheme.density[i];
    weight[i] = inv_p * ((inv_p - 1.0) * std::norm(z[i]) + noise_var);
  }
  BandVector tau{};
  for (std::size_t s = 0; s < kNumBands; ++s) {
    const auto row = energy.row(s);
    double acc = 0.0;
    for (std::size_t i = 0; i < weight.size(); ++i) acc += row[i] * weight[i];
    tau[s] = acc < 0.0 ? 0.0 : acc;
  }
  return tau;
}

inline BandVector band_sds_from_tau(const BandVector& tau, const BandVector& gamma) {
  BandVector sds{};
  for (std::size_t s = 0; s < kNumBands; ++s) sds[s] = std::sqrt(gamma[s] * tau[s]);
  return sds;
}

// g(r) = Psi D(Psi^H r; band_sds).
template <ColoredDenoiser D>
WaveletPyramid denoise_in_wavelet_domain(D& denoiser, const WaveletPyramid& r,
                                         const BandVector& band_sds) {
  const ImageGrid noisy = haar_inverse(r);
  ImageGrid out = denoiser.denoise(noisy, band_sds);
  require_same_shape(noisy, out, "denoiser output");
  return haar_forward(out);
}

inline double probe_step(const WaveletPyramid& r, const DivergenceProbeConfig& config) {
  double peak = 0.0;
  for (const auto& c : r.coefficients()) peak = std::max(peak, std::abs(c));
  return std::max(config.eta_scale * peak, config.eta_floor);
}

struct DivergenceEstimate {
  BandVector alpha{};
  double eta = 0.0;
};

// Monte Carlo average partial derivative of g per subband. Each band gets its
// own Gaussian probe b_s; the real and imaginary parts are perturbed separately
// and their finite-difference estimates averaged. Each estimate is normalised
// by the probe's realised energy on the band (E = J_s), which makes it exact
// for any operator that acts as a scalar on the band.
template <ColoredDenoiser D>
DivergenceEstimate estimate_divergence(D& denoiser, const WaveletPyramid& r,
                                       const BandVector& band_sds,
                                       const DivergenceProbeConfig& config,
                                       const WaveletPyramid* g_of_r = nullptr) {
  DivergenceEstimate est;
  est.eta = probe_step(r, config);
  WaveletPyramid base_output;
  if (g_of_r == nullptr) {
    base_output = denoise_in_wavelet_domain(denoiser, r, band_sds);
    g_of_r = &base_output;
  }
  const auto& layout = r.layout();
  for (std::size_t s = 0; s < kNumBands; ++s) {
    double acc = 0.0;
    for (int p = 0; p < config.probes_per_band; ++p) {
      Rng rng(derive_seed(config.seed, s, static_cast<std::uint64_t>(p)));
      std::vector<std::size_t> idx;
      std::vector<double> b_re, b_im;
      idx.reserve(layout.band(s).count());
      layout.for_each_in_band(s, [&](std::size_t i) {
        idx.push_back(i);
        b_re.push_back(standard_normal(rng));
        b_im.push_back(standard_normal(rng));
      });

      double part[2] = {0.0, 0.0};
      for (int component = 0; component < 2; ++component) {
        const auto& b = component == 0 ? b_re : b_im;
        WaveletPyramid perturbed = r;
        double energy = 0.0;
        for (std::size_t k = 0; k < idx.size(); ++k) {
          perturbed[idx[k]] += component == 0 ? Complex(est.eta * b[k], 0.0)
                                              : Complex(0.0, est.eta * b[k]);
          energy += b[k] * b[k];
        }
        const WaveletPyramid moved = denoise_in_wavelet_domain(denoiser, perturbed, band_sds);
        double inner = 0.0;
        for (std::size_t k = 0; k < idx.size(); ++k) {
          const Complex diff = moved[idx[k]] - (*g_of_r)[idx[k]];
          inner += b[k] * (component == 0 ? diff.real() : diff.imag());
        }
        part[component] = energy > 0.0 ? inner / (est.eta * energy) : 0.0;
      }
      acc += 0.5 * (part[0] + part[1]);
    }
    est.alpha[s] = acc / config.probes_per_band;
  }
  return est;
}

class OnsagerDivisionError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// r~_{k+1} = (w^ - alpha (.) r) / (1 - alpha), alpha constant within each band.
inline WaveletPyramid onsager_update(const WaveletPyramid& w_hat, const WaveletPyramid& r,
                                     const BandVector& alpha) {
  require_same_layout(w_hat, r, "onsager_update");
  WaveletPyramid out(r.layout());
  for (std::size_t s = 0; s < kNumBands; ++s) {
    const double denom = 1.0 - alpha[s];
    if (!(std::abs(denom) >= 1e-12)) {
      throw OnsagerDivisionError("1 - alpha is numerically zero in band " + std::to_string(s));
    }
    r.layout().for_each_in_band(
        s, [&](std::size_t i) { out[i] = (w_hat[i] - alpha[s] * r[i]) / denom; });
  }
  return out;
}

enum class StopReason { completed, tau_increase, nonfinite_tau };

inline std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::completed: return "completed";
    case StopReason::tau_increase: return "tau_increase";
    case StopReason::nonfinite_tau: return "nonfinite_tau";
  }
  return "?";
}

struct IterationRecord {
  int k = 0;
  BandVector tau{};
  double tau_l1 = 0.0;
  // False when the iteration stopped at the tau check (no denoising happened).
  bool denoised = false;
  BandVector band_sds{};
  BandVector alpha_raw{};
  BandVector alpha{};
  double eta = 0.0;
  std::optional<double> psnr;
  std::optional<BandVector> empirical_variance;
  // Present when record_states is set; w_hat only for denoised iterations.
  std::optional<WaveletPyramid> r_tilde;
  std::optional<KSpaceResidual> z;
  std::optional<WaveletPyramid> r;
  std::optional<WaveletPyramid> w_hat;
};

struct IterationTrace {
  std::vector<IterationRecord> iterations;
  StopReason stop_reason = StopReason::completed;
  // Iteration whose w^ produced the returned image; -1 for the zero-filled fallback.
  int output_iteration = -1;
  std::vector<std::string> warnings;
  DenoiserDescriptor denoiser;
};

struct ReconstructionResult {
  ImageGrid image;
  IterationTrace trace;
};

template <ColoredDenoiser D>
ReconstructionResult run_dvdamp(const KSpaceMeasurement& y, const SamplingScheme& scheme,
                                D& denoiser, const ReconstructionConfig& config,
                                const ImageGrid* ground_truth = nullptr) {
  config.validate();
  require_scheme_matches(scheme, y.values.height(), y.values.width(), "run_dvdamp");
  scheme.validate();
  const std::size_t height = scheme.height, width = scheme.width;
  const SubbandLayout layout(height, width);
  const SpectralEnergyTable energy = build_spectral_energy(height, width);
  std::optional<WaveletPyramid> w_true;
  if (ground_truth != nullptr) {
    require_scheme_matches(scheme, ground_truth->height(), ground_truth->width(), "ground truth");
    w_true = haar_forward(*ground_truth);
  }

  ReconstructionResult result;
  auto& trace = result.trace;
  trace.denoiser = denoiser.descriptor();

  WaveletPyramid r_tilde(layout);
  std::optional<WaveletPyramid> first_r;
  std::optional<WaveletPyramid> last_w_hat;
  double previous_tau_l1 = std::numeric_limits<double>::infinity();

  for (int k = 0; k < config.max_iterations; ++k) {
    IterationRecord rec;
    rec.k = k;
    const KSpaceResidual z = compute_residual(y, scheme, r_tilde);
    WaveletPyramid r = density_compensated_backproject(z, scheme);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += r_tilde[i];
    if (!first_r) first_r = r;

    rec.tau = predict_tau(z, scheme, energy, y.noise_sd);
    rec.tau_l1 = l1_norm(rec.tau);
    if (w_true) {
      BandVector emp{};
      for (std::size_t s = 0; s < kNumBands; ++s) {
        double acc = 0.0;
        layout.for_each_in_band(s, [&](std::size_t i) { acc += std::norm(r[i] - (*w_true)[i]); });
        emp[s] = acc / static_cast<double>(layout.band(s).count());
      }
      rec.empirical_variance = emp;
    }
    if (config.record_states) {
      rec.r_tilde = r_tilde;
      rec.z = z;
      rec.r = r;
    }

    const bool finite = std::isfinite(rec.tau_l1);
    if (!finite || (config.stop_on_tau_increase && rec.tau_l1 > previous_tau_l1)) {
      trace.stop_reason = finite ? StopReason::tau_increase : StopReason::nonfinite_tau;
      trace.iterations.push_back(std::move(rec));
      break;
    }
    previous_tau_l1 = rec.tau_l1;

    rec.band_sds = band_sds_from_tau(rec.tau, config.gamma);
    WaveletPyramid w_hat = denoise_in_wavelet_domain(denoiser, r, rec.band_sds);

    DivergenceProbeConfig probes = config.divergence;
    probes.seed = derive_seed(config.divergence.seed, static_cast<std::uint64_t>(k));
    const DivergenceEstimate div = estimate_divergence(denoiser, r, rec.band_sds, probes, &w_hat);
    rec.eta = div.eta;
    rec.alpha_raw = div.alpha;
    for (std::size_t s = 0; s < kNumBands; ++s) {
      rec.alpha[s] = std::clamp(div.alpha[s], -config.alpha_limit, config.alpha_limit);
    }
    rec.denoised = true;
    if (ground_truth != nullptr) rec.psnr = psnr(*ground_truth, haar_inverse(w_hat));

    WaveletPyramid next = onsager_update(w_hat, r, rec.alpha);
    if (config.record_states) rec.w_hat = w_hat;
    last_w_hat = std::move(w_hat);
    trace.output_iteration = k;
    trace.iterations.push_back(std::move(rec));
    r_tilde = std::move(next);
  }

  if (last_w_hat) {
    result.image = haar_inverse(*last_w_hat);
  } else {
    trace.warnings.push_back(
        "stopped before the first denoising step; returning the density-compensated "
        "zero-filled estimate");
    result.image = haar_inverse(*first_r);
  }
  return result;
}

}  // namespace dvdamp
