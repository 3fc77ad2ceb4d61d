#include <gtest/gtest.h>

#include "dvdamp/dvdamp.hpp"
#include "dvdamp/phantom.hpp"
#include "test_support.hpp"

using namespace dvdamp;

namespace {

SamplingScheme scheme_at(std::size_t n, double rate, std::uint64_t seed) {
  SamplingParameters p;
  p.target_rate = rate;
  p.seed = seed;
  return make_variable_density_scheme(n, n, p);
}

BandVector filled(double v) { return ReconstructionConfig::filled(v); }

struct ZeroDenoiser {
  ImageGrid denoise(const ImageGrid& x, const BandVector&) const { return ImageGrid(x.height(), x.width()); }
  DenoiserDescriptor descriptor() const { return {"zero", {}}; }
};

// Adds fresh unit-variance white noise on every call.
struct NoiseInjector {
  std::uint64_t calls = 0;
  ImageGrid denoise(const ImageGrid& x, const BandVector&) {
    Rng rng(derive_seed(99, calls++));
    ImageGrid out = x;
    for (auto& v : out.values()) v += Complex(standard_normal(rng), standard_normal(rng)) * 20.0;
    return out;
  }
  DenoiserDescriptor descriptor() const { return {"noise-injector", {}}; }
};

// Wavelet-domain complex soft thresholding written directly on coefficients.
std::vector<Complex> soft_band_map(const WaveletPyramid& r, const BandVector& lambda) {
  std::vector<Complex> out(r.coefficients().begin(), r.coefficients().end());
  for (std::size_t s = 1; s < kNumBands; ++s) {
    r.layout().for_each_in_band(s, [&](std::size_t i) {
      const double m = std::abs(out[i]);
      out[i] = m <= lambda[s] ? Complex(0.0) : out[i] * (1.0 - lambda[s] / m);
    });
  }
  return out;
}

}  // namespace

TEST(Residual, ZeroEstimateGivesMeasurements) {
  const auto x = shepp_logan(32, 32);
  const auto s = scheme_at(32, 0.5, 1);
  const auto y = measure(x, s, 2.0, 3);
  const auto z = compute_residual(y, s, WaveletPyramid(SubbandLayout(32, 32)));
  EXPECT_EQ(z, y.values);
}

TEST(Residual, NoiselessFixedPoint) {
  const auto x = shepp_logan(64, 64);
  const auto s = scheme_at(64, 0.25, 1);
  const auto y = measure(x, s, 0.0, 3);
  const auto z = compute_residual(y, s, haar_forward(x));
  double worst = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!s.omega[i]) {
      EXPECT_EQ(z[i], Complex(0.0));
    }
    worst = std::max(worst, std::abs(z[i]));
  }
  EXPECT_LT(worst, 1e-9);
  const auto tau = predict_tau(z, s, build_spectral_energy(64, 64), 0.0);
  for (double t : tau) EXPECT_LT(t, 1e-15);
}

TEST(Residual, MatchesDenseEvaluation) {
  const std::size_t h = 16, n = h * h;
  const auto s = scheme_at(h, 0.5, 4);
  const auto a = oracle::dense_fourier_synthesis(h, h);
  KSpaceMeasurement y{oracle::random_image(h, h, 5), 0.5};
  for (std::size_t f = 0; f < n; ++f) if (!s.omega[f]) y.values[f] = 0.0;
  const auto r = oracle::random_pyramid(h, h, 6);
  const auto z = compute_residual(y, s, r);
  std::vector<Complex> dense(n);
  for (std::size_t f = 0; f < n; ++f) {
    Complex acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += a[f * n + j] * r[j];
    dense[f] = s.omega[f] ? y.values[f] - acc : Complex(0.0);
  }
  EXPECT_LT(oracle::max_abs_diff(z.values(), dense), 1e-10);
  EXPECT_NEAR(std::sqrt(squared_norm(z.values())), std::sqrt(squared_norm(dense)), 1e-10);
}

TEST(PredictTau, FullSamplingGivesNoiseVariance) {
  const auto s = scheme_at(32, 1.0, 0);
  const auto z = oracle::random_image(32, 32, 1);
  const auto tau = predict_tau(z, s, build_spectral_energy(32, 32), 1.7);
  for (double t : tau) EXPECT_NEAR(t, 1.7 * 1.7, 1e-12);
}

TEST(PredictTau, ZeroResidualNoiselessIsZero) {
  const auto s = scheme_at(32, 0.25, 0);
  const auto tau = predict_tau(ImageGrid(32, 32), s, build_spectral_energy(32, 32), 0.0);
  for (double t : tau) EXPECT_EQ(t, 0.0);
}

TEST(PredictTau, MatchesDenseEvaluation) {
  const std::size_t h = 16, n = h * h;
  const auto s = scheme_at(h, 0.5, 8);
  const auto a = oracle::dense_fourier_synthesis(h, h);
  auto z = oracle::random_image(h, h, 9, true, 3.0);
  for (std::size_t f = 0; f < n; ++f) if (!s.omega[f]) z[f] = 0.0;
  const double sigma = 0.8;
  const auto tau = predict_tau(z, s, build_spectral_energy(h, h), sigma);
  const SubbandLayout layout(h, h);
  for (std::size_t j = 0; j < n; ++j) {
    double dense = 0.0;
    for (std::size_t f = 0; f < n; ++f) {
      if (!s.omega[f]) continue;
      const double pinv = 1.0 / s.density[f];
      dense += std::norm(a[f * n + j]) * pinv * ((pinv - 1.0) * std::norm(z[f]) + sigma * sigma);
    }
    EXPECT_NEAR(tau[layout.band_of(j / h, j % h)], dense, 1e-9 * std::max(1.0, dense));
  }
}

TEST(Divergence, IdentityIsOne) {
  const auto r = oracle::random_pyramid(32, 32, 1);
  IdentityDenoiser d;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    DivergenceProbeConfig cfg;
    cfg.seed = seed;
    const auto est = estimate_divergence(d, r, filled(1.0), cfg);
    for (double a : est.alpha) EXPECT_NEAR(a, 1.0, 1e-6);
  }
}

TEST(Divergence, ZeroDenoiserIsZero) {
  ZeroDenoiser d;
  const auto est = estimate_divergence(d, oracle::random_pyramid(32, 32, 2), filled(1.0), {});
  for (double a : est.alpha) EXPECT_EQ(a, 0.0);
}

TEST(Divergence, EtaFloorForZeroInput) {
  IdentityDenoiser d;
  const WaveletPyramid r(SubbandLayout(16, 16));
  const auto est = estimate_divergence(d, r, filled(1.0), {});
  EXPECT_EQ(est.eta, 1e-8);
  for (double a : est.alpha) EXPECT_NEAR(a, 1.0, 1e-6);
}

TEST(Divergence, SoftThresholdMatchesAnalyticAverage) {
  const std::size_t n = 64;
  for (bool complex_data : {false, true}) {
    const auto img = oracle::random_image(n, n, 3, complex_data, 10.0);
    const auto r = haar_forward(img);
    BandVector sds{};
    for (std::size_t s = 0; s < kNumBands; ++s) sds[s] = 4.0 + double(s);
    // Complex soft threshold at lambda: average of the real and imaginary
    // partials is 1 - lambda / (2|c|) where |c| > lambda, else 0.
    BandVector analytic{};
    analytic[0] = 1.0;
    for (std::size_t s = 1; s < kNumBands; ++s) {
      double acc = 0.0;
      for (const auto& c : r.extract_band(s)) {
        const double m = std::abs(c);
        if (m > sds[s]) acc += 1.0 - sds[s] / (2.0 * m);
      }
      analytic[s] = acc / double(r.layout().band(s).count());
    }
    SoftThresholdDenoiser d;
    BandVector mean{};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      DivergenceProbeConfig cfg;
      cfg.seed = seed;
      const auto est = estimate_divergence(d, r, sds, cfg);
      for (std::size_t s = 0; s < kNumBands; ++s) mean[s] += est.alpha[s] / 10.0;
    }
    for (std::size_t s = 0; s < kNumBands; ++s) {
      EXPECT_NEAR(mean[s], analytic[s], 0.05) << "band " << s << (complex_data ? " complex" : " real");
    }
  }
}

TEST(Divergence, ProbesPerBandAverages) {
  IdentityDenoiser d;
  DivergenceProbeConfig cfg;
  cfg.probes_per_band = 3;
  const auto est = estimate_divergence(d, oracle::random_pyramid(16, 16, 4), filled(1.0), cfg);
  for (double a : est.alpha) EXPECT_NEAR(a, 1.0, 1e-6);
}

TEST(Onsager, SpecialCasesAndMixedBands) {
  const auto w = oracle::random_pyramid(32, 32, 1);
  const auto r = oracle::random_pyramid(32, 32, 2);
  EXPECT_EQ(onsager_update(w, r, filled(0.0)), w);
  const auto half = onsager_update(w, r, filled(0.5));
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(std::abs(half[i] - (2.0 * w[i] - r[i])), 0.0, 1e-12);

  BandVector alpha{};
  for (std::size_t s = 0; s < kNumBands; ++s) alpha[s] = -0.9 + 0.14 * double(s);
  const auto mixed = onsager_update(w, r, alpha);
  const SubbandLayout& layout = w.layout();
  for (std::size_t row = 0; row < 32; ++row) {
    for (std::size_t col = 0; col < 32; ++col) {
      const double a = alpha[layout.band_of(row, col)];
      const Complex expected = (w(row, col) - a * r(row, col)) / (1.0 - a);
      EXPECT_EQ(mixed(row, col), expected);
    }
  }
  EXPECT_THROW(onsager_update(w, r, filled(1.0)), OnsagerDivisionError);
}

TEST(Config, ValidationRejectsBadValues) {
  ReconstructionConfig c;
  EXPECT_NO_THROW(c.validate());
  c.max_iterations = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.gamma[3] = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.divergence.eta_scale = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(RunDvdamp, NoiselessFullSamplingIdentityRecoversImage) {
  const auto x = shepp_logan(64, 64);
  const auto s = scheme_at(64, 1.0, 0);
  const auto y = measure(x, s, 0.0, 0);
  IdentityDenoiser d;
  ReconstructionConfig cfg;
  cfg.max_iterations = 1;
  const auto res = run_dvdamp(y, s, d, cfg);
  EXPECT_LT(oracle::max_abs_diff(res.image.values(), x.values()), 1e-10);
  EXPECT_EQ(res.trace.output_iteration, 0);
}

TEST(RunDvdamp, NoiseInjectingDenoiserTriggersStop) {
  const auto x = shepp_logan(64, 64);
  const auto s = scheme_at(64, 0.25, 1);
  const auto y = measure(x, s, snr_to_noise_sd(x, 40.0, s), 2);
  NoiseInjector d;
  const auto res = run_dvdamp(y, s, d, ReconstructionConfig{}, &x);
  ASSERT_EQ(res.trace.stop_reason, StopReason::tau_increase);
  const auto& last = res.trace.iterations.back();
  EXPECT_LE(last.k, 3);
  EXPECT_FALSE(last.denoised);
  EXPECT_FALSE(last.w_hat.has_value());
  EXPECT_GT(last.tau_l1, res.trace.iterations[res.trace.iterations.size() - 2].tau_l1);
  EXPECT_EQ(res.trace.output_iteration, last.k - 1);
  EXPECT_EQ(res.image, haar_inverse(*res.trace.iterations[last.k - 1].w_hat));
}

TEST(RunDvdamp, NonfiniteTauAtFirstIterationFallsBack) {
  const auto x = shepp_logan(32, 32);
  const auto s = scheme_at(32, 0.5, 1);
  auto y = measure(x, s, 1.0, 2);
  y.values[0] = Complex(std::nan(""), 0.0);
  SoftThresholdDenoiser d;
  const auto res = run_dvdamp(y, s, d, ReconstructionConfig{});
  EXPECT_EQ(res.trace.stop_reason, StopReason::nonfinite_tau);
  EXPECT_EQ(res.trace.output_iteration, -1);
  ASSERT_EQ(res.trace.warnings.size(), 1u);
  EXPECT_EQ(res.trace.iterations.size(), 1u);
}

TEST(RunDvdamp, TraceRecordsDiagnosticsAndBoundedAlpha) {
  const auto x = shepp_logan(64, 64);
  const auto s = scheme_at(64, 0.25, 3);
  const auto y = measure(x, s, snr_to_noise_sd(x, 30.0, s), 4);
  SoftThresholdDenoiser d;
  const auto res = run_dvdamp(y, s, d, ReconstructionConfig{}, &x);
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& rec : res.trace.iterations) {
    ASSERT_TRUE(rec.empirical_variance.has_value());
    ASSERT_TRUE(rec.r.has_value() && rec.z.has_value() && rec.r_tilde.has_value());
    if (!rec.denoised) continue;
    EXPECT_TRUE(rec.psnr.has_value());
    EXPECT_LE(rec.tau_l1, prev);
    prev = rec.tau_l1;
    for (double a : rec.alpha) {
      EXPECT_GE(a, -0.95);
      EXPECT_LE(a, 0.95);
    }
    for (double t : rec.tau) EXPECT_GE(t, 0.0);
  }
  EXPECT_EQ(res.trace.denoiser.name, "soft");
}

TEST(RunDvdamp, IdenticalSeedsGiveIdenticalTraces) {
  const auto x = shepp_logan(64, 64);
  const auto s = scheme_at(64, 0.25, 5);
  const auto y = measure(x, s, snr_to_noise_sd(x, 40.0, s), 6);
  ReconstructionConfig cfg;
  cfg.divergence.seed = 77;
  SoftThresholdDenoiser d;
  const auto a = run_dvdamp(y, s, d, cfg, &x);
  const auto b = run_dvdamp(y, s, d, cfg, &x);
  ASSERT_EQ(a.trace.iterations.size(), b.trace.iterations.size());
  for (std::size_t k = 0; k < a.trace.iterations.size(); ++k) {
    const auto &p = a.trace.iterations[k], &q = b.trace.iterations[k];
    EXPECT_EQ(p.tau, q.tau);
    EXPECT_EQ(p.alpha_raw, q.alpha_raw);
    EXPECT_EQ(*p.r, *q.r);
    EXPECT_EQ(p.psnr, q.psnr);
  }
  EXPECT_EQ(a.image, b.image);
  cfg.divergence.seed = 78;
  const auto c = run_dvdamp(y, s, d, cfg, &x);
  EXPECT_NE(c.trace.iterations[0].alpha_raw, a.trace.iterations[0].alpha_raw);
}

TEST(RunDvdamp, PerBandGammaScalesBandSds) {
  const auto x = shepp_logan(32, 32);
  const auto s = scheme_at(32, 0.5, 1);
  const auto y = measure(x, s, snr_to_noise_sd(x, 30.0, s), 2);
  ReconstructionConfig cfg;
  cfg.max_iterations = 1;
  for (std::size_t b = 0; b < kNumBands; ++b) cfg.gamma[b] = 0.1 * double(b + 1);
  SoftThresholdDenoiser d;
  const auto res = run_dvdamp(y, s, d, cfg);
  const auto& rec = res.trace.iterations[0];
  for (std::size_t b = 0; b < kNumBands; ++b) {
    EXPECT_DOUBLE_EQ(rec.band_sds[b], std::sqrt(cfg.gamma[b] * rec.tau[b]));
  }
}

// Straight-line transcription of the algorithm with wavelet-domain soft
// thresholding, sharing only the transforms and the probe seed contract.
TEST(RunDvdamp, MatchesStraightLineTranscription) {
  const std::size_t h = 32, n = h * h;
  const auto x = shepp_logan(h, h);
  const auto s = scheme_at(h, 0.4, 11);
  const auto y = measure(x, s, snr_to_noise_sd(x, 35.0, s), 12);
  ReconstructionConfig cfg;
  cfg.max_iterations = 3;
  cfg.divergence.seed = 5;
  SoftThresholdDenoiser d;
  const auto res = run_dvdamp(y, s, d, cfg);
  ASSERT_EQ(res.trace.iterations.size(), 3u);

  const SubbandLayout layout(h, h);
  std::array<std::vector<double>, kNumBands> spectra;
  for (std::size_t b = 0; b < kNumBands; ++b) {
    WaveletPyramid e(layout);
    e(layout.band(b).row_begin, layout.band(b).col_begin) = 1.0;
    const auto fe = oracle::naive_dft2(haar_inverse(e));
    for (std::size_t f = 0; f < n; ++f) spectra[b].push_back(std::norm(fe[f]));
  }

  WaveletPyramid rt(layout);
  for (int k = 0; k < 3; ++k) {
    const auto frt = fft2(haar_inverse(rt));
    ImageGrid z(h, h), pz(h, h);
    for (std::size_t f = 0; f < n; ++f) {
      z[f] = s.omega[f] ? y.values[f] - frt[f] : Complex(0.0);
      pz[f] = z[f] / s.density[f];
    }
    WaveletPyramid r = haar_forward(ifft2(pz));
    for (std::size_t i = 0; i < n; ++i) r[i] += rt[i];
    BandVector tau{}, lambda{};
    for (std::size_t b = 0; b < kNumBands; ++b) {
      for (std::size_t f = 0; f < n; ++f) {
        if (!s.omega[f]) continue;
        const double pinv = 1.0 / s.density[f];
        tau[b] += spectra[b][f] * pinv * ((pinv - 1.0) * std::norm(z[f]) + y.noise_sd * y.noise_sd);
      }
      lambda[b] = std::sqrt(0.75 * tau[b]);
    }
    const auto& rec = res.trace.iterations[k];
    for (std::size_t b = 0; b < kNumBands; ++b) EXPECT_NEAR(rec.tau[b], tau[b], 1e-8 * std::max(1.0, tau[b]));
    EXPECT_LT(oracle::max_abs_diff(rec.r->coefficients(), r.coefficients()), 1e-8);

    const auto w_hat = soft_band_map(r, lambda);
    double peak = 0.0;
    for (const auto& c : r.coefficients()) peak = std::max(peak, std::abs(c));
    const double eta = std::max(peak / 1000.0, 1e-8);
    BandVector alpha{};
    const std::uint64_t iter_seed = derive_seed(cfg.divergence.seed, std::uint64_t(k));
    for (std::size_t b = 0; b < kNumBands; ++b) {
      Rng rng(derive_seed(iter_seed, b, 0));
      std::vector<std::size_t> idx;
      std::vector<double> br, bi;
      layout.for_each_in_band(b, [&](std::size_t i) {
        idx.push_back(i);
        br.push_back(standard_normal(rng));
        bi.push_back(standard_normal(rng));
      });
      double parts = 0.0;
      for (int comp = 0; comp < 2; ++comp) {
        const auto& probe = comp == 0 ? br : bi;
        WaveletPyramid pert = r;
        double energy = 0.0, inner = 0.0;
        for (std::size_t q = 0; q < idx.size(); ++q) {
          pert[idx[q]] += comp == 0 ? Complex(eta * probe[q], 0) : Complex(0, eta * probe[q]);
          energy += probe[q] * probe[q];
        }
        const auto moved = soft_band_map(pert, lambda);
        for (std::size_t q = 0; q < idx.size(); ++q) {
          const Complex diff = moved[idx[q]] - w_hat[idx[q]];
          inner += probe[q] * (comp == 0 ? diff.real() : diff.imag());
        }
        parts += inner / (eta * energy);
      }
      alpha[b] = std::clamp(0.5 * parts, -0.95, 0.95);
      EXPECT_NEAR(rec.alpha[b], alpha[b], 1e-8) << "k=" << k << " band " << b;
    }
    WaveletPyramid next(layout);
    for (std::size_t b = 0; b < kNumBands; ++b) {
      layout.for_each_in_band(b, [&](std::size_t i) { next[i] = (w_hat[i] - alpha[b] * r[i]) / (1.0 - alpha[b]); });
    }
    rt = next;
  }
}
