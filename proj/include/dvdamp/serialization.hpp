#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dvdamp/diagnostics.hpp"
#include "dvdamp/dvdamp.hpp"
#include "dvdamp/forward_model.hpp"
#include "dvdamp/wavelet.hpp"

namespace dvdamp {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace base64 {

inline constexpr std::string_view kAlphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    for (int k = 3; k >= 0; --k) out.push_back(kAlphabet[(v >> (6 * k)) & 63]);
  }
  if (const std::size_t rest = bytes.size() - i; rest > 0) {
    std::uint32_t v = bytes[i] << 16;
    if (rest == 2) v |= bytes[i + 1] << 8;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(rest == 2 ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

inline std::vector<std::uint8_t> decode(std::string_view text) {
  std::array<int, 256> lookup;
  lookup.fill(-1);
  for (std::size_t k = 0; k < kAlphabet.size(); ++k) lookup[static_cast<unsigned char>(kAlphabet[k])] = int(k);
  if (text.size() % 4 != 0) throw FormatError("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t v = 0;
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      int d;
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        d = 0;
        ++pad;
      } else if (pad > 0 || (d = lookup[static_cast<unsigned char>(c)]) < 0) {
        throw FormatError("invalid base64 character");
      }
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

}  // namespace base64

inline std::vector<std::uint8_t> doubles_to_le_bytes(std::span<const double> values) {
  std::vector<std::uint8_t> out;
  out.reserve(values.size() * 8);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
  }
  return out;
}

inline std::vector<double> le_bytes_to_doubles(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 8 != 0) throw FormatError("float64 blob length is not a multiple of 8");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= std::uint64_t{bytes[8 * i + k]} << (8 * k);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

// ---- sampling schemes ------------------------------------------------------

inline constexpr std::string_view kSchemeFormat = "dvdamp-sampling-scheme";

inline nlohmann::json scheme_to_json(const SamplingScheme& scheme) {
  const auto& p = scheme.params;
  return {{"format", kSchemeFormat},
          {"version", 1},
          {"height", scheme.height},
          {"width", scheme.width},
          {"target_rate", p.target_rate},
          {"density_exponent", p.density_exponent},
          {"fully_sampled_radius", p.fully_sampled_radius},
          {"p_min", p.p_min},
          {"seed", p.seed},
          {"sample_count", scheme.sample_count()},
          {"omega", base64::encode(scheme.omega)},
          {"density", base64::encode(doubles_to_le_bytes(scheme.density))}};
}

inline SamplingScheme scheme_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kSchemeFormat) throw FormatError("not a sampling scheme");
    if (j.at("version").get<int>() != 1) throw FormatError("unsupported sampling scheme version");
    SamplingScheme s;
    s.height = j.at("height").get<std::size_t>();
    s.width = j.at("width").get<std::size_t>();
    s.params.target_rate = j.at("target_rate").get<double>();
    s.params.density_exponent = j.at("density_exponent").get<double>();
    s.params.fully_sampled_radius = j.at("fully_sampled_radius").get<double>();
    s.params.p_min = j.at("p_min").get<double>();
    s.params.seed = j.at("seed").get<std::uint64_t>();
    s.omega = base64::decode(j.at("omega").get<std::string>());
    s.density = le_bytes_to_doubles(base64::decode(j.at("density").get<std::string>()));
    s.validate();
    if (j.contains("sample_count") && j["sample_count"].get<std::size_t>() != s.sample_count()) {
      throw FormatError("sample_count does not match omega");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid sampling scheme: ") + e.what());
  } catch (const SchemeInvariantError& e) {
    throw FormatError(std::string("invalid sampling scheme: ") + e.what());
  }
}

// ---- traces ----------------------------------------------------------------

inline nlohmann::json band_json(const BandVector& v) { return nlohmann::json(v); }

inline nlohmann::json trace_to_json(const IterationTrace& trace) {
  nlohmann::json iters = nlohmann::json::array();
  for (const auto& rec : trace.iterations) {
    nlohmann::json j = {{"k", rec.k},
                        {"tau", band_json(rec.tau)},
                        {"tau_l1", rec.tau_l1},
                        {"denoised", rec.denoised}};
    if (rec.denoised) {
      j["band_sds"] = band_json(rec.band_sds);
      j["alpha_raw"] = band_json(rec.alpha_raw);
      j["alpha"] = band_json(rec.alpha);
      j["eta"] = rec.eta;
    }
    j["psnr"] = rec.psnr ? nlohmann::json(*rec.psnr) : nlohmann::json(nullptr);
    j["empirical_variance"] =
        rec.empirical_variance ? band_json(*rec.empirical_variance) : nlohmann::json(nullptr);
    iters.push_back(std::move(j));
  }
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [k, v] : trace.denoiser.parameters) params[k] = v;
  return {{"denoiser", {{"name", trace.denoiser.name}, {"parameters", params}}},
          {"stop_reason", to_string(trace.stop_reason)},
          {"output_iteration", trace.output_iteration},
          {"warnings", trace.warnings},
          {"iterations", iters}};
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt_optional(const std::optional<double>& v) {
  return v ? fmt_double(*v) : std::string();
}

}  // namespace detail

// One row per (iteration, band).
inline std::string trace_to_csv(const IterationTrace& trace, const SubbandLayout& layout) {
  std::ostringstream out;
  out << "k,band,name,count,tau,tau_l1,denoised,band_sd,alpha_raw,alpha,empirical_variance,psnr\n";
  for (const auto& rec : trace.iterations) {
    for (std::size_t s = 0; s < kNumBands; ++s) {
      out << rec.k << ',' << s << ',' << layout.band(s).name() << ',' << layout.band(s).count()
          << ',' << detail::fmt_double(rec.tau[s]) << ',' << detail::fmt_double(rec.tau_l1) << ','
          << (rec.denoised ? 1 : 0) << ',';
      if (rec.denoised) {
        out << detail::fmt_double(rec.band_sds[s]) << ',' << detail::fmt_double(rec.alpha_raw[s])
            << ',' << detail::fmt_double(rec.alpha[s]);
      } else {
        out << ",,";
      }
      out << ','
          << (rec.empirical_variance ? detail::fmt_double((*rec.empirical_variance)[s]) : "")
          << ',' << detail::fmt_optional(rec.psnr) << '\n';
    }
  }
  return out.str();
}

// ---- noise reports ---------------------------------------------------------

inline std::string noise_reports_to_csv(const std::vector<SubbandNoiseReport>& reports) {
  std::ostringstream out;
  out << "iteration,band,name,count,predicted,empirical,empirical_real,empirical_imag,ratio,"
         "gaussianity_real,gaussianity_imag\n";
  for (const auto& rep : reports) {
    for (const auto& b : rep.bands) {
      out << rep.iteration << ',' << b.band << ',' << b.name << ',' << b.count << ','
          << detail::fmt_double(b.predicted) << ',' << detail::fmt_double(b.empirical) << ','
          << detail::fmt_double(b.empirical_real) << ',' << detail::fmt_double(b.empirical_imag)
          << ',' << detail::fmt_optional(b.ratio) << ',' << detail::fmt_optional(b.gaussianity_real)
          << ',' << detail::fmt_optional(b.gaussianity_imag) << '\n';
    }
  }
  return out.str();
}

inline nlohmann::json noise_reports_to_json(const std::vector<SubbandNoiseReport>& reports) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json out = nlohmann::json::array();
  for (const auto& rep : reports) {
    nlohmann::json bands = nlohmann::json::array();
    for (const auto& b : rep.bands) {
      bands.push_back({{"band", b.band},
                       {"name", b.name},
                       {"count", b.count},
                       {"predicted", b.predicted},
                       {"empirical", b.empirical},
                       {"empirical_real", b.empirical_real},
                       {"empirical_imag", b.empirical_imag},
                       {"ratio", opt(b.ratio)},
                       {"gaussianity_real", opt(b.gaussianity_real)},
                       {"gaussianity_imag", opt(b.gaussianity_imag)}});
    }
    out.push_back({{"iteration", rep.iteration}, {"bands", bands}});
  }
  return out;
}

// ---- binary pyramid dumps --------------------------------------------------
// "DVDPYR01", u64 height, u64 width, then height*width (re, im) float64 pairs, all little-endian.

inline constexpr std::string_view kPyramidMagic = "DVDPYR01";

inline void write_pyramid(const std::string& path, const WaveletPyramid& w) {
  std::vector<std::uint8_t> bytes(kPyramidMagic.begin(), kPyramidMagic.end());
  for (std::uint64_t v : {std::uint64_t(w.height()), std::uint64_t(w.width())}) {
    for (int k = 0; k < 8; ++k) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  std::vector<double> flat;
  flat.reserve(2 * w.size());
  for (const auto& c : w.coefficients()) {
    flat.push_back(c.real());
    flat.push_back(c.imag());
  }
  const auto data = doubles_to_le_bytes(flat);
  bytes.insert(bytes.end(), data.begin(), data.end());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("failed writing " + path);
}

inline WaveletPyramid read_pyramid(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 24 || std::string_view(reinterpret_cast<const char*>(bytes.data()), 8) != kPyramidMagic) {
    throw FormatError(path + " is not a pyramid dump");
  }
  auto u64 = [&](std::size_t off) {
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= std::uint64_t{bytes[off + k]} << (8 * k);
    return v;
  };
  const std::size_t h = u64(8), w = u64(16);
  const auto flat = le_bytes_to_doubles(std::span(bytes).subspan(24));
  if (flat.size() != 2 * h * w) throw FormatError(path + " has the wrong data length");
  std::vector<Complex> coeffs(h * w);
  for (std::size_t i = 0; i < coeffs.size(); ++i) coeffs[i] = Complex(flat[2 * i], flat[2 * i + 1]);
  return WaveletPyramid(SubbandLayout(h, w), std::move(coeffs));
}

}  // namespace dvdamp
