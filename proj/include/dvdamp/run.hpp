#pragma once

#include <fftw3.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dvdamp/bridge.hpp"
#include "dvdamp/denoisers.hpp"
#include "dvdamp/diagnostics.hpp"
#include "dvdamp/dvdamp.hpp"
#include "dvdamp/forward_model.hpp"
#include "dvdamp/image_io.hpp"
#include "dvdamp/metrics.hpp"
#include "dvdamp/random.hpp"
#include "dvdamp/serialization.hpp"

namespace dvdamp {

inline constexpr const char* kBridgeEndpointEnv = "DVDAMP_BRIDGE_ENDPOINT";

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitValidation = 2, kExitIo = 3, kExitBridge = 4 };

struct RunConfig {
  std::string input = "phantom:128";
  double rate = 0.25;
  double snr_db = 40.0;
  double gamma = 0.75;
  std::string denoiser = "soft";
  int iterations = 10;
  std::uint64_t seed = 0;
  double density_exponent = 4.0;
  double fully_sampled_radius = 0.06;
  double p_min = 1e-3;
  int probes_per_band = 1;
  std::string imaginary_mode = "scale";
  double imaginary_scale = 0.1;
  double bridge_timeout_s = 60.0;
  double peak = 255.0;
};

struct RunSeeds {
  std::uint64_t mask = 0;
  std::uint64_t noise = 0;
  std::uint64_t probes = 0;
};

inline RunSeeds derive_run_seeds(std::uint64_t seed) {
  return {derive_seed(seed, "mask"), derive_seed(seed, "noise"), derive_seed(seed, "probes")};
}

// SURE tuning already adapts the threshold to the band sd, so it runs without damping.

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"input", c.input},
          {"rate", c.rate},
          {"snr_db", std::isinf(c.snr_db) ? nlohmann::json("inf") : nlohmann::json(c.snr_db)},
          {"gamma", c.gamma},
          {"denoiser", c.denoiser},
          {"iterations", c.iterations},
          {"seed", c.seed},
          {"density_exponent", c.density_exponent},
          {"fully_sampled_radius", c.fully_sampled_radius},
          {"p_min", c.p_min},
          {"probes_per_band", c.probes_per_band},
          {"imaginary_mode", c.imaginary_mode},
          {"imaginary_scale", c.imaginary_scale},
          {"bridge_timeout_s", c.bridge_timeout_s},
          {"peak", c.peak}};
}

inline double parse_snr_db(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (t == "inf" || t == "+inf" || t == "infinity") return std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != t.size() || t.empty()) throw std::invalid_argument("bad SNR value '" + text + "'");
  return v;
}

// Accepts "0.25" or "1/4".
inline double parse_rate(const std::string& text) {
  const auto slash = text.find('/');
  try {
    if (slash == std::string::npos) return std::stod(text);
    return std::stod(text.substr(0, slash)) / std::stod(text.substr(slash + 1));
  } catch (const std::exception&) {
    throw std::invalid_argument("bad sampling rate '" + text + "'");
  }
}

// Keys mirror RunConfig fields; unknown keys are rejected.
inline void apply_config_json(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config file must hold a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "input") c.input = v.get<std::string>();
    else if (key == "rate") c.rate = v.is_string() ? parse_rate(v.get<std::string>()) : v.get<double>();
    else if (key == "snr_db") c.snr_db = v.is_string() ? parse_snr_db(v.get<std::string>()) : v.get<double>();
    else if (key == "gamma") c.gamma = v.get<double>();
    else if (key == "denoiser") c.denoiser = v.get<std::string>();
    else if (key == "iterations") c.iterations = v.get<int>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "density_exponent") c.density_exponent = v.get<double>();
    else if (key == "fully_sampled_radius") c.fully_sampled_radius = v.get<double>();
    else if (key == "p_min") c.p_min = v.get<double>();
    else if (key == "probes_per_band") c.probes_per_band = v.get<int>();
    else if (key == "imaginary_mode") c.imaginary_mode = v.get<std::string>();
    else if (key == "imaginary_scale") c.imaginary_scale = v.get<double>();
    else if (key == "bridge_timeout_s") c.bridge_timeout_s = v.get<double>();
    else if (key == "peak") c.peak = v.get<double>();
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

inline RunConfig load_config_file(const std::string& path, RunConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw ImageIoError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config " + path + " is not valid JSON: " + e.what());
  }
  try {
    apply_config_json(base, j);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  return base;
}

inline ImaginaryPolicy parse_imaginary_policy(const std::string& mode, double factor) {
  ImaginaryPolicy p;
  p.scale_factor = factor;
  if (mode == "scale") p.mode = ImaginaryMode::scale;
  else if (mode == "zero") p.mode = ImaginaryMode::zero;
  else if (mode == "passthrough") p.mode = ImaginaryMode::passthrough;
  else throw std::invalid_argument("imaginary mode must be scale, zero or passthrough");
  return p;
}

// soft | sure | wiener | identity | bridge[:ENDPOINT]. Bare "bridge" reads the
// endpoint from DVDAMP_BRIDGE_ENDPOINT. Bridge denoisers see the real part only.
inline AnyDenoiser make_denoiser(const RunConfig& c) {
  const std::string& name = c.denoiser;
  if (name == "soft") return SoftThresholdDenoiser();
  if (name == "sure") return SureThresholdDenoiser();
  if (name == "wiener") return WienerSubbandDenoiser();
  if (name == "identity") return IdentityDenoiser();
  if (name == "bridge" || name.rfind("bridge:", 0) == 0) {
    std::string endpoint = name.size() > 7 ? name.substr(7) : "";
    if (endpoint.empty()) {
      const char* env = std::getenv(kBridgeEndpointEnv);
      if (env == nullptr || *env == '\0') {
        throw std::invalid_argument(std::string("denoiser 'bridge' needs an endpoint or ") +
                                    kBridgeEndpointEnv);
      }
      endpoint = env;
    }
    if (!(c.bridge_timeout_s > 0.0)) throw std::invalid_argument("bridge timeout must be positive");
    const auto timeout = std::chrono::milliseconds(static_cast<long long>(c.bridge_timeout_s * 1000.0));
    return apply_imaginary_policy(bridge::BridgeDenoiser(endpoint, timeout),
                                  parse_imaginary_policy(c.imaginary_mode, c.imaginary_scale));
  }
  throw std::invalid_argument("unknown denoiser '" + name + "'");
}

inline SamplingParameters sampling_parameters(const RunConfig& c) {
  SamplingParameters p;
  p.target_rate = c.rate;
  p.density_exponent = c.density_exponent;
  p.fully_sampled_radius = c.fully_sampled_radius;
  p.p_min = c.p_min;
  p.seed = derive_run_seeds(c.seed).mask;
  return p;
}

inline ReconstructionConfig reconstruction_config(const RunConfig& c, bool record_states) {
  ReconstructionConfig rc;
  rc.max_iterations = c.iterations;
  rc.gamma = ReconstructionConfig::filled(c.gamma);
  rc.divergence.probes_per_band = c.probes_per_band;
  rc.divergence.seed = derive_run_seeds(c.seed).probes;
  rc.record_states = record_states;
  return rc;
}

struct PhaseTimer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - start).count();
    start = now;
    return s;
  }
};

struct RunOutcome {
  RunConfig config;
  ImageGrid truth;
  SamplingScheme scheme;
  KSpaceMeasurement measurement;
  ImageGrid zero_filled;
  ReconstructionResult result;
  double final_psnr = 0.0;
  double zero_filled_psnr = 0.0;
  nlohmann::json timings = nlohmann::json::object();
};

// Synthesises measurements of the input image and reconstructs them.
inline RunOutcome execute_run(const RunConfig& c, bool record_states = false) {
  if (c.iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  PhaseTimer timer;
  RunOutcome out;
  out.config = c;
  out.truth = load_image(c.input);
  out.timings["load"] = timer.lap();

  const RunSeeds seeds = derive_run_seeds(c.seed);
  out.scheme = make_variable_density_scheme(out.truth.height(), out.truth.width(), sampling_parameters(c));
  const double noise_sd = snr_to_noise_sd(out.truth, c.snr_db, out.scheme);
  out.measurement = measure(out.truth, out.scheme, noise_sd, seeds.noise);
  out.zero_filled = zero_filled_reconstruction(out.measurement, out.scheme);
  out.zero_filled_psnr = psnr(out.truth, out.zero_filled, c.peak);
  out.timings["synthesis"] = timer.lap();

  AnyDenoiser den = make_denoiser(c);
  out.result = run_dvdamp(out.measurement, out.scheme, den, reconstruction_config(c, record_states), &out.truth);
  out.final_psnr = psnr(out.truth, out.result.image, c.peak);
  out.timings["reconstruction"] = timer.lap();
  return out;
}

inline nlohmann::json environment_stamp() {
  return {{"compiler",
#if defined(__clang__)
           "clang " __clang_version__
#elif defined(__GNUC__)
           "gcc " __VERSION__
#else
           "unknown"
#endif
          },
          {"cxx_standard", __cplusplus},
          {"fftw", std::string(fftw_version)}};
}

inline nlohmann::json run_record(const RunOutcome& o, const nlohmann::json& artifacts) {
  const RunSeeds seeds = derive_run_seeds(o.config.seed);
  const auto& trace = o.result.trace;
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& rec : trace.iterations) {
    summary.push_back({{"k", rec.k},
                       {"tau_l1", rec.tau_l1},
                       {"denoised", rec.denoised},
                       {"psnr", rec.psnr ? nlohmann::json(*rec.psnr) : nlohmann::json(nullptr)}});
  }
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [k, v] : trace.denoiser.parameters) params[k] = v;
  return {{"format", "dvdamp-run-record"},
          {"version", 1},
          {"config", to_json(o.config)},
          {"seeds", {{"master", o.config.seed}, {"mask", seeds.mask}, {"noise", seeds.noise}, {"probes", seeds.probes}}},
          {"denoiser", {{"name", trace.denoiser.name}, {"parameters", params}}},
          {"image", {{"height", o.truth.height()}, {"width", o.truth.width()}}},
          {"noise_sd", o.measurement.noise_sd},
          {"sample_count", o.scheme.sample_count()},
          {"realized_rate", double(o.scheme.sample_count()) / double(o.scheme.size())},
          {"environment", environment_stamp()},
          {"iterations", summary},
          {"stop_reason", to_string(trace.stop_reason)},
          {"output_iteration", trace.output_iteration},
          {"warnings", trace.warnings},
          {"final_psnr", o.final_psnr},
          {"zero_filled_psnr", o.zero_filled_psnr},
          {"timings_s", o.timings},
          {"artifacts", artifacts}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ImageIoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw ImageIoError("failed writing " + path.string());
}

inline void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw ImageIoError("cannot create directory " + dir.string());
  }
}

// Runs one reconstruction and writes reconstruction.png/.raw, zero_filled.png,
// scheme.json, trace.csv, trace.json and run.json into out_dir.
inline nlohmann::json reconstruct_to_directory(const RunConfig& c, const std::filesystem::path& out_dir,
                                               bool dump_states = false) {
  ensure_directory(out_dir);
  RunOutcome o = execute_run(c, dump_states);
  PhaseTimer timer;
  const SubbandLayout layout(o.truth.height(), o.truth.width());
  nlohmann::json artifacts = {{"reconstruction_png", "reconstruction.png"},
                              {"reconstruction_raw", "reconstruction.raw"},
                              {"zero_filled_png", "zero_filled.png"},
                              {"scheme", "scheme.json"},
                              {"trace_csv", "trace.csv"},
                              {"trace_json", "trace.json"}};
  write_png16((out_dir / "reconstruction.png").string(), o.result.image, c.peak);
  write_raw((out_dir / "reconstruction.raw").string(), o.result.image);
  write_png16((out_dir / "zero_filled.png").string(), o.zero_filled, c.peak);
  write_text(out_dir / "scheme.json", scheme_to_json(o.scheme).dump() + "\n");
  write_text(out_dir / "trace.csv", trace_to_csv(o.result.trace, layout));
  write_text(out_dir / "trace.json", trace_to_json(o.result.trace).dump(2) + "\n");
  if (dump_states) {
    ensure_directory(out_dir / "states");
    nlohmann::json states = nlohmann::json::array();
    for (const auto& rec : o.result.trace.iterations) {
      const std::string name = "states/r_" + std::to_string(rec.k) + ".bin";
      write_pyramid((out_dir / name).string(), *rec.r);
      states.push_back(name);
    }
    artifacts["states"] = states;
  }
  o.timings["output"] = timer.lap();
  const auto record = run_record(o, artifacts);
  write_text(out_dir / "run.json", record.dump(2) + "\n");
  return record;
}

struct StateEvolutionRun {
  RunOutcome outcome;
  StateEvolutionCheck check;
};

inline StateEvolutionRun validate_state_evolution(const RunConfig& c,
                                                  const StateEvolutionTolerances& tol = {}) {
  StateEvolutionRun run{execute_run(c, true), {}};
  run.check = check_state_evolution(run.outcome.result.trace, haar_forward(run.outcome.truth), tol);
  return run;
}

// ---- benchmark ---------------------------------------------------------------

struct BenchmarkGrid {
  std::vector<std::string> images;
  std::vector<double> rates = {1.0 / 16.0, 1.0 / 12.0, 1.0 / 8.0, 1.0 / 4.0};
  std::vector<double> snrs_db = {40.0};
  std::vector<std::string> denoisers = {"soft"};
  int seeds = 1;
  std::uint64_t base_seed = 0;
};

struct BenchmarkRow {
  std::string image;
  std::string denoiser;
  double rate = 0.0;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  double psnr = 0.0;
  double zero_filled_psnr = 0.0;
  int iterations = 0;
  std::string stop_reason;
  double runtime_s = 0.0;
  std::string error;
};

// Expands directories into their PNG/PGM/raw files (sorted); other entries pass through.
inline std::vector<std::string> expand_image_list(const std::vector<std::string>& entries) {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (std::filesystem::is_directory(e)) {
      std::vector<std::string> found;
      for (const auto& f : std::filesystem::directory_iterator(e)) {
        std::string ext = f.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (ext == ".png" || ext == ".pgm" || ext == ".raw" || ext == ".f64") found.push_back(f.path().string());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(e);
    }
  }
  return out;
}

inline std::vector<BenchmarkRow> run_benchmark(const BenchmarkGrid& grid, const RunConfig& base) {
  std::vector<BenchmarkRow> rows;
  for (const auto& image : grid.images) {
    for (const auto& den : grid.denoisers) {
      for (double snr : grid.snrs_db) {
        for (double rate : grid.rates) {
          for (int s = 0; s < grid.seeds; ++s) {
            RunConfig c = base;
            c.input = image;
            c.denoiser = den;
            c.rate = rate;
            c.snr_db = snr;
            c.seed = derive_seed(grid.base_seed, static_cast<std::uint64_t>(s));
            BenchmarkRow row;
            row.image = image;
            row.denoiser = den;
            row.rate = rate;
            row.snr_db = snr;
            row.seed = c.seed;
            PhaseTimer timer;
            try {
              const RunOutcome o = execute_run(c);
              row.ok = true;
              row.psnr = o.final_psnr;
              row.zero_filled_psnr = o.zero_filled_psnr;
              row.iterations = static_cast<int>(o.result.trace.iterations.size());
              row.stop_reason = to_string(o.result.trace.stop_reason);
            } catch (const std::exception& e) {
              row.error = e.what();
            }
            row.runtime_s = timer.lap();
            rows.push_back(std::move(row));
          }
        }
      }
    }
  }
  return rows;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

}  // namespace detail

inline std::string benchmark_runs_csv(const std::vector<BenchmarkRow>& rows) {
  std::ostringstream out;
  out << "image,denoiser,rate,snr_db,seed,status,psnr,zero_filled_psnr,iterations,stop_reason,runtime_s,error\n";
  for (const auto& r : rows) {
    out << detail::csv_field(r.image) << ',' << detail::csv_field(r.denoiser) << ','
        << detail::fmt_double(r.rate) << ',' << detail::fmt_double(r.snr_db) << ',' << r.seed << ','
        << (r.ok ? "ok" : "failed") << ',' << (r.ok ? detail::fmt_double(r.psnr) : "") << ','
        << (r.ok ? detail::fmt_double(r.zero_filled_psnr) : "") << ',' << r.iterations << ','
        << r.stop_reason << ',' << detail::fmt_double(r.runtime_s) << ','
        << detail::csv_field(r.error) << '\n';
  }
  return out.str();
}

// One row per (denoiser, rate, snr) cell: mean PSNR and runtime over successful runs.
inline std::string benchmark_summary_csv(const std::vector<BenchmarkRow>& rows) {
  struct Cell {
    std::string denoiser;
    double rate, snr;
    int runs = 0, failures = 0;
    double psnr = 0.0, zf = 0.0, runtime = 0.0;
  };
  std::vector<Cell> cells;
  for (const auto& r : rows) {
    auto it = std::find_if(cells.begin(), cells.end(), [&](const Cell& c) {
      return c.denoiser == r.denoiser && c.rate == r.rate && c.snr == r.snr_db;
    });
    if (it == cells.end()) {
      cells.push_back({r.denoiser, r.rate, r.snr_db});
      it = cells.end() - 1;
    }
    ++it->runs;
    if (!r.ok) {
      ++it->failures;
      continue;
    }
    it->psnr += r.psnr;
    it->zf += r.zero_filled_psnr;
    it->runtime += r.runtime_s;
  }
  std::ostringstream out;
  out << "method,rate,snr_db,runs,failures,mean_psnr,mean_zero_filled_psnr,mean_runtime_s\n";
  for (const auto& c : cells) {
    const int ok = c.runs - c.failures;
    out << detail::csv_field(c.denoiser) << ',' << detail::fmt_double(c.rate) << ','
        << detail::fmt_double(c.snr) << ',' << c.runs << ',' << c.failures << ',';
    if (ok > 0) {
      out << detail::fmt_double(c.psnr / ok) << ',' << detail::fmt_double(c.zf / ok) << ','
          << detail::fmt_double(c.runtime / ok);
    } else {
      out << ",,";
    }
    out << '\n';
  }
  return out.str();
}

// ---- errors ------------------------------------------------------------------

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const bridge::BridgeError*>(&e)) return kExitBridge;
  if (dynamic_cast<const ImageIoError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const std::filesystem::filesystem_error*>(&e)) {
    return kExitIo;
  }
  if (dynamic_cast<const std::invalid_argument*>(&e) || dynamic_cast<const std::domain_error*>(&e) ||
      dynamic_cast<const std::out_of_range*>(&e)) {
    return kExitValidation;
  }
  return kExitFailure;
}

inline std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const bridge::TimeoutError*>(&e)) return "bridge_timeout";
  if (dynamic_cast<const bridge::ConnectionError*>(&e)) return "bridge_connection";
  if (dynamic_cast<const bridge::ProtocolError*>(&e)) return "bridge_protocol";
  if (dynamic_cast<const bridge::DimensionMismatchError*>(&e)) return "bridge_dimension_mismatch";
  if (dynamic_cast<const bridge::RemoteError*>(&e)) return "bridge_remote";
  if (dynamic_cast<const InfeasibleRateError*>(&e)) return "infeasible_rate";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const ShapeMismatchError*>(&e)) return "shape_mismatch";
  if (exit_code_for(e) == kExitIo) return "io";
  if (exit_code_for(e) == kExitValidation) return "validation";
  return "internal";
}

inline nlohmann::json error_json(const std::exception& e) {
  return {{"error", {{"kind", error_kind(e)}, {"message", e.what()}, {"exit_code", exit_code_for(e)}}}};
}

}  // namespace dvdamp
