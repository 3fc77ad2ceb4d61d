#include <unistd.h>

#include <csignal>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dvdamp/bridge.hpp"
#include "dvdamp/run.hpp"

namespace {

using dvdamp::RunConfig;

struct RunFlags {
  std::string config_path;
  std::string input;
  std::string rate;
  std::string snr_db;
  double gamma = 0.0;
  std::string denoiser;
  int iterations = 0;
  std::uint64_t seed = 0;
  double density_exponent = 0.0;
  double fully_sampled_radius = 0.0;
  double p_min = 0.0;
  int probes_per_band = 0;
  std::string imaginary_mode;
  double imaginary_scale = 0.0;
  double bridge_timeout_s = 0.0;

  std::vector<CLI::Option*> options;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool with_grid_flags) {
  cmd->add_option("--config", f.config_path, "JSON file overriding defaults");
  if (!with_grid_flags) {
    f.options.push_back(cmd->add_option("input,--input", f.input, "image (PNG/PGM/raw) or phantom:N"));
    f.options.push_back(cmd->add_option("--rate", f.rate, "sampling rate m/n, e.g. 0.25 or 1/4"));
    f.options.push_back(cmd->add_option("--snr-db", f.snr_db, "measurement SNR in dB, or inf"));
    f.options.push_back(cmd->add_option("--denoiser", f.denoiser, "soft, sure, wiener, identity, bridge[:ENDPOINT]"));
    f.options.push_back(cmd->add_option("--seed", f.seed, "master seed"));
  } else {
    f.options.insert(f.options.end(), 5, nullptr);
  }
  f.options.push_back(cmd->add_option("--gamma", f.gamma, "band sd damping (default 0.75)"));
  f.options.push_back(cmd->add_option("--iters", f.iterations, "maximum iterations")->check(CLI::PositiveNumber));
  f.options.push_back(cmd->add_option("--density-exponent", f.density_exponent));
  f.options.push_back(cmd->add_option("--fully-sampled-radius", f.fully_sampled_radius));
  f.options.push_back(cmd->add_option("--p-min", f.p_min));
  f.options.push_back(cmd->add_option("--probes-per-band", f.probes_per_band));
  f.options.push_back(cmd->add_option("--imaginary-mode", f.imaginary_mode, "scale, zero or passthrough (bridge only)"));
  f.options.push_back(cmd->add_option("--imaginary-scale", f.imaginary_scale));
  f.options.push_back(cmd->add_option("--bridge-timeout", f.bridge_timeout_s, "seconds"));
}

bool given(const CLI::Option* o) { return o != nullptr && o->count() > 0; }

RunConfig resolve_config(const RunFlags& f) {
  RunConfig c;
  if (!f.config_path.empty()) c = dvdamp::load_config_file(f.config_path);
  const auto& o = f.options;
  if (given(o[0])) c.input = f.input;
  if (given(o[1])) c.rate = dvdamp::parse_rate(f.rate);
  if (given(o[2])) c.snr_db = dvdamp::parse_snr_db(f.snr_db);
  if (given(o[3])) c.denoiser = f.denoiser;
  if (given(o[4])) c.seed = f.seed;
  if (given(o[5])) c.gamma = f.gamma;
  if (given(o[6])) c.iterations = f.iterations;
  if (given(o[7])) c.density_exponent = f.density_exponent;
  if (given(o[8])) c.fully_sampled_radius = f.fully_sampled_radius;
  if (given(o[9])) c.p_min = f.p_min;
  if (given(o[10])) c.probes_per_band = f.probes_per_band;
  if (given(o[11])) c.imaginary_mode = f.imaginary_mode;
  if (given(o[12])) c.imaginary_scale = f.imaginary_scale;
  if (given(o[13])) c.bridge_timeout_s = f.bridge_timeout_s;
  return c;
}

int report_error(const std::exception& e, const std::string& out_dir) {
  const auto j = dvdamp::error_json(e);
  std::cerr << j.dump() << '\n';
  if (!out_dir.empty() && std::filesystem::is_directory(out_dir)) {
    std::ofstream(std::filesystem::path(out_dir) / "error.json") << j.dump(2) << '\n';
  }
  return j["error"]["exit_code"].get<int>();
}

template <typename F>
int guarded(const std::string& out_dir, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return report_error(e, out_dir);
  }
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ',')) {
      if (!part.empty()) out.push_back(part);
    }
  }
  return out;
}

std::atomic<bool> g_stop{false};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"D-VDAMP reconstruction toolkit"};
  app.require_subcommand(1);

  RunFlags rec_flags;
  std::string rec_out = "dvdamp-out";
  bool dump_states = false;
  auto* rec = app.add_subcommand("reconstruct", "simulate measurements of an image and reconstruct it");
  add_run_flags(rec, rec_flags, false);
  rec->add_option("--out-dir", rec_out, "output directory");
  rec->add_flag("--dump-states", dump_states, "write every r_k pyramid as a binary dump");

  RunFlags bench_flags;
  std::vector<std::string> bench_images, bench_rates, bench_snrs, bench_denoisers;
  int bench_seeds = 1;
  std::uint64_t bench_seed = 0;
  std::string bench_out = "dvdamp-benchmark";
  auto* bench = app.add_subcommand("benchmark", "run a grid of reconstructions and summarise PSNR");
  add_run_flags(bench, bench_flags, true);
  bench->add_option("--images", bench_images, "image files, directories or phantom:N")->required();
  bench->add_option("--rates", bench_rates, "comma separated rates (default 1/16,1/12,1/8,1/4)");
  bench->add_option("--snrs", bench_snrs, "comma separated SNRs in dB (default 40)");
  bench->add_option("--denoisers", bench_denoisers, "comma separated denoisers (default soft)");
  bench->add_option("--seeds", bench_seeds, "seeds per cell")->check(CLI::PositiveNumber);
  bench->add_option("--seed", bench_seed, "base seed");
  bench->add_option("--out-dir", bench_out, "output directory");

  RunFlags se_flags;
  std::string se_out = "dvdamp-se";
  dvdamp::StateEvolutionTolerances tol;
  auto* se = app.add_subcommand("validate-se", "check predicted against empirical per-band noise");
  add_run_flags(se, se_flags, false);
  se->add_option("--out-dir", se_out, "output directory");
  se->add_option("--ratio-factor", tol.ratio_factor);
  se->add_option("--gaussianity-min", tol.gaussianity_min);

  std::string echo_endpoint;
  bool echo_stdio = false;
  auto* echo = app.add_subcommand("serve-echo", "serve the identity denoiser over the bridge protocol");
  echo->add_option("--endpoint", echo_endpoint, "unix:PATH or tcp:HOST:PORT");
  echo->add_flag("--stdio", echo_stdio, "serve a single connection on stdin/stdout (exec: transport)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : dvdamp::kExitValidation;
  }

  if (*rec) {
    return guarded(rec_out, [&] {
      const RunConfig c = resolve_config(rec_flags);
      const auto record = dvdamp::reconstruct_to_directory(c, rec_out, dump_states);
      std::cout << nlohmann::json{{"final_psnr", record["final_psnr"]},
                                  {"zero_filled_psnr", record["zero_filled_psnr"]},
                                  {"stop_reason", record["stop_reason"]},
                                  {"out_dir", rec_out}}
                       .dump()
                << '\n';
      return static_cast<int>(dvdamp::kExitOk);
    });
  }

  if (*bench) {
    return guarded(bench_out, [&] {
      const RunConfig base = resolve_config(bench_flags);
      dvdamp::BenchmarkGrid grid;
      grid.images = dvdamp::expand_image_list(bench_images);
      if (grid.images.empty()) throw std::invalid_argument("no benchmark images found");
      if (!bench_rates.empty()) {
        grid.rates.clear();
        for (const auto& r : split_list(bench_rates)) grid.rates.push_back(dvdamp::parse_rate(r));
      }
      if (!bench_snrs.empty()) {
        grid.snrs_db.clear();
        for (const auto& s : split_list(bench_snrs)) grid.snrs_db.push_back(dvdamp::parse_snr_db(s));
      }
      if (!bench_denoisers.empty()) grid.denoisers = split_list(bench_denoisers);
      grid.seeds = bench_seeds;
      grid.base_seed = bench_seed;
      dvdamp::ensure_directory(bench_out);
      const auto rows = dvdamp::run_benchmark(grid, base);
      dvdamp::write_text(std::filesystem::path(bench_out) / "runs.csv", dvdamp::benchmark_runs_csv(rows));
      dvdamp::write_text(std::filesystem::path(bench_out) / "summary.csv", dvdamp::benchmark_summary_csv(rows));
      std::size_t failures = 0;
      for (const auto& r : rows) failures += r.ok ? 0 : 1;
      std::cout << nlohmann::json{{"runs", rows.size()}, {"failures", failures}, {"out_dir", bench_out}}.dump()
                << '\n';
      return static_cast<int>(dvdamp::kExitOk);
    });
  }

  if (*se) {
    return guarded(se_out, [&] {
      const RunConfig c = resolve_config(se_flags);
      dvdamp::ensure_directory(se_out);
      const auto run = dvdamp::validate_state_evolution(c, tol);
      const std::filesystem::path dir(se_out);
      dvdamp::write_text(dir / "noise_report.csv", dvdamp::noise_reports_to_csv(run.check.reports));
      dvdamp::write_text(dir / "noise_report.json", dvdamp::noise_reports_to_json(run.check.reports).dump(2) + "\n");
      const nlohmann::json summary = {{"passed", run.check.passed},
                                      {"failures", run.check.failures},
                                      {"iterations", run.outcome.result.trace.iterations.size()},
                                      {"stop_reason", dvdamp::to_string(run.outcome.result.trace.stop_reason)},
                                      {"final_psnr", run.outcome.final_psnr},
                                      {"config", dvdamp::to_json(c)}};
      dvdamp::write_text(dir / "summary.json", summary.dump(2) + "\n");
      std::cout << nlohmann::json{{"passed", run.check.passed}, {"failures", run.check.failures.size()}}.dump()
                << '\n';
      return static_cast<int>(run.check.passed ? dvdamp::kExitOk : dvdamp::kExitValidation);
    });
  }

  if (*echo) {
    return guarded("", [&] {
      if (echo_stdio) {
        dvdamp::bridge::Channel channel(::dup(STDIN_FILENO));
        dvdamp::bridge::serve_channel(channel, dvdamp::bridge::echo_handler);
        return static_cast<int>(dvdamp::kExitOk);
      }
      if (echo_endpoint.empty()) throw std::invalid_argument("serve-echo needs --endpoint or --stdio");
      std::signal(SIGINT, [](int) { g_stop = true; });
      std::signal(SIGTERM, [](int) { g_stop = true; });
      dvdamp::bridge::Server server(echo_endpoint, dvdamp::bridge::echo_handler);
      std::cout << nlohmann::json{{"endpoint", server.endpoint()}}.dump() << std::endl;
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      return static_cast<int>(dvdamp::kExitOk);
    });
  }
  return dvdamp::kExitFailure;
}
