#include <CLI11.hpp>

#include <cstdio>
#include <string>

#include "fppg/fppg.h"

namespace {

void print_log(const char* text, void*) {
  std::fputs(text, stdout);
  std::fflush(stdout);
}

int report(fppg_status s) {
  std::fprintf(stderr, "fppg: %s\n", fppg_last_error());
  return fppg_status_is_input_error(s) ? 2 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic PET reconstruction experiments"};
  app.set_version_flag("--version", std::string(fppg_version()));

  std::string config, stage = "all", out;
  long realizations = -1, threads = -1;
  unsigned long long seed = 0;
  app.add_option("--config", config, "run configuration file")->required();
  app.add_option("--stage", stage, "simulate, sweep, recon, analyze, fit, report or all")
      ->check(CLI::IsMember({"simulate", "sweep", "recon", "analyze", "fit", "report", "all"}));
  auto* r_opt = app.add_option("--realizations", realizations, "override [run] realizations")->check(CLI::PositiveNumber);
  auto* s_opt = app.add_option("--seed", seed, "override [run] seed");
  auto* o_opt = app.add_option("--out", out, "override [run] out");
  auto* t_opt = app.add_option("--threads", threads, "override [run] threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  fppg_run* run = nullptr;
  fppg_status s = fppg_run_load(config.c_str(), &run);
  if (s != FPPG_OK) return report(s);
  if (*r_opt && s == FPPG_OK) s = fppg_run_set_realizations(run, static_cast<size_t>(realizations));
  if (*s_opt && s == FPPG_OK) s = fppg_run_set_seed(run, seed);
  if (*o_opt && s == FPPG_OK) s = fppg_run_set_out(run, out.c_str());
  if (*t_opt && s == FPPG_OK) s = fppg_run_set_threads(run, static_cast<int>(threads));
  if (s == FPPG_OK) s = fppg_run_execute(run, stage.c_str(), print_log, nullptr);
  fppg_run_free(run);
  return s == FPPG_OK ? 0 : report(s);
}
