#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "analysis.hpp"
#include "kinetics.hpp"
#include "recon.hpp"
#include "simulate.hpp"

namespace fppg {

/// One reconstruction method to compare.
struct MethodConfig {
  std::string name;
  ReconConfig recon;
  std::vector<double> sweep_lambdas;  // nonempty: λ chosen by the sweep stage
  std::size_t sweep_iterations = 0;   // 0: same as recon.iterations
  // OSEM: iteration count and post-filter FWHM picked by SSIM against TRUE
  bool select_by_ssim = true;
  double fwhm_max_mm = 30.0;
  double fwhm_step_mm = 0.5;
  // OSEM on gated data: frames of one cycle rebinned into `gated_bins`
  std::size_t gated_bins = 0;

  bool fppg() const { return recon.algorithm != Algorithm::Osem; }
};

struct SweepSettings {
  double ratio = 1.1;       // stop refining once neighbours are this close
  double ssim_tol = 5e-4;   // or once a round moves the best SSIM less than this
  std::size_t max_evals = 14;
  std::size_t realization = 0;
};

struct RunConfig {
  std::string name = "run";
  PhantomSpec phantom;
  NoiseSpec noise;
  Geometry geometry;
  std::vector<MethodConfig> methods;
  SweepSettings sweep;
  std::size_t realizations = 1;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  int threads = 1;

  bool lv = false;  // cardiac: LV region growing
  bool fit = false; // brain: parametric images and bias
  std::vector<std::string> fit_methods;  // empty: all methods
  FitOptions fit_options;

  std::string text;    // raw config content
  std::string source;  // path or label

  static RunConfig parse(const std::string& text, const std::string& source = "<config>");
  static RunConfig load(const std::string& path);
  void validate() const;

  std::uint64_t realization_seed(std::size_t r) const { return seed + r; }
  const MethodConfig& method(const std::string& name) const;
};

/// SHA-256 of the config text, lowercase hex.
std::string sha256_hex(const std::string& text);

/// Stages: simulate, sweep, recon, analyze, fit, report, or all.
const std::vector<std::string>& pipeline_stages();

/// Runs one stage (or all) writing into cfg.out_dir. Progress goes to `log`.
void run_pipeline(const RunConfig& cfg, const std::string& stage, std::ostream& log);

/// λ-sweep bookkeeping, exposed for tests.
struct SweepPoint {
  std::size_t order = 0;
  double lambda = 0.0;
  double ssim = 0.0;
  double rrmse = 0.0;
};

struct SweepResult {
  std::vector<SweepPoint> points;  // in evaluation order
  double best_lambda = 0.0;
  double best_ssim = 0.0;
};

using SweepEval = std::function<std::pair<double, double>(double lambda)>;  // (ssim, rrmse)

/// Geometric grid search refined around the argmax until neighbours are
/// within `ratio` or a refinement round changes the best SSIM by less than
/// `ssim_tol`. A best value at the grid edge extends the grid outward.
SweepResult lambda_sweep(const std::vector<double>& grid, const SweepSettings& s, const SweepEval& eval);

}  // namespace fppg
