#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "patches.hpp"
#include "penalty.hpp"
#include "projector.hpp"

namespace fppg {

enum class Algorithm { Osem, FppgDct, FppgTnn, FppgDctPatch, FppgTnnPatch };

const char* to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& s);

struct ReconConfig {
  Algorithm algorithm = Algorithm::FppgDct;
  double lambda_ref = 0.0;
  double beta = 1.0;
  std::size_t iterations = 100;
  std::size_t subsets = 1;  // OSEM only
  PatchSettings patch;
  bool rotation = false;
  double eps_fraction = 0.01;       // ε = eps_fraction · median(f)
  double postfilter_fwhm_mm = 0.0;  // OSEM only
  std::uint64_t rng_seed = 0;
  bool freeze_mu = false;       // compute μ once from S⁽⁰⁾
  bool poisson_lambda = true;   // per-frame λᵢ = λ_ref·√(c̄/cᵢ)
  bool early_stop = false;      // stop once rel. change < tol for `window` iterations
  double early_stop_tol = 1e-5;
  std::size_t early_stop_window = 20;
  std::size_t objective_every = 10;  // 0: only at the end

  void validate(const Geometry& g) const;
};

/// One row of the per-iteration trace. Objective columns are NaN on
/// iterations where they were not evaluated.
struct TraceRow {
  std::size_t iteration = 0;
  double fidelity = 0.0;
  double penalty = 0.0;
  double objective = 0.0;
  double rel_change = 0.0;
  double dual_residual = 0.0;
  double wall_seconds = 0.0;
};

struct ReconResult {
  DynTensor image;
  std::vector<TraceRow> trace;
  std::size_t iterations_run = 0;
  double mu = 0.0;
  double final_rel_change = 0.0;
  std::vector<double> final_dual_residuals;  // one per penalty term, relative to ‖c‖
};

/// Invoked after every completed iteration with the new iterate.
using IterationHook = std::function<void(std::size_t iteration, const DynTensor& f)>;

// ---- building blocks ----

/// EM preconditioner: max{f, ε}/(Aᵀ1) where Aᵀ1 > 0, else max{f, ε}.
DynTensor precondition(const DynTensor& f, const DynTensor& sensitivity, double eps);

/// μ = 1 / (2·λ_ref·‖B‖₂²·max S).
double compute_mu(double lambda_ref, const DynTensor& S, double opnorm);

/// λᵢ = λ_ref·√(c̄/cᵢ).
std::vector<double> scale_lambda(double lambda_ref, std::span<const double> frame_counts);

/// ε from the current iterate: fraction · median(f), falling back to
/// 1e-9·max(f) and then 1e-9 when the median is zero.
double epsilon_floor(const DynTensor& f, double fraction);

/// The penalty terms configured for an FPPG algorithm (two when rotation is on).
std::vector<PenaltyTerm> make_penalty_terms(Dims image, const ReconConfig& cfg);

// ---- solvers ----

struct IterState {
  DynTensor f;
  DynTensor h;
  std::vector<std::vector<double>> c;  // one dual per penalty term
  double mu = 0.0;
  std::vector<double> lambda_frames;
  std::vector<TraceRow> objective_trace;
};

/// Fixed-point proximity gradient iteration:
///   f⁺ = P₊(f − βS(∇F(f) + Λ·Σ Bᵀc))
///   h  = 2f⁺ − f
///   c⁺ = μ(I − prox_{φ/μ})(c/μ + Bh)
/// for each penalty term φ(B·). With B = identity and φ the TNN this is the
/// h = c/μ + (2f⁺ − f), c⁺ = μ(h − s) form.
class FppgSolver {
 public:
  FppgSolver(const Projector& projector, const SinogramStack& data, ReconConfig cfg);

  void step();
  /// Runs the configured iteration budget (or until early stop).
  ReconResult run(const IterationHook& hook = {});

  const IterState& state() const { return state_; }
  const std::vector<PenaltyTerm>& terms() const { return terms_; }
  std::size_t iteration() const { return iteration_; }
  double last_rel_change() const { return last_rel_change_; }

  /// Φ = F + λ_ref Σ φ(B·W f) with W the per-frame λᵢ/λ_ref weights.
  TraceRow evaluate(const DynTensor& f) const;
  /// Relative dual fixed-point residuals μ‖prox_{φ/μ}(Bf + c/μ) − Bf‖/‖c‖.
  std::vector<double> dual_residuals() const;

 private:
  Projector proj_;
  SinogramStack data_;
  ReconConfig cfg_;
  std::vector<PenaltyTerm> terms_;
  DynTensor sens_;
  IterState state_;
  double opnorm_ = 1.0;
  std::size_t iteration_ = 0;
  double last_rel_change_ = 0.0;
};

ReconResult fppg_dct(const Projector& p, const SinogramStack& data, const ReconConfig& cfg,
                     const IterationHook& hook = {});
ReconResult fppg_tnn(const Projector& p, const SinogramStack& data, const ReconConfig& cfg,
                     const IterationHook& hook = {});
ReconResult fppg_dct_patch(const Projector& p, const SinogramStack& data, const ReconConfig& cfg,
                           const IterationHook& hook = {});
ReconResult fppg_tnn_patch(const Projector& p, const SinogramStack& data, const ReconConfig& cfg,
                           const IterationHook& hook = {});

/// Frame-by-frame OSEM over interleaved angle subsets, then the configured
/// Gaussian post-filter. `hook` sees the unfiltered dynamic image after
/// each full iteration.
ReconResult mlem_osem(const Projector& p, const SinogramStack& data, const ReconConfig& cfg,
                      const IterationHook& hook = {});

/// Dispatch on cfg.algorithm.
ReconResult reconstruct(const Projector& p, const SinogramStack& data, const ReconConfig& cfg,
                        const IterationHook& hook = {});

/// Frame-wise 2D Gaussian with symmetric boundaries; σ = fwhm/(2√(2ln2))/pixel.
DynTensor gaussian_postfilter(const DynTensor& f, double fwhm_mm, double pixel_mm);

/// Sums frames of the same phase: frame k goes to bin (k mod cycle)·bins/cycle.
/// Counts and the additive term are summed, attenuation is averaged.
SinogramStack gated_rebin(const SinogramStack& s, std::size_t bins, std::size_t cycle);

/// Φ(f) for the configured algorithm (F only for OSEM or λ_ref = 0).
double objective(const Projector& p, const DynTensor& f, const SinogramStack& data, const ReconConfig& cfg);

/// Uniform start image: total counts spread so that Σ A f⁰ matches them.
DynTensor initial_image(const DynTensor& sensitivity, const DynTensor& counts);

}  // namespace fppg
