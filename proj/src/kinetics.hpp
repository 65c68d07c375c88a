#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace fppg {

/// Two-tissue compartment parameters. Rates are per minute, Va is a
/// fraction.
struct KineticParams {
  double K1 = 0.0;
  double k2 = 0.0;
  double k3 = 0.0;
  double k4 = 0.0;
  double Va = 0.0;

  std::array<double, 5> as_array() const { return {K1, k2, k3, k4, Va}; }
  static KineticParams from_array(const std::array<double, 5>& a) { return {a[0], a[1], a[2], a[3], a[4]}; }
};

/// Kᵢ = K₁k₃/(k₂+k₃), defined as 0 when k₂+k₃ = 0.
double ki(const KineticParams& p);

/// Frame timing in seconds.
struct FrameSchedule {
  std::vector<double> start;
  std::vector<double> duration;

  std::size_t size() const { return duration.size(); }
  double total() const;
  void validate() const;

  /// Back-to-back frames from t = 0.
  static FrameSchedule from_durations(std::vector<double> durations);
  /// 6×5 s, 3×10 s, 3×20 s, 2×30 s, 2×60 s, 2×150 s, 10×300 s.
  static FrameSchedule brain28();
};

/// Tri-exponential arterial input (Feng form), zero before t = 0:
///   Ca(t) = (A1·t − A2 − A3)e^{λ1 t} + A2 e^{λ2 t} + A3 e^{λ3 t},  t in min.
struct InputFunction {
  double A1 = 851.1225;
  double A2 = 21.8798;
  double A3 = 20.8113;
  double L1 = -4.1339;
  double L2 = -0.1191;
  double L3 = -0.0104;

  /// Ca at time t in seconds.
  double operator()(double t_seconds) const;
  std::vector<double> sample(std::span<const double> t_seconds) const;
  void validate() const;
};

enum class BloodConvention { Fractional, Additive };

/// Frame-averaged tissue signal of the two-tissue model:
///   Fractional: (1−Va)(C₁+C₂) + Va·Ca,   Additive: (C₁+C₂) + Va·Ca.
std::vector<double> two_tissue_tac(const KineticParams& p, const InputFunction& input, const FrameSchedule& frames,
                                   BloodConvention conv = BloodConvention::Fractional);

/// ∂TAC/∂(K1, k2, k3, k4, Va), one row per frame.
std::vector<std::array<double, 5>> two_tissue_jacobian(const KineticParams& p, const InputFunction& input,
                                                       const FrameSchedule& frames,
                                                       BloodConvention conv = BloodConvention::Fractional);

struct FitOptions {
  double lower = 0.0;
  double upper = 5.0;
  std::size_t max_iterations = 200;
  double param_tol = 1e-8;
  double damping = 1e-3;
  double weight_floor = 0.01;  // fraction of the TAC maximum
  BloodConvention convention = BloodConvention::Fractional;
};

struct FitResult {
  KineticParams params;
  double residual = 0.0;  // Σ wᵢ(tacᵢ − modelᵢ)²
  std::size_t iterations = 0;
  bool converged = false;  // false when the iteration cap was hit
};

/// wᵢ = durationᵢ / max(tacᵢ, floor·max(tac)).
std::vector<double> default_weights(std::span<const double> tac, const FrameSchedule& frames, double floor = 0.01);

/// Box-constrained Levenberg–Marquardt fit of the two-tissue model.
FitResult wnls_fit(std::span<const double> tac, const InputFunction& input, const FrameSchedule& frames,
                   std::span<const double> weights, const KineticParams& init, const FitOptions& opts = {});

/// Per-voxel maps; unmasked voxels are 0.
struct ParametricMaps {
  DynTensor K1, k2, k3, k4, Va, Ki;
  DynTensor failures;  // 1 where the fit threw or hit the iteration cap
  std::size_t failed = 0;

  const DynTensor& by_name(const std::string& name) const;
};

inline constexpr std::array<const char*, 6> kParamNames{"K1", "k2", "k3", "k4", "Va", "Ki"};

/// `dyn` holds activity concentrations (frames on the schedule), `mask` is
/// m×n×1 with nonzero entries selecting voxels.
ParametricMaps parametric_images(const DynTensor& dyn, const InputFunction& input, const FrameSchedule& frames,
                                 const DynTensor& mask, const KineticParams& init = {0.1, 0.1, 0.1, 0.1, 0.1},
                                 const FitOptions& opts = {});

}  // namespace fppg
