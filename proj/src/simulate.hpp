#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kinetics.hpp"
#include "projector.hpp"

namespace fppg {

enum class PhantomKind { CardiacLung, Brain };

const char* to_string(PhantomKind k);
PhantomKind parse_phantom_kind(const std::string& s);

/// Procedural phantom description. Lengths are in mm for a 400 mm (cardiac)
/// or 256 mm (brain) field of view and scale with fov_mm.
struct PhantomSpec {
  PhantomKind kind = PhantomKind::CardiacLung;
  std::size_t side = 64;
  std::size_t frames = 60;
  double fov_mm = 400.0;
  std::vector<double> frame_durations;  // seconds
  std::size_t supersample = 3;

  // cardiac/lung
  double frame_seconds = 0.1;
  double cardiac_period_s = 1.0;
  double breathing_period_s = 3.0;
  double lv_area_mm2 = 1810.0;       // mean cavity area
  double lv_area_amp_mm2 = 800.0;    // cavity area = mean + amp·cos(2π phase)
  double liver_amplitude_mm = 12.0;  // vertical excursion over the breathing cycle
  double act_body = 1.0;
  double act_lung = 0.25;
  double act_myocardium = 8.0;
  double act_blood = 1.6;
  double act_liver = 5.0;

  // brain: region parameters for scalp, gray, white, lesion 1..3
  std::vector<KineticParams> brain_params;
  InputFunction input;
  BloodConvention convention = BloodConvention::Fractional;

  static PhantomSpec cardiac(std::size_t side = 64, std::size_t breathing_cycles = 2);
  static PhantomSpec brain(std::size_t side = 96);

  std::size_t frames_per_cardiac_cycle() const;
  std::size_t frames_per_breathing_cycle() const;
  FrameSchedule schedule() const;
  void validate() const;
};

struct NoiseSpec {
  double mean_counts_per_frame = 1.5e4;
  double scatter_fraction = 0.40;
  double random_fraction = 0.05;
  std::uint64_t rng_seed = 1;

  static NoiseSpec cardiac() { return {1.5e4, 0.40, 0.05, 1}; }
  static NoiseSpec brain() { return {1.5e5, 0.29, 0.02, 1}; }
  void validate() const;
};

/// TRUE plus everything the evaluation needs about it.
struct Phantom {
  DynTensor activity;  // m×n×τ
  DynTensor labels;    // region label at pixel centres, m×n×τ (cardiac) or m×n×1 (brain)
  DynTensor mu_map;    // attenuation per mm, m×n×1
  DynTensor lv_masks;  // cardiac: 1 inside the LV cavity, m×n×τ
  std::vector<double> lv_area_px;        // analytic cavity area per frame, pixels
  std::pair<std::size_t, std::size_t> lv_seed{0, 0};  // (row, col)
  std::vector<std::string> region_names;  // index = label
  std::vector<KineticParams> region_params;  // brain, index = label
  FrameSchedule schedule;
};

// label values
namespace label {
inline constexpr int Air = 0;
inline constexpr int Body = 1;
inline constexpr int Lung = 2;
inline constexpr int Myocardium = 3;
inline constexpr int Blood = 4;
inline constexpr int Liver = 5;
inline constexpr int Scalp = 1;
inline constexpr int Gray = 2;
inline constexpr int White = 3;
inline constexpr int Lesion1 = 4;
inline constexpr int Lesion2 = 5;
inline constexpr int Lesion3 = 6;
}  // namespace label

Phantom gen_cardiac_lung(const PhantomSpec& spec);
Phantom gen_brain(const PhantomSpec& spec);
Phantom generate_phantom(const PhantomSpec& spec);

/// exp(−∫μ) along every ray, repeated for each frame.
DynTensor attenuation_factors(const DynTensor& mu_map, const Geometry& g, std::size_t frames);

struct Simulation {
  SinogramStack data;
  /// Expected counts per unit activity in each frame: Af·scale[k] are the
  /// expected trues of frame k, so reconstructions estimate truth·scale.
  std::vector<double> frame_scale;
};

/// Poisson data g ~ Poisson(Af·s + γ) with γ = scatter + randoms. `durations`
/// weights frames by acquisition time (empty means equal frames).
Simulation simulate_sinograms(const DynTensor& truth, const Projector& proj, const NoiseSpec& noise,
                              std::span<const double> durations = {});

/// Truth expressed in reconstruction units (frame k multiplied by scale[k]).
DynTensor scale_frames(const DynTensor& t, std::span<const double> scale);

/// Radial Gaussian smoothing of every sinogram row, FWHM in bins, zero outside.
DynTensor smooth_radial(const DynTensor& sino, double fwhm_bins);

}  // namespace fppg
