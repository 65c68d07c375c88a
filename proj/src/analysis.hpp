#pragma once

#include <span>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace fppg {

/// 100·RMSE(recon − truth)/mean(truth).
double rrmse(const DynTensor& recon, const DynTensor& truth);

/// Windowed SSIM of one m×n frame (column-major): 11×11 Gaussian window
/// with σ = 1.5 over every fully contained position, C₁ = (0.01L)²,
/// C₂ = (0.03L)².
double ssim_frame(std::span<const double> a, std::span<const double> b, std::size_t rows, std::size_t cols,
                  double dynamic_range);
/// Frame-wise SSIM averaged over frames.
double ssim(const DynTensor& recon, const DynTensor& truth, double dynamic_range);

struct MetricReport {
  int realization = 0;
  double rrmse = 0.0;  // percent, whole dynamic image
  double ssim = 0.0;   // mean over frames
  std::vector<double> rrmse_frames;
  std::vector<double> ssim_frames;
};

MetricReport evaluate_metrics(const DynTensor& recon, const DynTensor& truth, double dynamic_range,
                              int realization = 0);

using Seed = std::pair<std::size_t, std::size_t>;  // (row, col)

/// 4-connected growth from `seed` on one frame: a neighbour joins while
/// |value − region mean| ≤ threshold; the mean is updated as voxels join in
/// breadth-first order. Enclosed holes are filled afterwards.
std::vector<unsigned char> grow_region(std::span<const double> frame, std::size_t rows, std::size_t cols, Seed seed,
                                       double threshold);

/// Fills background components that do not touch the border (8-connected
/// background, the complement of 4-connected foreground).
void fill_holes(std::vector<unsigned char>& mask, std::size_t rows, std::size_t cols);

struct LvResult {
  DynTensor masks;                     // m×n×τ, 0/1
  std::vector<double> volume_curve;    // voxels per frame
  int threshold_used = 0;
  std::size_t misclassified = 0;       // Σ|mask − truth|
  std::vector<double> rmse_by_threshold;
  std::vector<double> area_fraction;   // volume / true volume per frame
  double mean_area_fraction = 0.0;
};

/// The dynamic image is scaled to 0–255 by its global maximum, each
/// threshold in `thresholds` segments every frame, and the single
/// threshold whose masks have the smallest RMSE against `truth_masks` wins.
LvResult region_grow_lv(const DynTensor& frames, Seed seed, std::span<const int> thresholds,
                        const DynTensor& truth_masks);
LvResult region_grow_lv(const DynTensor& frames, Seed seed, const DynTensor& truth_masks);

/// Bilinear samples along p0 → p1, points given as (row, col).
std::vector<double> line_profile(const DynTensor& t, std::size_t frame, std::pair<double, double> p0,
                                 std::pair<double, double> p1, std::size_t samples);

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// Mean, standard error and Student-t 95% confidence interval.
Summary aggregate(std::span<const double> values);

/// Summary of the paired differences a − b.
Summary paired_difference(std::span<const double> a, std::span<const double> b);

}  // namespace fppg
