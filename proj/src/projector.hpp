#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "tensor.hpp"

namespace fppg {

/// Parallel-beam acquisition geometry. Radial bins have the width of one
/// image pixel and are centred on the rotation axis.
struct Geometry {
  std::size_t n_radial = 95;
  std::size_t n_angles = 72;
  std::size_t image_side = 64;
  double fov_mm = 400.0;
  std::vector<double> angles;  // radians, strictly increasing in [0, π)

  /// Evenly spaced angles over [0, π).
  static Geometry uniform(std::size_t image_side, std::size_t n_radial, std::size_t n_angles, double fov_mm);
  /// Desk-scale default: radial bins = ⌈side·√2⌉ rounded so that 64 → 95.
  static Geometry desk(std::size_t image_side, double fov_mm);

  double pixel_mm() const { return fov_mm / static_cast<double>(image_side); }
  std::size_t bins() const { return n_radial * n_angles; }
  void validate() const;
};

/// Ray-driven system matrix of one frame: row (angle a, radial r) holds the
/// exact intersection lengths, in pixel units, of that ray with every pixel
/// it crosses (Siddon traversal). Rows are ordered radial-fastest, matching
/// the (n_radial, n_angles) layout of sinogram frames.
class RayMatrix {
 public:
  explicit RayMatrix(const Geometry& g);

  const Geometry& geometry() const { return geom_; }
  std::size_t rows() const { return row_ptr_.size() - 1; }
  std::size_t nnz() const { return cols_.size(); }

  // y[row] = Σ a_row,j x[j] for rows of the given angle subset.
  void forward(const double* x, double* y, std::size_t subset = 0, std::size_t n_subsets = 1) const;
  // x[j] += Σ a_row,j y[row]
  void backward_add(const double* y, double* x, std::size_t subset = 0, std::size_t n_subsets = 1) const;

 private:
  Geometry geom_;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::uint32_t> cols_;
  std::vector<double> vals_;
};

/// The operator A: per-frame ray sums multiplied by attenuation factors.
/// Frames are independent; attenuation is a (n_radial, n_angles, τ) tensor
/// of factors in (0, 1] or empty for none.
class Projector {
 public:
  explicit Projector(const Geometry& g);
  Projector(std::shared_ptr<const RayMatrix> rays, DynTensor atten);

  const Geometry& geometry() const { return rays_->geometry(); }
  std::shared_ptr<const RayMatrix> rays() const { return rays_; }
  const DynTensor& attenuation() const { return atten_; }
  Projector with_attenuation(DynTensor atten) const { return Projector(rays_, std::move(atten)); }

  Dims image_dims(std::size_t frames) const;
  Dims sino_dims(std::size_t frames) const;

  DynTensor forward(const DynTensor& f) const;
  DynTensor backward(const DynTensor& s) const;
  /// Aᵀ1 for every frame.
  DynTensor sensitivity(std::size_t frames) const;

  // Single frame, restricted to angles a with a % n_subsets == subset.
  // `sino` is a full-size frame buffer; only subset bins are written/read.
  void forward_frame(std::span<const double> img, std::size_t frame, std::span<double> sino, std::size_t subset = 0,
                     std::size_t n_subsets = 1) const;
  void backward_frame(std::span<const double> sino, std::size_t frame, std::span<double> img, std::size_t subset = 0,
                      std::size_t n_subsets = 1) const;

 private:
  double atten_at(std::size_t bin, std::size_t frame) const {
    return atten_.empty() ? 1.0 : atten_[frame * atten_.rows() * atten_.cols() + bin];
  }
  void check_frames(std::size_t frames) const;

  std::shared_ptr<const RayMatrix> rays_;
  DynTensor atten_;
};

/// Projection data for a dynamic acquisition: measured counts g, the
/// additive random+scatter estimate γ, and attenuation factors.
struct SinogramStack {
  Geometry geometry;
  DynTensor counts;
  DynTensor additive;
  DynTensor atten;

  std::size_t frames() const { return counts.frames(); }
  std::vector<double> frame_counts() const;
  void validate() const;
};

/// ∇F = Aᵀ1 − Aᵀ(g/(Af+γ)). Bins with g = 0 contribute the sensitivity
/// term only. Throws DivisionByZeroBin when Af+γ = 0 where g > 0.
DynTensor kl_gradient(const Projector& p, const DynTensor& f, const DynTensor& g, const DynTensor& gamma);

/// F(f) = ⟨Af, 1⟩ − ⟨log(Af+γ), g⟩ with 0·log 0 = 0.
double kl_objective(const Projector& p, const DynTensor& f, const DynTensor& g, const DynTensor& gamma);

/// Same as kl_objective/kl_gradient but from an already computed Af.
double kl_objective_from_projection(const DynTensor& af, const DynTensor& g, const DynTensor& gamma);
DynTensor kl_ratio(const DynTensor& af, const DynTensor& g, const DynTensor& gamma);

}  // namespace fppg
