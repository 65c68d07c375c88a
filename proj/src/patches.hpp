#pragma once

#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace fppg {

struct PatchSettings {
  Dims patch{8, 8, 4};  // rows, cols, frames
  Dims span{4, 4, 2};   // stride between patch origins
  // Spatial reflection padding per side; negative means half the patch size.
  long pad_rows = -1;
  long pad_cols = -1;

  std::size_t resolved_pad_rows() const { return pad_rows < 0 ? patch.rows / 2 : static_cast<std::size_t>(pad_rows); }
  std::size_t resolved_pad_cols() const { return pad_cols < 0 ? patch.cols / 2 : static_cast<std::size_t>(pad_cols); }
};

/// The patch operator Q. The image is symmetrically reflection-padded in
/// the two spatial directions, then overlapping patches are gathered into
/// one vector of length L = patches · block size, each patch in vec order.
/// Every patch slot refers to exactly one image voxel, so QᵀQ is diagonal
/// with the per-voxel coverage counts.
class PatchExtractor {
 public:
  PatchExtractor(Dims image, PatchSettings settings);

  const Dims& image_dims() const { return image_; }
  const Dims& block() const { return settings_.patch; }
  const PatchSettings& settings() const { return settings_; }
  Dims padded_dims() const { return padded_; }
  std::size_t patch_count() const { return patch_count_; }
  /// L
  std::size_t length() const { return index_.size(); }

  /// q = Qf
  std::vector<double> extract(const DynTensor& f) const;
  void extract(std::span<const double> f, std::span<double> q) const;
  /// f = Qᵀq (reflection-padded contributions fold back onto their source voxels)
  DynTensor fold_adjoint(std::span<const double> q) const;
  void fold_adjoint_add(std::span<const double> q, std::span<double> f) const;

  /// Diagonal of QᵀQ.
  DynTensor coverage() const;
  double max_coverage() const;

  /// Image voxel behind each slot.
  const std::vector<std::uint32_t>& index_map() const { return index_; }

 private:
  Dims image_;
  PatchSettings settings_;
  Dims padded_;
  std::size_t patch_count_ = 0;
  std::vector<std::uint32_t> index_;
};

/// Patch origins along one axis of length `extent`: 0, s, 2s, … plus a final
/// origin flush with the end when the stride does not land there.
std::vector<std::size_t> patch_origins(std::size_t extent, std::size_t patch, std::size_t stride);

/// Frame-wise bilinear rotation by 45° about the image centre onto a
/// ⌈side·√2⌉ canvas with zero fill. The adjoint applies the transpose of the
/// same interpolation stencil.
class Rotation45 {
 public:
  Rotation45(std::size_t side, std::size_t frames);

  std::size_t side() const { return side_; }
  std::size_t canvas_side() const { return canvas_; }
  Dims input_dims() const { return {side_, side_, frames_}; }
  Dims output_dims() const { return {canvas_, canvas_, frames_}; }

  DynTensor apply(const DynTensor& f) const;
  DynTensor adjoint(const DynTensor& r) const;
  void adjoint_add(const DynTensor& r, DynTensor& f) const;

 private:
  struct Tap {
    std::uint32_t src;
    double weight;
  };
  std::size_t side_;
  std::size_t frames_;
  std::size_t canvas_;
  std::vector<std::uint32_t> tap_ptr_;  // per canvas pixel
  std::vector<Tap> taps_;
};

DynTensor rotate45(const DynTensor& f);
DynTensor rotate45_adjoint(const DynTensor& r, std::size_t side);

}  // namespace fppg
