#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "patches.hpp"
#include "tensor.hpp"
#include "transforms.hpp"

namespace fppg {

/// One sparsity-promoting penalty φ(Bf). B is built as
///   [optional 45° rotation] → [optional patch extraction Q] → [transform]
/// where the transform is the blockwise orthonormal 3D DCT or the identity.
/// φ is either the ℓ1 norm or the blockwise tensor nuclear norm (each block
/// is the whole image or one patch), scaled by 1/frames to match the
/// per-slice threshold of prox_tnn.
class PenaltyTerm {
 public:
  enum class Transform { Dct, Identity };
  enum class Shrink { L1, Tnn };

  PenaltyTerm(Dims image, Transform transform, Shrink shrink, std::optional<PatchSettings> patches, bool rotated);

  Transform transform() const { return transform_; }
  Shrink shrink() const { return shrink_; }
  bool rotated() const { return rotation_.has_value(); }
  const std::optional<PatchExtractor>& patches() const { return patches_; }

  std::size_t coeff_size() const { return block_.size() * blocks_; }
  const Dims& block() const { return block_; }
  std::size_t blocks() const { return blocks_; }

  /// coeff = B f
  void apply(const DynTensor& f, std::vector<double>& coeff) const;
  /// out += Bᵀ c
  void adjoint_add(std::span<const double> coeff, DynTensor& out) const;
  /// v ← prox_{t·φ}(v)
  void prox(std::span<double> v, double threshold) const;
  /// φ(v)
  double value(std::span<const double> v) const;
  /// ‖B‖₂², exact for unrotated terms, power-iteration estimate otherwise.
  double opnorm_sq() const { return opnorm_sq_; }

 private:
  double estimate_opnorm_sq() const;

  Dims image_;
  Transform transform_;
  Shrink shrink_;
  std::optional<Rotation45> rotation_;
  std::optional<PatchExtractor> patches_;
  Dims block_;
  std::size_t blocks_ = 1;
  std::shared_ptr<BlockDct> dct_;
  double opnorm_sq_ = 1.0;
};

}  // namespace fppg
