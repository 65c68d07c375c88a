#pragma once

#include <complex>
#include <memory>
#include <span>

#include "tensor.hpp"

namespace fppg {

/// Unnormalized forward DFT along the time axis of every pixel.
ComplexSliceStack fft_time(const DynTensor& t);

/// Inverse of fft_time (1/τ scaling). Throws SymmetryViolation when the
/// result has an imaginary part above 1e-6·‖s‖_F.
DynTensor ifft_time(const ComplexSliceStack& s);

/// Half-spectrum variant used internally: returns the τ/2+1 non-redundant
/// slices (the rest follow by conjugate symmetry).
ComplexSliceStack rfft_time(const DynTensor& t);
/// Inverse of rfft_time for a tensor with `frames` time samples.
DynTensor irfft_time(const ComplexSliceStack& half, std::size_t frames);

/// Separable orthonormal DCT-II applied independently to `count` contiguous
/// blocks of shape `block`, each in vec order. Inverse is the DCT-III with
/// matching scaling, which is also the adjoint.
class BlockDct {
 public:
  BlockDct(Dims block, std::size_t count);
  ~BlockDct();
  BlockDct(const BlockDct&) = delete;
  BlockDct& operator=(const BlockDct&) = delete;
  BlockDct(BlockDct&&) noexcept;
  BlockDct& operator=(BlockDct&&) noexcept;

  const Dims& block() const;
  std::size_t count() const;
  std::size_t size() const { return block().size() * count(); }

  void forward(std::span<const double> in, std::span<double> out) const;
  void inverse(std::span<const double> in, std::span<double> out) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

DynTensor dct3(const DynTensor& t);
DynTensor idct3(const DynTensor& t);

}  // namespace fppg
