#include "penalty.hpp"

#include <cmath>
#include <random>

#include "prox.hpp"

namespace fppg {

PenaltyTerm::PenaltyTerm(Dims image, Transform transform, Shrink shrink, std::optional<PatchSettings> patches,
                         bool rotated)
    : image_(image), transform_(transform), shrink_(shrink) {
  Dims stage = image;
  if (rotated) {
    require(image.rows == image.cols, ErrorCode::DimMismatch, "rotated penalty needs square frames");
    rotation_.emplace(image.rows, image.frames);
    stage = rotation_->output_dims();
  }
  if (patches) {
    patches_.emplace(stage, *patches);
    block_ = patches_->block();
    blocks_ = patches_->patch_count();
  } else {
    block_ = stage;
    blocks_ = 1;
  }
  if (transform_ == Transform::Dct) dct_ = std::make_shared<BlockDct>(block_, blocks_);

  if (rotation_) {
    opnorm_sq_ = estimate_opnorm_sq();
  } else if (patches_) {
    opnorm_sq_ = patches_->max_coverage();  // QᵀQ is diagonal
  } else {
    opnorm_sq_ = 1.0;
  }
}

void PenaltyTerm::apply(const DynTensor& f, std::vector<double>& coeff) const {
  require(f.dims() == image_, ErrorCode::DimMismatch, "penalty apply: dims " + to_string(f.dims()));
  coeff.resize(coeff_size());
  const DynTensor* src = &f;
  DynTensor rotated;
  if (rotation_) {
    rotated = rotation_->apply(f);
    src = &rotated;
  }
  if (patches_)
    patches_->extract(src->vec(), coeff);
  else
    std::copy(src->vec().begin(), src->vec().end(), coeff.begin());
  if (dct_) dct_->forward(coeff, coeff);
}

void PenaltyTerm::adjoint_add(std::span<const double> coeff, DynTensor& out) const {
  require(coeff.size() == coeff_size() && out.dims() == image_, ErrorCode::DimMismatch, "penalty adjoint: sizes");
  std::vector<double> buf(coeff.begin(), coeff.end());
  if (dct_) dct_->inverse(buf, buf);
  if (!rotation_) {
    if (patches_)
      patches_->fold_adjoint_add(buf, out.vec());
    else
      for (std::size_t i = 0; i < buf.size(); ++i) out[i] += buf[i];
    return;
  }
  DynTensor canvas(rotation_->output_dims());
  if (patches_)
    patches_->fold_adjoint_add(buf, canvas.vec());
  else
    canvas.vec() = std::move(buf);
  rotation_->adjoint_add(canvas, out);
}

void PenaltyTerm::prox(std::span<double> v, double threshold) const {
  require(v.size() == coeff_size(), ErrorCode::DimMismatch, "penalty prox: size");
  if (shrink_ == Shrink::L1) {
    prox_l1_inplace(v, threshold);
    return;
  }
  const std::size_t bs = block_.size();
  parallel_for(blocks_, [&](std::size_t b) {
    auto blk = v.subspan(b * bs, bs);
    prox_tnn_block(blk, block_, threshold, blk);
  });
}

double PenaltyTerm::value(std::span<const double> v) const {
  require(v.size() == coeff_size(), ErrorCode::DimMismatch, "penalty value: size");
  if (shrink_ == Shrink::L1) {
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s;
  }
  const std::size_t bs = block_.size();
  std::vector<double> per_block(blocks_);
  parallel_for(blocks_, [&](std::size_t b) { per_block[b] = tnn_block(v.subspan(b * bs, bs), block_); });
  double s = 0.0;
  for (double x : per_block) s += x;
  return s / static_cast<double>(block_.frames);
}

double PenaltyTerm::estimate_opnorm_sq() const {
  // power iteration on BᵀB from a fixed seed; the 2% margin keeps the
  // estimate above the true norm
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> nd;
  DynTensor x(image_);
  for (double& v : x.vec()) v = nd(rng);
  x *= 1.0 / frobenius(x);
  double est = 0.0;
  std::vector<double> coeff;
  for (int it = 0; it < 60; ++it) {
    apply(x, coeff);
    DynTensor y(image_);
    adjoint_add(coeff, y);
    const double n = frobenius(y);
    if (n == 0.0) return 1.0;
    const double prev = est;
    est = n;
    y *= 1.0 / n;
    x = std::move(y);
    if (it > 5 && std::abs(est - prev) <= 1e-6 * est) break;
  }
  return est * 1.02;
}

}  // namespace fppg
