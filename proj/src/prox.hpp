#pragma once

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace fppg {

/// P₊: elementwise max{f, 0}.
DynTensor prox_nonneg(const DynTensor& f);
void prox_nonneg_inplace(std::span<double> f);

/// Soft thresholding, max{|f|−t, 0}·sign(f). Throws NegativeThreshold.
std::vector<double> prox_l1(std::span<const double> f, double threshold);
void prox_l1_inplace(std::span<double> f, double threshold);

/// Singular value soft thresholding U·max{Σ−t, 0}·Vᴴ.
Eigen::MatrixXd svt(const Eigen::MatrixXd& m, double threshold);
Eigen::MatrixXcd svt(const Eigen::MatrixXcd& m, double threshold);

Eigen::VectorXd singular_values(const Eigen::MatrixXcd& m);

/// Tensor nuclear norm: Σ over all τ time-frequency slices of the nuclear
/// norm of the unnormalized DFT slice.
double tnn(const DynTensor& f);

/// Per-slice singular value thresholding in the time-frequency domain,
/// then back to a real tensor. Only the τ/2+1 non-redundant slices are
/// thresholded; the others are their conjugates, so the result is real by
/// construction. With the unnormalized DFT this is the exact proximity
/// operator of t·TNN/τ.
DynTensor prox_tnn(const DynTensor& f, double threshold);

// Block forms over a contiguous vec-ordered block, used for patches.
void prox_tnn_block(std::span<const double> in, const Dims& block, double threshold, std::span<double> out);
double tnn_block(std::span<const double> in, const Dims& block);

using ProxFn = std::function<std::vector<double>(std::span<const double>)>;

/// ‖y − (I − prox)(x + y)‖; zero iff y ∈ ∂ψ(x) for prox = prox_ψ.
double moreau_residual(std::span<const double> x, std::span<const double> y, const ProxFn& prox);

}  // namespace fppg
