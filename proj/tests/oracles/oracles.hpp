#pragma once

// Slow, direct reference implementations used only by the tests. None of
// them calls into the library's numerical kernels.

#include <Eigen/Dense>

#include <complex>
#include <functional>
#include <vector>

#include "kinetics.hpp"
#include "patches.hpp"
#include "tensor.hpp"

namespace oracle {

using fppg::Dims;
using fppg::DynTensor;

/// O(τ²) DFT along time; element (i, j, k) at k·m·n + j·m + i.
std::vector<std::complex<double>> dft_time(const DynTensor& t);
/// Inverse of dft_time, real part only.
DynTensor idft_time(const std::vector<std::complex<double>>& s, Dims d);

/// Orthonormal DCT-II matrix, C(k, n) = √((2−δₖ₀)/N)·cos(π(2n+1)k/2N).
Eigen::MatrixXd dct_matrix(std::size_t n);
/// Dense (C_τ ⊗ C_n ⊗ C_m)·vec(t).
DynTensor dense_dct3(const DynTensor& t);

/// Half-sample symmetric padding of every frame.
DynTensor pad_symmetric(const DynTensor& f, std::size_t pr, std::size_t pc);
/// Patches cut from the explicitly padded image, origins every `span` plus a
/// final one flush with the end; patch order rows, cols, time.
std::vector<double> dense_extract(const DynTensor& f, const fppg::PatchSettings& s);
std::size_t dense_patch_count(Dims image, const fppg::PatchSettings& s);

/// Columns of a linear map on R^n found by applying it to unit vectors.
Eigen::MatrixXd dense_matrix(std::size_t n_in, const std::function<std::vector<double>(const std::vector<double>&)>& op);

/// Central differences of a scalar function.
std::vector<double> central_gradient(const std::function<double(const std::vector<double>&)>& fn,
                                     const std::vector<double>& x, double h);

/// argmin_u ½(u−f)² + t|u| by exhaustive search over [−3, 3] with step 1e-4.
double brute_prox_l1(double f, double t);

/// Singular values and vectors by power iteration with deflation.
struct PowerSvd {
  std::vector<double> sigma;
  std::vector<Eigen::VectorXcd> u, v;
};
PowerSvd power_svd(const Eigen::MatrixXcd& m, int max_iter = 20000, double tol = 1e-15);
Eigen::MatrixXcd svt_power(const Eigen::MatrixXcd& m, double t);
double nuclear_norm_power(const Eigen::MatrixXcd& m);

/// Two-tissue ODE integrated with classical RK4 at step dt seconds, frame
/// averages by the trapezoid rule on the same grid.
std::vector<double> tac_rk4(const fppg::KineticParams& p, const fppg::InputFunction& input,
                            const fppg::FrameSchedule& frames, fppg::BloodConvention conv, double dt_seconds = 0.01);

/// SSIM of two column-major frames from the textbook formula: explicit
/// 11×11 Gaussian weights (σ = 1.5) at every fully contained position.
double naive_ssim(const std::vector<double>& a, const std::vector<double>& b, std::size_t rows, std::size_t cols,
                  double L);

/// Chord length 2√(r²−s²) of a disk of radius r at signed distance s.
double disk_chord(double r, double s);

}  // namespace oracle
