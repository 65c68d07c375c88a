#include "prox.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

#include "transforms.hpp"

namespace fppg {

DynTensor prox_nonneg(const DynTensor& f) {
  DynTensor out = f;
  prox_nonneg_inplace(out.vec());
  return out;
}

void prox_nonneg_inplace(std::span<double> f) {
  for (double& v : f) v = v > 0.0 ? v : 0.0;
}

void prox_l1_inplace(std::span<double> f, double threshold) {
  require(threshold >= 0.0, ErrorCode::NegativeThreshold, "prox_l1: threshold " + std::to_string(threshold));
  for (double& v : f) {
    const double a = std::abs(v) - threshold;
    v = a > 0.0 ? std::copysign(a, v) : 0.0;
  }
}

std::vector<double> prox_l1(std::span<const double> f, double threshold) {
  std::vector<double> out(f.begin(), f.end());
  prox_l1_inplace(out, threshold);
  return out;
}

namespace {

template <typename Matrix>
void check_svd_input(const Matrix& m) {
  if (!m.allFinite()) fail(ErrorCode::SvdFailure, "non-finite entries in SVD input");
}

template <typename Matrix, typename Fn>
auto with_svd(const Matrix& m, unsigned options, Fn&& fn) {
  check_svd_input(m);
  Eigen::BDCSVD<Matrix> svd(m, options);
  if (svd.info() != Eigen::Success) fail(ErrorCode::SvdFailure, "BDCSVD did not converge");
  return fn(svd);
}

// Small slices go through the Hermitian eigenproblem of the Gram matrix of
// the shorter side, several times cheaper than a Jacobi SVD at 8×8.
template <typename Matrix>
Matrix svt_gram(const Matrix& m, double threshold) {
  const bool tall = m.rows() >= m.cols();
  const Matrix g = tall ? Matrix(m.adjoint() * m) : Matrix(m * m.adjoint());
  Eigen::SelfAdjointEigenSolver<Matrix> es(g);
  if (es.info() != Eigen::Success) fail(ErrorCode::SvdFailure, "eigensolver did not converge");
  const Eigen::VectorXd lam = es.eigenvalues();
  Eigen::VectorXd gain(lam.size());
  bool any = false;
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    const double s = std::sqrt(std::max(lam[i], 0.0));
    gain[i] = s > threshold ? (s - threshold) / s : 0.0;
    any = any || gain[i] > 0.0;
  }
  if (!any) return Matrix::Zero(m.rows(), m.cols());
  const Matrix& w = es.eigenvectors();
  const Matrix proj = w * gain.asDiagonal() * w.adjoint();
  return tall ? Matrix(m * proj) : Matrix(proj * m);
}

template <typename Matrix>
Matrix svt_impl(const Matrix& m, double threshold) {
  require(threshold >= 0.0, ErrorCode::NegativeThreshold, "svt: threshold " + std::to_string(threshold));
  if (m.size() == 0) return m;
  check_svd_input(m);
  if (std::min(m.rows(), m.cols()) <= 16) return svt_gram(m, threshold);
  return with_svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV, [&](const auto& svd) -> Matrix {
    const auto& s = svd.singularValues();
    Eigen::Index keep = 0;
    while (keep < s.size() && s[keep] > threshold) ++keep;
    if (keep == 0) return Matrix::Zero(m.rows(), m.cols());
    const Eigen::VectorXd shrunk = (s.head(keep).array() - threshold).matrix();
    return svd.matrixU().leftCols(keep) * shrunk.asDiagonal() * svd.matrixV().leftCols(keep).adjoint();
  });
}

}  // namespace

Eigen::MatrixXd svt(const Eigen::MatrixXd& m, double threshold) { return svt_impl(m, threshold); }
Eigen::MatrixXcd svt(const Eigen::MatrixXcd& m, double threshold) { return svt_impl(m, threshold); }

Eigen::VectorXd singular_values(const Eigen::MatrixXcd& m) {
  if (m.size() == 0) return {};
  if (std::min(m.rows(), m.cols()) <= 16) {
    check_svd_input(m);
    const Eigen::MatrixXcd g = m.rows() >= m.cols() ? Eigen::MatrixXcd(m.adjoint() * m) : Eigen::MatrixXcd(m * m.adjoint());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(g, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) fail(ErrorCode::SvdFailure, "eigensolver did not converge");
    Eigen::VectorXd s = es.eigenvalues().reverse();
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = std::sqrt(std::max(s[i], 0.0));
    return s;
  }
  return with_svd(m, 0, [](const auto& svd) -> Eigen::VectorXd { return svd.singularValues(); });
}

namespace {

// Multiplicity of half-spectrum slice k among all τ slices.
double slice_weight(std::size_t k, std::size_t frames) {
  if (k == 0) return 1.0;
  if (frames % 2 == 0 && k == frames / 2) return 1.0;
  return 2.0;
}

}  // namespace

void prox_tnn_block(std::span<const double> in, const Dims& block, double threshold, std::span<double> out) {
  require(threshold >= 0.0, ErrorCode::NegativeThreshold, "prox_tnn: threshold " + std::to_string(threshold));
  require(in.size() == block.size() && out.size() == block.size(), ErrorCode::DimMismatch,
          "prox_tnn_block: length mismatch");
  const DynTensor t(block, std::vector<double>(in.begin(), in.end()));
  ComplexSliceStack half = rfft_time(t);
  const auto m = static_cast<Eigen::Index>(block.rows);
  const auto n = static_cast<Eigen::Index>(block.cols);
  for (std::size_t k = 0; k < half.dims().frames; ++k) {
    Eigen::Map<Eigen::MatrixXcd> slice(half.slice(k), m, n);
    slice = svt(Eigen::MatrixXcd(slice), threshold);
  }
  const DynTensor back = irfft_time(half, block.frames);
  std::copy(back.vec().begin(), back.vec().end(), out.begin());
}

double tnn_block(std::span<const double> in, const Dims& block) {
  require(in.size() == block.size(), ErrorCode::DimMismatch, "tnn_block: length mismatch");
  const DynTensor t(block, std::vector<double>(in.begin(), in.end()));
  ComplexSliceStack half = rfft_time(t);
  const auto m = static_cast<Eigen::Index>(block.rows);
  const auto n = static_cast<Eigen::Index>(block.cols);
  double total = 0.0;
  for (std::size_t k = 0; k < half.dims().frames; ++k) {
    Eigen::Map<Eigen::MatrixXcd> slice(half.slice(k), m, n);
    total += slice_weight(k, block.frames) * singular_values(slice).sum();
  }
  return total;
}

DynTensor prox_tnn(const DynTensor& f, double threshold) {
  DynTensor out(f.dims());
  if (f.size() == 0) return out;
  prox_tnn_block(f.vec(), f.dims(), threshold, out.vec());
  return out;
}

double tnn(const DynTensor& f) {
  if (f.size() == 0) return 0.0;
  return tnn_block(f.vec(), f.dims());
}

double moreau_residual(std::span<const double> x, std::span<const double> y, const ProxFn& prox) {
  require(x.size() == y.size(), ErrorCode::DimMismatch, "moreau_residual: length mismatch");
  std::vector<double> xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xy[i] = x[i] + y[i];
  const std::vector<double> p = prox(xy);
  require(p.size() == x.size(), ErrorCode::DimMismatch, "moreau_residual: prox changed the length");
  // y − (x + y − p) = p − x
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (xy[i] - p[i]);
    s += r * r;
  }
  return std::sqrt(s);
}

}  // namespace fppg
