#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "prox.hpp"
#include "test_util.hpp"
#include "transforms.hpp"

using namespace fppg;
using testutil::random_tensor;
using testutil::rel_diff;

TEST(DynTensor, VecOrderMatchesIndexFormula) {
  DynTensor t({3, 4, 5});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(t(i, j, k), static_cast<double>(k * 12 + j * 3 + i));
}

TEST(DynTensor, TensOfVecIsBitIdentical) {
  const DynTensor t = random_tensor({4, 3, 2}, 1);
  const DynTensor back = DynTensor::tens(t.dims(), t.vec());
  EXPECT_EQ(back.vec(), t.vec());
  EXPECT_EQ(back.dims(), t.dims());
}

TEST(DynTensor, RejectsWrongLength) {
  EXPECT_THROW(DynTensor({2, 2, 2}, std::vector<double>(7)), Error);
}

TEST(DynTensor, Frobenius) {
  EXPECT_EQ(frobenius(DynTensor({3, 3, 3})), 0.0);
  EXPECT_NEAR(frobenius(DynTensor({2, 3, 4}, 1.0)), std::sqrt(24.0), 1e-15);
  const DynTensor t = random_tensor({5, 4, 3}, 2);
  EXPECT_EQ(frobenius(t), norm2(t.vec()));
}

TEST(DtnFormat, RoundTripAndLayout) {
  const DynTensor t = random_tensor({3, 2, 4}, 3);
  const auto bytes = encode_dtn(t);
  ASSERT_EQ(bytes.size(), 4u + 12u + 8u * t.size());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DTN1");
  EXPECT_EQ(bytes[4], 3);
  EXPECT_EQ(bytes[8], 2);
  EXPECT_EQ(bytes[12], 4);
  const DynTensor back = decode_dtn(bytes);
  EXPECT_EQ(back.vec(), t.vec());

  const auto path = (std::filesystem::temp_directory_path() / "fppg_test_roundtrip.dtn").string();
  write_dtn(path, t);
  EXPECT_EQ(read_dtn(path).vec(), t.vec());
  std::remove(path.c_str());
}

TEST(DtnFormat, RejectsBadInput) {
  std::vector<unsigned char> junk{'D', 'T', 'N', '2', 0, 0, 0, 0};
  EXPECT_THROW(decode_dtn(junk), Error);
  auto bytes = encode_dtn(DynTensor({2, 2, 1}, 1.0));
  bytes.pop_back();
  EXPECT_THROW(decode_dtn(bytes), Error);
  EXPECT_THROW(read_dtn("/nonexistent/dir/file.dtn"), Error);
}

// ---- time-axis DFT ----

TEST(FftTime, SingleFrameIsIdentity) {
  const DynTensor t = random_tensor({3, 4, 1}, 4);
  const auto s = fft_time(t);
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_NEAR(s.raw()[i].real(), t[i], 1e-15);
    EXPECT_EQ(s.raw()[i].imag(), 0.0);
  }
}

TEST(FftTime, ConstantSignalIsDcOnly) {
  const DynTensor t({2, 2, 4}, 1.5);
  const auto s = fft_time(t);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(std::abs(s.raw()[i] - std::complex<double>(6.0, 0.0)), 0.0, 1e-12);
  for (std::size_t i = 4; i < 16; ++i) EXPECT_NEAR(std::abs(s.raw()[i]), 0.0, 1e-12);
}

TEST(FftTime, MatchesNaiveDft) {
  for (std::size_t tau : {5u, 6u, 7u}) {
    const DynTensor t = random_tensor({3, 3, tau}, 5 + static_cast<unsigned>(tau));
    const auto s = fft_time(t);
    const auto ref = oracle::dft_time(t);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      num += std::norm(s.raw()[i] - ref[i]);
      den += std::norm(ref[i]);
    }
    EXPECT_LT(std::sqrt(num / den), 1e-10) << "tau " << tau;
  }
}

TEST(FftTime, ConjugateSymmetryAndParseval) {
  const DynTensor t = random_tensor({4, 3, 6}, 6);
  const auto s = fft_time(t);
  for (std::size_t k = 1; k < 6; ++k)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(std::abs(s(i, j, k) - std::conj(s(i, j, 6 - k))), 0.0, 1e-12);
  EXPECT_NEAR(s.frobenius(), std::sqrt(6.0) * frobenius(t), 1e-10 * frobenius(t));
}

TEST(FftTime, RoundTrip) {
  const DynTensor t = random_tensor({4, 4, 6}, 7);
  EXPECT_LT(rel_diff(ifft_time(fft_time(t)), t), 1e-10);
  const DynTensor odd = random_tensor({3, 5, 7}, 8);
  EXPECT_LT(rel_diff(irfft_time(rfft_time(odd), 7), odd), 1e-10);
}

TEST(FftTime, ZeroStackInvertsToZero) {
  ComplexSliceStack z({3, 3, 4});
  const DynTensor t = ifft_time(z);
  EXPECT_EQ(t.max(), 0.0);
  EXPECT_EQ(t.min(), 0.0);
}

TEST(FftTime, RampFromOracleSpectrum) {
  DynTensor ramp({2, 2, 8});
  for (std::size_t k = 0; k < 8; ++k)
    for (std::size_t p = 0; p < 4; ++p) ramp[k * 4 + p] = static_cast<double>(k) + 0.25 * static_cast<double>(p);
  const auto spec = oracle::dft_time(ramp);
  ComplexSliceStack s({2, 2, 8});
  s.raw() = spec;
  EXPECT_LT(rel_diff(ifft_time(s), ramp), 1e-10);
}

TEST(FftTime, AsymmetricSpectrumIsRejected) {
  ComplexSliceStack s({2, 2, 4});
  s(0, 0, 1) = {0.0, 1.0};  // no conjugate partner in slice 3
  try {
    ifft_time(s);
    FAIL() << "expected SymmetryViolation";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SymmetryViolation);
  }
}

TEST(FftTime, Linearity) {
  const DynTensor x = random_tensor({3, 2, 5}, 9), y = random_tensor({3, 2, 5}, 10);
  const auto fx = fft_time(x), fy = fft_time(y), fz = fft_time(2.0 * x + (-3.0) * y);
  for (std::size_t i = 0; i < fz.raw().size(); ++i)
    EXPECT_NEAR(std::abs(fz.raw()[i] - (2.0 * fx.raw()[i] - 3.0 * fy.raw()[i])), 0.0, 1e-12);
}

// ---- 3D DCT ----

TEST(Dct3, ConstantTensorHasSingleCoefficient) {
  const DynTensor t({4, 4, 4}, 2.0);
  const DynTensor c = dct3(t);
  EXPECT_NEAR(c(0, 0, 0), 16.0, 1e-12);
  double rest = 0.0;
  for (std::size_t i = 1; i < c.size(); ++i) rest = std::max(rest, std::abs(c[i]));
  EXPECT_LT(rest, 1e-12);
  EXPECT_EQ(frobenius(dct3(DynTensor({3, 3, 3}))), 0.0);
}

TEST(Dct3, MatchesDenseMatrix) {
  for (Dims d : {Dims{5, 4, 3}, Dims{8, 8, 4}, Dims{8, 8, 1}, Dims{1, 6, 3}, Dims{4, 1, 1}}) {
    const DynTensor t = random_tensor(d, 11);
    EXPECT_LT(rel_diff(dct3(t), oracle::dense_dct3(t)), 1e-10) << to_string(d);
    EXPECT_LT(rel_diff(idct3(dct3(t)), t), 1e-10) << to_string(d);
  }
}

TEST(Dct3, DenseMatrixIsOrthonormal) {
  for (std::size_t n : {1u, 2u, 5u, 8u}) {
    const auto c = oracle::dct_matrix(n);
    EXPECT_LT((c * c.transpose() - Eigen::MatrixXd::Identity(n, n)).norm(), 1e-12);
  }
}

TEST(Dct3, ParsevalRoundTripAndAdjoint) {
  const DynTensor t = random_tensor({6, 6, 4}, 12);
  EXPECT_NEAR(frobenius(dct3(t)), frobenius(t), 1e-10 * frobenius(t));
  EXPECT_LT(rel_diff(idct3(dct3(t)), t), 1e-10);
  const DynTensor y = random_tensor({6, 6, 4}, 13);
  EXPECT_NEAR(dot(dct3(t), y), dot(t, idct3(y)), 1e-10 * frobenius(t) * frobenius(y));
}

TEST(Dct3, ImpulseInvertsToConstant) {
  DynTensor c({2, 2, 2});
  c(0, 0, 0) = 1.0;
  const DynTensor t = idct3(c);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(t[i], 1.0 / std::sqrt(8.0), 1e-14);
}

TEST(Dct3, Linearity) {
  const DynTensor x = random_tensor({4, 3, 3}, 14), y = random_tensor({4, 3, 3}, 15);
  EXPECT_LT(rel_diff(dct3(0.5 * x + 2.0 * y), 0.5 * dct3(x) + 2.0 * dct3(y)), 1e-12);
}

TEST(BlockDct, EachBlockMatchesDct3) {
  const Dims block{4, 3, 2};
  const std::size_t count = 3;
  const auto v = testutil::random_vector(block.size() * count, 16);
  BlockDct d(block, count);
  std::vector<double> out(v.size()), back(v.size());
  d.forward(v, out);
  d.inverse(out, back);
  for (std::size_t b = 0; b < count; ++b) {
    DynTensor blk(block, std::vector<double>(v.begin() + b * block.size(), v.begin() + (b + 1) * block.size()));
    const DynTensor ref = oracle::dense_dct3(blk);
    for (std::size_t i = 0; i < block.size(); ++i) EXPECT_NEAR(out[b * block.size() + i], ref[i], 1e-12);
  }
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(back[i], v[i], 1e-12);
}
