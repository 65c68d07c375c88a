#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"

namespace fppg {

/// Extent of a spatiotemporal array: rows × cols × frames.
struct Dims {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t frames = 0;

  std::size_t frame_size() const { return rows * cols; }
  std::size_t size() const { return rows * cols * frames; }
  bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& d);

/// Real m×n×τ array stored as one flat buffer in vec order: element
/// (i, j, k) lives at k·m·n + j·m + i, so the row index is fastest and
/// each frame is a contiguous column-major m×n block.
class DynTensor {
 public:
  DynTensor() = default;
  explicit DynTensor(Dims dims, double fill = 0.0);
  DynTensor(Dims dims, std::vector<double> data);

  /// tens(v): reshape a vec-ordered vector.
  static DynTensor tens(Dims dims, std::vector<double> v) { return DynTensor(dims, std::move(v)); }

  const Dims& dims() const { return dims_; }
  std::size_t rows() const { return dims_.rows; }
  std::size_t cols() const { return dims_.cols; }
  std::size_t frames() const { return dims_.frames; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return k * dims_.rows * dims_.cols + j * dims_.rows + i;
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) { return data_[index(i, j, k)]; }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const { return data_[index(i, j, k)]; }
  double& operator[](std::size_t idx) { return data_[idx]; }
  double operator[](std::size_t idx) const { return data_[idx]; }

  /// vec(T)
  const std::vector<double>& vec() const { return data_; }
  std::vector<double>& vec() { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::span<double> frame(std::size_t k) { return {data_.data() + k * dims_.frame_size(), dims_.frame_size()}; }
  std::span<const double> frame(std::size_t k) const {
    return {data_.data() + k * dims_.frame_size(), dims_.frame_size()};
  }

  DynTensor& operator+=(const DynTensor& o);
  DynTensor& operator-=(const DynTensor& o);
  DynTensor& operator*=(double s);
  void fill(double v);

  double sum() const;
  double min() const;
  double max() const;
  double frame_sum(std::size_t k) const;

 private:
  Dims dims_;
  std::vector<double> data_;
};

DynTensor operator+(DynTensor a, const DynTensor& b);
DynTensor operator-(DynTensor a, const DynTensor& b);
DynTensor operator*(double s, DynTensor a);

void require_same_dims(const DynTensor& a, const DynTensor& b, const char* what);

double dot(std::span<const double> a, std::span<const double> b);
double dot(const DynTensor& a, const DynTensor& b);
double norm2(std::span<const double> v);
double frobenius(const DynTensor& t);

bool all_finite(std::span<const double> v);

/// Frequency-domain slices along time: slice k is the m×n complex matrix at
/// DFT index k, stored column-major like DynTensor frames.
class ComplexSliceStack {
 public:
  ComplexSliceStack() = default;
  explicit ComplexSliceStack(Dims dims) : dims_(dims), data_(dims.size()) {}

  const Dims& dims() const { return dims_; }
  std::complex<double>& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[k * dims_.frame_size() + j * dims_.rows + i];
  }
  std::complex<double> operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[k * dims_.frame_size() + j * dims_.rows + i];
  }
  std::complex<double>* slice(std::size_t k) { return data_.data() + k * dims_.frame_size(); }
  const std::complex<double>* slice(std::size_t k) const { return data_.data() + k * dims_.frame_size(); }
  std::vector<std::complex<double>>& raw() { return data_; }
  const std::vector<std::complex<double>>& raw() const { return data_; }

  double frobenius() const;

 private:
  Dims dims_;
  std::vector<std::complex<double>> data_;
};

// DTN1 persistence: "DTN1", three u32 LE dims (m, n, τ), then m·n·τ f64 LE
// values in vec order.
void write_dtn(const std::string& path, const DynTensor& t);
DynTensor read_dtn(const std::string& path);
std::vector<unsigned char> encode_dtn(const DynTensor& t);
DynTensor decode_dtn(std::span<const unsigned char> bytes);

}  // namespace fppg
