#include "tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

namespace fppg {

std::string to_string(const Dims& d) {
  return std::to_string(d.rows) + "x" + std::to_string(d.cols) + "x" + std::to_string(d.frames);
}

DynTensor::DynTensor(Dims dims, double fill) : dims_(dims), data_(dims.size(), fill) {}

DynTensor::DynTensor(Dims dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
  require(data_.size() == dims_.size(), ErrorCode::DimMismatch,
          "data length " + std::to_string(data_.size()) + " does not match dims " + to_string(dims_));
}

void require_same_dims(const DynTensor& a, const DynTensor& b, const char* what) {
  if (!(a.dims() == b.dims()))
    fail(ErrorCode::DimMismatch, std::string(what) + ": " + to_string(a.dims()) + " vs " + to_string(b.dims()));
}

DynTensor& DynTensor::operator+=(const DynTensor& o) {
  require_same_dims(*this, o, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

DynTensor& DynTensor::operator-=(const DynTensor& o) {
  require_same_dims(*this, o, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

DynTensor& DynTensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

void DynTensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double DynTensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
double DynTensor::min() const { return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end()); }
double DynTensor::max() const { return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end()); }

double DynTensor::frame_sum(std::size_t k) const {
  auto f = frame(k);
  return std::accumulate(f.begin(), f.end(), 0.0);
}

DynTensor operator+(DynTensor a, const DynTensor& b) { return a += b; }
DynTensor operator-(DynTensor a, const DynTensor& b) { return a -= b; }
DynTensor operator*(double s, DynTensor a) { return a *= s; }

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::DimMismatch, "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double dot(const DynTensor& a, const DynTensor& b) {
  require_same_dims(a, b, "dot");
  return dot(std::span<const double>(a.vec()), std::span<const double>(b.vec()));
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double frobenius(const DynTensor& t) { return norm2(t.vec()); }

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double ComplexSliceStack::frobenius() const {
  double s = 0.0;
  for (const auto& z : data_) s += std::norm(z);
  return std::sqrt(s);
}

// ---- DTN1 ----

namespace {

constexpr char kMagic[4] = {'D', 'T', 'N', '1'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>((v >> (8 * b)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<unsigned char> encode_dtn(const DynTensor& t) {
  const auto& d = t.dims();
  require(d.rows <= UINT32_MAX && d.cols <= UINT32_MAX && d.frames <= UINT32_MAX, ErrorCode::InvalidArgument,
          "DTN1 dims exceed 32 bits");
  std::vector<unsigned char> out;
  out.reserve(16 + 8 * t.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(d.rows));
  put_u32(out, static_cast<std::uint32_t>(d.cols));
  put_u32(out, static_cast<std::uint32_t>(d.frames));
  for (double v : t.vec()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xFFu));
  }
  return out;
}

DynTensor decode_dtn(std::span<const unsigned char> bytes) {
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorCode::Io, "not a DTN1 stream");
  const Dims d{get_u32(bytes.data() + 4), get_u32(bytes.data() + 8), get_u32(bytes.data() + 12)};
  require(bytes.size() == 16 + 8 * d.size(), ErrorCode::Io,
          "DTN1 payload length does not match header dims " + to_string(d));
  std::vector<double> data(d.size());
  const unsigned char* p = bytes.data() + 16;
  for (std::size_t i = 0; i < data.size(); ++i, p += 8) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    data[i] = std::bit_cast<double>(bits);
  }
  return DynTensor(d, std::move(data));
}

void write_dtn(const std::string& path, const DynTensor& t) {
  const auto bytes = encode_dtn(t);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::Io, "write failed: " + path);
}

DynTensor read_dtn(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::MissingInput, "cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_dtn(bytes);
  } catch (const Error& e) {
    fail(e.code(), path + ": " + e.what());
  }
}

}  // namespace fppg
