#include "transforms.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>
#include <vector>

namespace fppg {

namespace {

// FFTW planning is not thread-safe; execution on distinct arrays is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

constexpr unsigned kFlags = FFTW_ESTIMATE | FFTW_UNALIGNED;

enum class TimeKind { C2CForward, C2CBackward, R2C, C2R };

// Plans are cached for the process lifetime, keyed on the transform shape.
fftw_plan time_plan(TimeKind kind, int frames, int pixels) {
  static std::map<std::tuple<int, int, int>, fftw_plan> cache;
  std::lock_guard<std::mutex> lock(planner_mutex());
  const auto key = std::make_tuple(static_cast<int>(kind), frames, pixels);
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  const int n[1] = {frames};
  auto* cbuf = fftw_alloc_complex(static_cast<std::size_t>(frames) * pixels);
  auto* rbuf = fftw_alloc_real(static_cast<std::size_t>(frames) * pixels);
  fftw_plan p = nullptr;
  switch (kind) {
    case TimeKind::C2CForward:
      p = fftw_plan_many_dft(1, n, pixels, cbuf, nullptr, pixels, 1, cbuf, nullptr, pixels, 1, FFTW_FORWARD,
                             kFlags);
      break;
    case TimeKind::C2CBackward:
      p = fftw_plan_many_dft(1, n, pixels, cbuf, nullptr, pixels, 1, cbuf, nullptr, pixels, 1, FFTW_BACKWARD,
                             kFlags);
      break;
    case TimeKind::R2C:
      p = fftw_plan_many_dft_r2c(1, n, pixels, rbuf, nullptr, pixels, 1, cbuf, nullptr, pixels, 1, kFlags);
      break;
    case TimeKind::C2R:
      p = fftw_plan_many_dft_c2r(1, n, pixels, cbuf, nullptr, pixels, 1, rbuf, nullptr, pixels, 1,
                                 kFlags | FFTW_DESTROY_INPUT);
      break;
  }
  fftw_free(cbuf);
  fftw_free(rbuf);
  require(p != nullptr, ErrorCode::InvalidArgument, "FFTW planning failed");
  cache.emplace(key, p);
  return p;
}

fftw_complex* as_fftw(std::complex<double>* p) { return reinterpret_cast<fftw_complex*>(p); }

}  // namespace

ComplexSliceStack fft_time(const DynTensor& t) {
  const Dims d = t.dims();
  ComplexSliceStack s(d);
  if (d.size() == 0) return s;
  for (std::size_t i = 0; i < t.size(); ++i) s.raw()[i] = t[i];
  auto plan = time_plan(TimeKind::C2CForward, static_cast<int>(d.frames), static_cast<int>(d.frame_size()));
  fftw_execute_dft(plan, as_fftw(s.raw().data()), as_fftw(s.raw().data()));
  return s;
}

DynTensor ifft_time(const ComplexSliceStack& s) {
  const Dims d = s.dims();
  DynTensor out(d);
  if (d.size() == 0) return out;
  std::vector<std::complex<double>> buf = s.raw();
  auto plan = time_plan(TimeKind::C2CBackward, static_cast<int>(d.frames), static_cast<int>(d.frame_size()));
  fftw_execute_dft(plan, as_fftw(buf.data()), as_fftw(buf.data()));
  const double scale = 1.0 / static_cast<double>(d.frames);
  double max_imag = 0.0;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out[i] = buf[i].real() * scale;
    max_imag = std::max(max_imag, std::abs(buf[i].imag() * scale));
  }
  const double tol = 1e-6 * s.frobenius();
  if (max_imag > tol && max_imag > 0.0)
    fail(ErrorCode::SymmetryViolation,
         "inverse time FFT has imaginary residual " + std::to_string(max_imag) + " (limit " + std::to_string(tol) + ")");
  return out;
}

ComplexSliceStack rfft_time(const DynTensor& t) {
  const Dims d = t.dims();
  const std::size_t half = d.frames / 2 + 1;
  ComplexSliceStack s(Dims{d.rows, d.cols, half});
  if (d.size() == 0) return s;
  auto plan = time_plan(TimeKind::R2C, static_cast<int>(d.frames), static_cast<int>(d.frame_size()));
  fftw_execute_dft_r2c(plan, const_cast<double*>(t.data()), as_fftw(s.raw().data()));
  return s;
}

DynTensor irfft_time(const ComplexSliceStack& half, std::size_t frames) {
  const Dims hd = half.dims();
  require(hd.frames == frames / 2 + 1, ErrorCode::DimMismatch, "irfft_time: half-spectrum length mismatch");
  DynTensor out(Dims{hd.rows, hd.cols, frames});
  if (out.size() == 0) return out;
  std::vector<std::complex<double>> buf = half.raw();  // c2r destroys its input
  auto plan = time_plan(TimeKind::C2R, static_cast<int>(frames), static_cast<int>(hd.frame_size()));
  fftw_execute_dft_c2r(plan, as_fftw(buf.data()), out.data());
  out *= 1.0 / static_cast<double>(frames);
  return out;
}

// ---- BlockDct ----

struct BlockDct::Impl {
  Dims block;
  std::size_t count = 0;
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;
  std::vector<double> scale_fwd;
  std::vector<double> scale_inv;

  ~Impl();
};

namespace {

std::vector<double> axis_scale(std::size_t n, bool forward) {
  std::vector<double> s(n, 1.0);
  if (n == 1) return s;  // unit axes are not transformed
  for (std::size_t k = 0; k < n; ++k) {
    if (forward)
      s[k] = k == 0 ? 1.0 / (2.0 * std::sqrt(static_cast<double>(n))) : 1.0 / std::sqrt(2.0 * static_cast<double>(n));
    else
      s[k] = k == 0 ? 1.0 / std::sqrt(static_cast<double>(n)) : 1.0 / std::sqrt(2.0 * static_cast<double>(n));
  }
  return s;
}

std::vector<double> block_scale(const Dims& b, bool forward) {
  const auto sr = axis_scale(b.rows, forward);
  const auto sc = axis_scale(b.cols, forward);
  const auto st = axis_scale(b.frames, forward);
  std::vector<double> s(b.size());
  for (std::size_t k = 0; k < b.frames; ++k)
    for (std::size_t j = 0; j < b.cols; ++j)
      for (std::size_t i = 0; i < b.rows; ++i) s[k * b.rows * b.cols + j * b.rows + i] = sr[i] * sc[j] * st[k];
  return s;
}

}  // namespace

BlockDct::BlockDct(Dims block, std::size_t count) : impl_(std::make_unique<Impl>()) {
  require(block.size() > 0 && count > 0, ErrorCode::InvalidArgument, "BlockDct: empty block");
  impl_->block = block;
  impl_->count = count;
  impl_->scale_fwd = block_scale(block, true);
  impl_->scale_inv = block_scale(block, false);

  // FFTW uses row-major extents; vec order has rows fastest, so the slowest
  // axis (frames) goes first. Unit axes are dropped.
  std::vector<int> n;
  for (std::size_t e : {block.frames, block.cols, block.rows})
    if (e > 1) n.push_back(static_cast<int>(e));
  if (n.empty()) return;  // 1×1×1 blocks: DCT is the identity
  std::vector<fftw_r2r_kind> kf(n.size(), FFTW_REDFT10), ki(n.size(), FFTW_REDFT01);
  const int dist = static_cast<int>(block.size());
  const int howmany = static_cast<int>(count);

  std::lock_guard<std::mutex> lock(planner_mutex());
  auto* buf = fftw_alloc_real(block.size() * count);
  impl_->fwd = fftw_plan_many_r2r(static_cast<int>(n.size()), n.data(), howmany, buf, nullptr, 1, dist, buf, nullptr,
                                  1, dist, kf.data(), kFlags);
  impl_->inv = fftw_plan_many_r2r(static_cast<int>(n.size()), n.data(), howmany, buf, nullptr, 1, dist, buf, nullptr,
                                  1, dist, ki.data(), kFlags);
  fftw_free(buf);
  require(impl_->fwd && impl_->inv, ErrorCode::InvalidArgument, "FFTW r2r planning failed");
}

BlockDct::Impl::~Impl() {
  std::lock_guard<std::mutex> lock(planner_mutex());
  if (fwd) fftw_destroy_plan(fwd);
  if (inv) fftw_destroy_plan(inv);
}

BlockDct::~BlockDct() = default;

BlockDct::BlockDct(BlockDct&&) noexcept = default;
BlockDct& BlockDct::operator=(BlockDct&&) noexcept = default;

const Dims& BlockDct::block() const { return impl_->block; }
std::size_t BlockDct::count() const { return impl_->count; }

void BlockDct::forward(std::span<const double> in, std::span<double> out) const {
  require(in.size() == size() && out.size() == size(), ErrorCode::DimMismatch, "BlockDct::forward: length mismatch");
  if (in.data() != out.data()) std::copy(in.begin(), in.end(), out.begin());
  if (impl_->fwd) fftw_execute_r2r(impl_->fwd, out.data(), out.data());
  const auto& s = impl_->scale_fwd;
  const std::size_t bs = s.size();
  for (std::size_t b = 0; b < impl_->count; ++b) {
    double* p = out.data() + b * bs;
    for (std::size_t i = 0; i < bs; ++i) p[i] *= s[i];
  }
}

void BlockDct::inverse(std::span<const double> in, std::span<double> out) const {
  require(in.size() == size() && out.size() == size(), ErrorCode::DimMismatch, "BlockDct::inverse: length mismatch");
  const auto& s = impl_->scale_inv;
  const std::size_t bs = s.size();
  for (std::size_t b = 0; b < impl_->count; ++b) {
    const double* src = in.data() + b * bs;
    double* dst = out.data() + b * bs;
    for (std::size_t i = 0; i < bs; ++i) dst[i] = src[i] * s[i];
  }
  if (impl_->inv) fftw_execute_r2r(impl_->inv, out.data(), out.data());
}

DynTensor dct3(const DynTensor& t) {
  DynTensor out(t.dims());
  if (t.size() == 0) return out;
  BlockDct(t.dims(), 1).forward(t.vec(), out.vec());
  return out;
}

DynTensor idct3(const DynTensor& t) {
  DynTensor out(t.dims());
  if (t.size() == 0) return out;
  BlockDct(t.dims(), 1).inverse(t.vec(), out.vec());
  return out;
}

}  // namespace fppg
