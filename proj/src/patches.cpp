#include "patches.hpp"

#include <cmath>
#include <numbers>

namespace fppg {

std::vector<std::size_t> patch_origins(std::size_t extent, std::size_t patch, std::size_t stride) {
  require(patch >= 1 && patch <= extent, ErrorCode::BadSpec,
          "patch size " + std::to_string(patch) + " does not fit extent " + std::to_string(extent));
  require(stride >= 1, ErrorCode::BadSpec, "patch span must be >= 1");
  std::vector<std::size_t> o;
  for (std::size_t x = 0; x + patch <= extent; x += stride) o.push_back(x);
  if (o.back() + patch < extent) o.push_back(extent - patch);
  return o;
}

namespace {

// Half-sample symmetric reflection: −1 → 0, −2 → 1, n → n−1.
std::size_t reflect(long u, std::size_t n) {
  const long N = static_cast<long>(n);
  long x = u;
  while (x < 0 || x >= N) {
    if (x < 0) x = -x - 1;
    if (x >= N) x = 2 * N - x - 1;
  }
  return static_cast<std::size_t>(x);
}

}  // namespace

PatchExtractor::PatchExtractor(Dims image, PatchSettings settings) : image_(image), settings_(settings) {
  const std::size_t pr = settings_.resolved_pad_rows();
  const std::size_t pc = settings_.resolved_pad_cols();
  require(image.size() > 0, ErrorCode::BadSpec, "patch extractor on empty image");
  require(pr <= image.rows && pc <= image.cols, ErrorCode::BadSpec, "padding exceeds image size");
  padded_ = {image.rows + 2 * pr, image.cols + 2 * pc, image.frames};

  const auto& p = settings_.patch;
  const auto& s = settings_.span;
  const auto orow = patch_origins(padded_.rows, p.rows, s.rows);
  const auto ocol = patch_origins(padded_.cols, p.cols, s.cols);
  const auto ot = patch_origins(padded_.frames, p.frames, s.frames);
  patch_count_ = orow.size() * ocol.size() * ot.size();
  require(patch_count_ * p.size() < UINT32_MAX && image.size() < UINT32_MAX, ErrorCode::BadSpec,
          "patch vector too long");
  index_.reserve(patch_count_ * p.size());

  // patch order: rows fastest, then cols, then time (vec order of origins)
  for (std::size_t t0 : ot)
    for (std::size_t c0 : ocol)
      for (std::size_t r0 : orow)
        for (std::size_t k = 0; k < p.frames; ++k)
          for (std::size_t j = 0; j < p.cols; ++j)
            for (std::size_t i = 0; i < p.rows; ++i) {
              const std::size_t row = reflect(static_cast<long>(r0 + i) - static_cast<long>(pr), image.rows);
              const std::size_t col = reflect(static_cast<long>(c0 + j) - static_cast<long>(pc), image.cols);
              const std::size_t fr = t0 + k;
              index_.push_back(static_cast<std::uint32_t>(fr * image.rows * image.cols + col * image.rows + row));
            }
}

void PatchExtractor::extract(std::span<const double> f, std::span<double> q) const {
  require(f.size() == image_.size() && q.size() == index_.size(), ErrorCode::DimMismatch, "extract: size mismatch");
  for (std::size_t s = 0; s < index_.size(); ++s) q[s] = f[index_[s]];
}

std::vector<double> PatchExtractor::extract(const DynTensor& f) const {
  require(f.dims() == image_, ErrorCode::DimMismatch,
          "extract: image dims " + to_string(f.dims()) + " != " + to_string(image_));
  std::vector<double> q(index_.size());
  extract(f.vec(), q);
  return q;
}

void PatchExtractor::fold_adjoint_add(std::span<const double> q, std::span<double> f) const {
  require(f.size() == image_.size() && q.size() == index_.size(), ErrorCode::DimMismatch,
          "fold_adjoint: size mismatch");
  for (std::size_t s = 0; s < index_.size(); ++s) f[index_[s]] += q[s];
}

DynTensor PatchExtractor::fold_adjoint(std::span<const double> q) const {
  require(q.size() == index_.size(), ErrorCode::DimMismatch,
          "fold_adjoint: patch vector length " + std::to_string(q.size()) + " != L = " + std::to_string(length()));
  DynTensor f(image_);
  fold_adjoint_add(q, f.vec());
  return f;
}

DynTensor PatchExtractor::coverage() const {
  DynTensor c(image_);
  for (auto idx : index_) c[idx] += 1.0;
  return c;
}

double PatchExtractor::max_coverage() const { return coverage().max(); }

// ---- Rotation45 ----

Rotation45::Rotation45(std::size_t side, std::size_t frames)
    : side_(side),
      frames_(frames),
      canvas_(static_cast<std::size_t>(std::ceil(static_cast<double>(side) * std::numbers::sqrt2))) {
  require(side > 0, ErrorCode::DimMismatch, "rotate45: empty image");
  const double cin = 0.5 * static_cast<double>(side - 1);
  const double cout = 0.5 * static_cast<double>(canvas_ - 1);
  const double c = std::numbers::sqrt2 / 2.0;  // cos 45° = sin 45°
  tap_ptr_.reserve(canvas_ * canvas_ + 1);
  tap_ptr_.push_back(0);
  const long last = static_cast<long>(side) - 1;
  for (std::size_t v = 0; v < canvas_; ++v) {    // canvas column (x)
    for (std::size_t u = 0; u < canvas_; ++u) {  // canvas row (y)
      const double xo = static_cast<double>(v) - cout;
      const double yo = static_cast<double>(u) - cout;
      // inverse rotation back into the source frame
      const double xs = c * xo + c * yo + cin;
      const double ys = -c * xo + c * yo + cin;
      const double fx = std::floor(xs), fy = std::floor(ys);
      const double ax = xs - fx, ay = ys - fy;
      const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      const long xs_[2] = {x0, x0 + 1};
      const long ys_[2] = {y0, y0 + 1};
      const double wx[2] = {1.0 - ax, ax};
      const double wy[2] = {1.0 - ay, ay};
      for (int b = 0; b < 2; ++b)
        for (int a = 0; a < 2; ++a) {
          const double w = wx[a] * wy[b];
          if (w == 0.0 || xs_[a] < 0 || xs_[a] > last || ys_[b] < 0 || ys_[b] > last) continue;
          taps_.push_back({static_cast<std::uint32_t>(xs_[a] * static_cast<long>(side) + ys_[b]), w});
        }
      tap_ptr_.push_back(static_cast<std::uint32_t>(taps_.size()));
    }
  }
}

DynTensor Rotation45::apply(const DynTensor& f) const {
  require(f.dims() == input_dims(), ErrorCode::DimMismatch,
          "rotate45: input dims " + to_string(f.dims()) + " != " + to_string(input_dims()));
  DynTensor out(output_dims());
  for (std::size_t k = 0; k < frames_; ++k) {
    auto src = f.frame(k);
    auto dst = out.frame(k);
    for (std::size_t p = 0; p + 1 < tap_ptr_.size(); ++p) {
      double acc = 0.0;
      for (auto t = tap_ptr_[p]; t < tap_ptr_[p + 1]; ++t) acc += taps_[t].weight * src[taps_[t].src];
      dst[p] = acc;
    }
  }
  return out;
}

void Rotation45::adjoint_add(const DynTensor& r, DynTensor& f) const {
  require(r.dims() == output_dims() && f.dims() == input_dims(), ErrorCode::DimMismatch, "rotate45_adjoint: dims");
  for (std::size_t k = 0; k < frames_; ++k) {
    auto src = r.frame(k);
    auto dst = f.frame(k);
    for (std::size_t p = 0; p + 1 < tap_ptr_.size(); ++p) {
      const double v = src[p];
      if (v == 0.0) continue;
      for (auto t = tap_ptr_[p]; t < tap_ptr_[p + 1]; ++t) dst[taps_[t].src] += taps_[t].weight * v;
    }
  }
}

DynTensor Rotation45::adjoint(const DynTensor& r) const {
  DynTensor f(input_dims());
  adjoint_add(r, f);
  return f;
}

DynTensor rotate45(const DynTensor& f) {
  require(f.rows() == f.cols(), ErrorCode::DimMismatch, "rotate45 needs square frames, got " + to_string(f.dims()));
  return Rotation45(f.rows(), f.frames()).apply(f);
}

DynTensor rotate45_adjoint(const DynTensor& r, std::size_t side) {
  const Rotation45 rot(side, r.frames());
  return rot.adjoint(r);
}

}  // namespace fppg
