#include "projector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace fppg {

Geometry Geometry::uniform(std::size_t image_side, std::size_t n_radial, std::size_t n_angles, double fov_mm) {
  Geometry g;
  g.image_side = image_side;
  g.n_radial = n_radial;
  g.n_angles = n_angles;
  g.fov_mm = fov_mm;
  g.angles.resize(n_angles);
  for (std::size_t a = 0; a < n_angles; ++a)
    g.angles[a] = std::numbers::pi * static_cast<double>(a) / static_cast<double>(n_angles);
  return g;
}

Geometry Geometry::desk(std::size_t image_side, double fov_mm) {
  // 381 radial / 288 angular bins at 256 pixels, rescaled: keeps the
  // radial/side ratio close to 95/64 and angles at 9/8 of the side.
  const auto radial = static_cast<std::size_t>(std::ceil(static_cast<double>(image_side) * 95.0 / 64.0));
  const auto angles = static_cast<std::size_t>(std::round(static_cast<double>(image_side) * 72.0 / 64.0));
  return uniform(image_side, radial, std::max<std::size_t>(angles, 1), fov_mm);
}

void Geometry::validate() const {
  require(image_side > 0 && n_radial > 0 && n_angles > 0, ErrorCode::BadSpec, "geometry: zero extent");
  require(fov_mm > 0.0, ErrorCode::BadSpec, "geometry: fov must be positive");
  const auto cover = static_cast<std::size_t>(std::ceil(static_cast<double>(image_side) * std::numbers::sqrt2));
  require(n_radial >= cover, ErrorCode::BadSpec,
          "geometry: n_radial " + std::to_string(n_radial) + " < ceil(side*sqrt2) = " + std::to_string(cover));
  require(angles.size() == n_angles, ErrorCode::BadSpec, "geometry: angle list length != n_angles");
  for (std::size_t a = 0; a < angles.size(); ++a) {
    require(angles[a] >= 0.0 && angles[a] < std::numbers::pi, ErrorCode::BadSpec, "geometry: angle outside [0, pi)");
    if (a > 0) require(angles[a] > angles[a - 1], ErrorCode::BadSpec, "geometry: angles not strictly increasing");
  }
}

namespace {

// Radial bin centres. When the side and bin count have different parity
// the bins are shifted by half a pixel so no ray runs along a pixel edge
// at 0° or 90°.
double radial_position(const Geometry& g, std::size_t r) {
  const double shift = ((g.n_radial + g.image_side) % 2 == 1) ? 0.5 : 0.0;
  return static_cast<double>(r) - 0.5 * static_cast<double>(g.n_radial - 1) + shift;
}

struct Segment {
  std::uint32_t pixel;
  double length;
};

void trace_ray(double s, double theta, std::size_t side, std::vector<Segment>& out) {
  out.clear();
  const double half = 0.5 * static_cast<double>(side);
  const double c = std::cos(theta), sn = std::sin(theta);
  const double x0 = s * c, y0 = s * sn;
  const double dx = -sn, dy = c;
  constexpr double tiny = 1e-14;

  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  auto slab = [&](double p0, double d) {
    if (std::abs(d) < tiny) return std::abs(p0) < half;
    double t1 = (-half - p0) / d, t2 = (half - p0) / d;
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
    return true;
  };
  if (!slab(x0, dx) || !slab(y0, dy) || !(tmax > tmin)) return;

  std::vector<double> ts{tmin, tmax};
  auto crossings = [&](double p0, double d) {
    if (std::abs(d) < tiny) return;
    for (std::size_t k = 0; k <= side; ++k) {
      const double t = (-half + static_cast<double>(k) - p0) / d;
      if (t > tmin && t < tmax) ts.push_back(t);
    }
  };
  crossings(x0, dx);
  crossings(y0, dy);
  std::sort(ts.begin(), ts.end());

  const auto last = static_cast<long>(side) - 1;
  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    const double len = ts[k + 1] - ts[k];
    if (len <= 1e-12) continue;
    const double tm = 0.5 * (ts[k] + ts[k + 1]);
    const long col = std::clamp(static_cast<long>(std::floor(x0 + tm * dx + half)), 0L, last);
    const long row = std::clamp(static_cast<long>(std::floor(y0 + tm * dy + half)), 0L, last);
    const auto pix = static_cast<std::uint32_t>(col * static_cast<long>(side) + row);
    if (!out.empty() && out.back().pixel == pix)
      out.back().length += len;
    else
      out.push_back({pix, len});
  }
}

}  // namespace

RayMatrix::RayMatrix(const Geometry& g) : geom_(g) {
  geom_.validate();
  row_ptr_.reserve(g.bins() + 1);
  row_ptr_.push_back(0);
  std::vector<Segment> seg;
  for (std::size_t a = 0; a < g.n_angles; ++a) {
    for (std::size_t r = 0; r < g.n_radial; ++r) {
      trace_ray(radial_position(g, r), g.angles[a], g.image_side, seg);
      for (const auto& sg : seg) {
        cols_.push_back(sg.pixel);
        vals_.push_back(sg.length);
      }
      row_ptr_.push_back(cols_.size());
    }
  }
}

void RayMatrix::forward(const double* x, double* y, std::size_t subset, std::size_t n_subsets) const {
  const std::size_t R = geom_.n_radial;
  for (std::size_t a = subset; a < geom_.n_angles; a += n_subsets) {
    for (std::size_t row = a * R; row < (a + 1) * R; ++row) {
      double acc = 0.0;
      for (std::size_t e = row_ptr_[row]; e < row_ptr_[row + 1]; ++e) acc += vals_[e] * x[cols_[e]];
      y[row] = acc;
    }
  }
}

void RayMatrix::backward_add(const double* y, double* x, std::size_t subset, std::size_t n_subsets) const {
  const std::size_t R = geom_.n_radial;
  for (std::size_t a = subset; a < geom_.n_angles; a += n_subsets) {
    for (std::size_t row = a * R; row < (a + 1) * R; ++row) {
      const double v = y[row];
      if (v == 0.0) continue;
      for (std::size_t e = row_ptr_[row]; e < row_ptr_[row + 1]; ++e) x[cols_[e]] += vals_[e] * v;
    }
  }
}

// ---- Projector ----

Projector::Projector(const Geometry& g) : rays_(std::make_shared<RayMatrix>(g)) {}

Projector::Projector(std::shared_ptr<const RayMatrix> rays, DynTensor atten)
    : rays_(std::move(rays)), atten_(std::move(atten)) {
  if (!atten_.empty()) {
    const auto& g = rays_->geometry();
    require(atten_.rows() == g.n_radial && atten_.cols() == g.n_angles, ErrorCode::DimMismatch,
            "attenuation dims " + to_string(atten_.dims()) + " do not match geometry");
    for (double a : atten_.vec())
      require(a > 0.0 && a <= 1.0, ErrorCode::InvalidArgument, "attenuation factors must lie in (0, 1]");
  }
}

Dims Projector::image_dims(std::size_t frames) const {
  const auto n = geometry().image_side;
  return {n, n, frames};
}

Dims Projector::sino_dims(std::size_t frames) const { return {geometry().n_radial, geometry().n_angles, frames}; }

void Projector::check_frames(std::size_t frames) const {
  require(atten_.empty() || atten_.frames() == frames, ErrorCode::DimMismatch,
          "attenuation has " + std::to_string(atten_.frames()) + " frames, data has " + std::to_string(frames));
}

void Projector::forward_frame(std::span<const double> img, std::size_t frame, std::span<double> sino,
                              std::size_t subset, std::size_t n_subsets) const {
  const auto& g = geometry();
  require(img.size() == g.image_side * g.image_side && sino.size() == g.bins(), ErrorCode::DimMismatch,
          "forward_frame: buffer size mismatch");
  rays_->forward(img.data(), sino.data(), subset, n_subsets);
  if (atten_.empty()) return;
  const std::size_t R = g.n_radial;
  for (std::size_t a = subset; a < g.n_angles; a += n_subsets)
    for (std::size_t b = a * R; b < (a + 1) * R; ++b) sino[b] *= atten_at(b, frame);
}

void Projector::backward_frame(std::span<const double> sino, std::size_t frame, std::span<double> img,
                               std::size_t subset, std::size_t n_subsets) const {
  const auto& g = geometry();
  require(img.size() == g.image_side * g.image_side && sino.size() == g.bins(), ErrorCode::DimMismatch,
          "backward_frame: buffer size mismatch");
  std::fill(img.begin(), img.end(), 0.0);
  if (atten_.empty()) {
    rays_->backward_add(sino.data(), img.data(), subset, n_subsets);
    return;
  }
  std::vector<double> weighted(sino.size(), 0.0);
  const std::size_t R = g.n_radial;
  for (std::size_t a = subset; a < g.n_angles; a += n_subsets)
    for (std::size_t b = a * R; b < (a + 1) * R; ++b) weighted[b] = sino[b] * atten_at(b, frame);
  rays_->backward_add(weighted.data(), img.data(), subset, n_subsets);
}

DynTensor Projector::forward(const DynTensor& f) const {
  const auto n = geometry().image_side;
  require(f.rows() == n && f.cols() == n, ErrorCode::DimMismatch,
          "forward: image dims " + to_string(f.dims()) + " do not match geometry side " + std::to_string(n));
  check_frames(f.frames());
  DynTensor out(sino_dims(f.frames()));
  parallel_for(f.frames(), [&](std::size_t k) { forward_frame(f.frame(k), k, out.frame(k)); });
  return out;
}

DynTensor Projector::backward(const DynTensor& s) const {
  const auto& g = geometry();
  require(s.rows() == g.n_radial && s.cols() == g.n_angles, ErrorCode::DimMismatch,
          "backward: sinogram dims " + to_string(s.dims()) + " do not match geometry");
  check_frames(s.frames());
  DynTensor out(image_dims(s.frames()));
  parallel_for(s.frames(), [&](std::size_t k) { backward_frame(s.frame(k), k, out.frame(k)); });
  return out;
}

DynTensor Projector::sensitivity(std::size_t frames) const {
  return backward(DynTensor(sino_dims(frames), 1.0));
}

// ---- SinogramStack ----

std::vector<double> SinogramStack::frame_counts() const {
  std::vector<double> c(counts.frames());
  for (std::size_t k = 0; k < c.size(); ++k) c[k] = counts.frame_sum(k);
  return c;
}

void SinogramStack::validate() const {
  const Dims d{geometry.n_radial, geometry.n_angles, counts.frames()};
  require(counts.dims() == d, ErrorCode::DimMismatch, "counts dims " + to_string(counts.dims()) + " != " + to_string(d));
  require(additive.dims() == d, ErrorCode::DimMismatch, "additive dims " + to_string(additive.dims()));
  require(atten.empty() || atten.dims() == d, ErrorCode::DimMismatch, "atten dims " + to_string(atten.dims()));
  for (double v : counts.vec()) require(v >= 0.0, ErrorCode::InvalidArgument, "negative counts");
  for (double v : additive.vec()) require(v >= 0.0, ErrorCode::InvalidArgument, "negative additive term");
  for (double v : atten.vec()) require(v > 0.0 && v <= 1.0, ErrorCode::InvalidArgument, "attenuation outside (0,1]");
}

// ---- KL fidelity ----

DynTensor kl_ratio(const DynTensor& af, const DynTensor& g, const DynTensor& gamma) {
  require_same_dims(af, g, "kl_ratio");
  require_same_dims(af, gamma, "kl_ratio");
  DynTensor r(af.dims());
  for (std::size_t b = 0; b < af.size(); ++b) {
    if (g[b] == 0.0) continue;
    const double mean = af[b] + gamma[b];
    if (!(mean > 0.0))
      fail(ErrorCode::DivisionByZeroBin, "Af+gamma = 0 on bin " + std::to_string(b) + " with nonzero counts");
    r[b] = g[b] / mean;
  }
  return r;
}

double kl_objective_from_projection(const DynTensor& af, const DynTensor& g, const DynTensor& gamma) {
  require_same_dims(af, g, "kl_objective");
  require_same_dims(af, gamma, "kl_objective");
  double lin = 0.0, lg = 0.0;
  for (std::size_t b = 0; b < af.size(); ++b) {
    lin += af[b];
    if (g[b] == 0.0) continue;
    const double mean = af[b] + gamma[b];
    if (!(mean > 0.0))
      fail(ErrorCode::DivisionByZeroBin, "Af+gamma = 0 on bin " + std::to_string(b) + " with nonzero counts");
    lg += g[b] * std::log(mean);
  }
  return lin - lg;
}

double kl_objective(const Projector& p, const DynTensor& f, const DynTensor& g, const DynTensor& gamma) {
  return kl_objective_from_projection(p.forward(f), g, gamma);
}

DynTensor kl_gradient(const Projector& p, const DynTensor& f, const DynTensor& g, const DynTensor& gamma) {
  const DynTensor af = p.forward(f);
  DynTensor ratio = kl_ratio(af, g, gamma);
  // 1 − g/(Af+γ), with the ratio term absent on zero-count bins
  for (double& v : ratio.vec()) v = 1.0 - v;
  return p.backward(ratio);
}

}  // namespace fppg
