#include "simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace fppg {

const char* to_string(PhantomKind k) { return k == PhantomKind::CardiacLung ? "cardiac" : "brain"; }

PhantomKind parse_phantom_kind(const std::string& s) {
  if (s == "cardiac" || s == "cardiac_lung") return PhantomKind::CardiacLung;
  if (s == "brain") return PhantomKind::Brain;
  fail(ErrorCode::Config, "unknown phantom kind '" + s + "' (expected cardiac or brain)");
}

PhantomSpec PhantomSpec::cardiac(std::size_t side, std::size_t breathing_cycles) {
  PhantomSpec s;
  s.kind = PhantomKind::CardiacLung;
  s.side = side;
  s.fov_mm = 400.0;
  s.frames = breathing_cycles * s.frames_per_breathing_cycle();
  s.frame_durations.assign(s.frames, s.frame_seconds);
  return s;
}

PhantomSpec PhantomSpec::brain(std::size_t side) {
  PhantomSpec s;
  s.kind = PhantomKind::Brain;
  s.side = side;
  s.fov_mm = 256.0;
  s.frame_durations = FrameSchedule::brain28().duration;
  s.frames = s.frame_durations.size();
  s.brain_params = {
      {0.06, 0.35, 0.02, 0.01, 0.02},  // scalp
      {0.10, 0.50, 0.04, 0.01, 0.05},  // gray
      {0.06, 0.40, 0.03, 0.01, 0.03},  // white
      {0.30, 0.50, 0.10, 0.05, 0.04},  // lesion 1
      {0.30, 0.50, 0.10, 0.05, 0.04},  // lesion 2
      {0.30, 0.50, 0.10, 0.05, 0.04},  // lesion 3
  };
  return s;
}

std::size_t PhantomSpec::frames_per_cardiac_cycle() const {
  return static_cast<std::size_t>(std::lround(cardiac_period_s / frame_seconds));
}

std::size_t PhantomSpec::frames_per_breathing_cycle() const {
  return static_cast<std::size_t>(std::lround(breathing_period_s / frame_seconds));
}

FrameSchedule PhantomSpec::schedule() const { return FrameSchedule::from_durations(frame_durations); }

void PhantomSpec::validate() const {
  require(side >= 8, ErrorCode::BadSpec, "phantom side must be >= 8");
  require(frames >= 1, ErrorCode::BadSpec, "phantom needs at least one frame");
  require(fov_mm > 0.0, ErrorCode::BadSpec, "field of view must be > 0");
  require(supersample >= 1 && supersample <= 16, ErrorCode::BadSpec, "supersample must lie in [1, 16]");
  require(frame_durations.size() == frames, ErrorCode::BadSpec,
          "frame_durations has " + std::to_string(frame_durations.size()) + " entries for " + std::to_string(frames) +
              " frames");
  for (double d : frame_durations) require(d > 0.0, ErrorCode::BadSpec, "frame durations must be positive");
  if (kind == PhantomKind::CardiacLung) {
    require(frame_seconds > 0.0 && cardiac_period_s > 0.0 && breathing_period_s > 0.0, ErrorCode::BadSpec,
            "cycle lengths must be positive");
    const std::size_t fc = frames_per_cardiac_cycle(), fb = frames_per_breathing_cycle();
    require(fc >= 1 && std::abs(static_cast<double>(fc) * frame_seconds - cardiac_period_s) < 1e-9, ErrorCode::BadSpec,
            "cardiac period must be a whole number of frames");
    require(fb >= 1 && std::abs(static_cast<double>(fb) * frame_seconds - breathing_period_s) < 1e-9,
            ErrorCode::BadSpec, "breathing period must be a whole number of frames");
    require(frames % fb == 0, ErrorCode::BadSpec,
            "cardiac phantom frames (" + std::to_string(frames) + ") must be whole breathing cycles of " +
                std::to_string(fb));
    require(lv_area_mm2 > 0.0 && lv_area_amp_mm2 >= 0.0 && lv_area_amp_mm2 < lv_area_mm2, ErrorCode::BadSpec,
            "LV area amplitude must lie in [0, mean area)");
    require(liver_amplitude_mm >= 0.0, ErrorCode::BadSpec, "liver amplitude must be >= 0");
  } else {
    require(brain_params.size() == 6, ErrorCode::BadSpec, "brain phantom needs 6 region parameter sets");
    double total = 0.0;
    for (double d : frame_durations) total += d;
    require(std::abs(total - 3600.0) < 1e-6, ErrorCode::BadSpec,
            "brain frame durations must sum to 3600 s, got " + std::to_string(total));
    input.validate();
  }
}

void NoiseSpec::validate() const {
  require(mean_counts_per_frame > 0.0, ErrorCode::BadFractions, "mean counts per frame must be > 0");
  require(scatter_fraction >= 0.0 && scatter_fraction < 1.0 && random_fraction >= 0.0 && random_fraction < 1.0 &&
              scatter_fraction + random_fraction < 1.0,
          ErrorCode::BadFractions, "scatter and random fractions must lie in [0, 1) with sum < 1");
}

namespace {

bool in_ellipse(double x, double y, double cx, double cy, double a, double b) {
  const double u = (x - cx) / a, v = (y - cy) / b;
  return u * u + v * v <= 1.0;
}

// Pixel centre of (row i, col j) in mm, y growing with the row index.
struct Grid {
  std::size_t side;
  double pix;
  double x(double j) const { return (j + 0.5 - 0.5 * static_cast<double>(side)) * pix; }
  double y(double i) const { return (i + 0.5 - 0.5 * static_cast<double>(side)) * pix; }
};

struct CardiacState {
  double r_in, r_out, liver_dy;
};

CardiacState cardiac_state(const PhantomSpec& s, std::size_t k) {
  const double sc = s.fov_mm / 400.0;
  const double pc = static_cast<double>(k % s.frames_per_cardiac_cycle()) /
                    static_cast<double>(s.frames_per_cardiac_cycle());
  const double pb = static_cast<double>(k % s.frames_per_breathing_cycle()) /
                    static_cast<double>(s.frames_per_breathing_cycle());
  const double area = (s.lv_area_mm2 + s.lv_area_amp_mm2 * std::cos(2.0 * std::numbers::pi * pc)) * sc * sc;
  const double r_in = std::sqrt(area / std::numbers::pi);
  // constant myocardial area
  const double wall = std::numbers::pi * (38.0 * 38.0 - 24.0 * 24.0) * sc * sc;
  const double r_out = std::sqrt(r_in * r_in + wall / std::numbers::pi);
  return {r_in, r_out, s.liver_amplitude_mm * sc * std::sin(2.0 * std::numbers::pi * pb)};
}

int cardiac_label(double x, double y, const CardiacState& st, double sc) {
  if (!in_ellipse(x, y, 0.0, 0.0, 170.0 * sc, 125.0 * sc)) return label::Air;
  const double hx = 25.0 * sc, hy = 15.0 * sc;
  const double r2 = (x - hx) * (x - hx) + (y - hy) * (y - hy);
  if (r2 <= st.r_in * st.r_in) return label::Blood;
  if (r2 <= st.r_out * st.r_out) return label::Myocardium;
  if (in_ellipse(x, y, -60.0 * sc, 80.0 * sc + st.liver_dy, 65.0 * sc, 40.0 * sc)) return label::Liver;
  if (in_ellipse(x, y, -80.0 * sc, -15.0 * sc, 55.0 * sc, 85.0 * sc) ||
      in_ellipse(x, y, 80.0 * sc, -15.0 * sc, 55.0 * sc, 85.0 * sc))
    return label::Lung;
  return label::Body;
}

constexpr double kMuWater = 0.0096;  // per mm at 511 keV
constexpr double kMuLung = 0.0029;
constexpr double kMuBone = 0.0140;

int brain_label(double x, double y, double sc) {
  if (!in_ellipse(x, y, 0.0, 0.0, 85.0 * sc, 105.0 * sc)) return label::Air;
  if (!in_ellipse(x, y, 0.0, 0.0, 77.0 * sc, 97.0 * sc)) return label::Scalp;
  auto disk = [&](double cx, double cy, double d) { return in_ellipse(x, y, cx * sc, cy * sc, d * sc / 2, d * sc / 2); };
  if (disk(-30.0, -35.0, 30.0)) return label::Lesion1;
  if (disk(38.0, 15.0, 15.0)) return label::Lesion2;
  if (disk(-12.0, 55.0, 6.0)) return label::Lesion3;
  if (in_ellipse(x, y, 0.0, 0.0, 55.0 * sc, 72.0 * sc)) return label::White;
  return label::Gray;
}

// Region fractions of one pixel from an s×s grid of sub-samples.
template <class LabelFn>
void pixel_fractions(const Grid& g, std::size_t i, std::size_t j, std::size_t s, LabelFn&& fn,
                     std::vector<double>& frac) {
  std::fill(frac.begin(), frac.end(), 0.0);
  const double w = 1.0 / static_cast<double>(s * s);
  for (std::size_t a = 0; a < s; ++a)
    for (std::size_t b = 0; b < s; ++b) {
      const double di = (static_cast<double>(a) + 0.5) / static_cast<double>(s) - 0.5;
      const double dj = (static_cast<double>(b) + 0.5) / static_cast<double>(s) - 0.5;
      frac[fn(g.x(static_cast<double>(j) + dj), g.y(static_cast<double>(i) + di))] += w;
    }
}

}  // namespace

Phantom gen_cardiac_lung(const PhantomSpec& spec) {
  require(spec.kind == PhantomKind::CardiacLung, ErrorCode::BadSpec, "gen_cardiac_lung given a brain spec");
  spec.validate();
  const std::size_t m = spec.side, tau = spec.frames;
  const Grid g{m, spec.fov_mm / static_cast<double>(m)};
  const double sc = spec.fov_mm / 400.0;
  const std::vector<double> act{0.0, spec.act_body, spec.act_lung, spec.act_myocardium, spec.act_blood, spec.act_liver};

  Phantom ph;
  ph.activity = DynTensor({m, m, tau});
  ph.labels = DynTensor({m, m, tau});
  ph.lv_masks = DynTensor({m, m, tau});
  ph.mu_map = DynTensor({m, m, 1});
  ph.region_names = {"air", "body", "lung", "myocardium", "blood", "liver"};
  ph.schedule = spec.schedule();
  ph.lv_area_px.resize(tau);

  const double px_area = g.pix * g.pix;
  parallel_for(tau, [&](std::size_t k) {
    const CardiacState st = cardiac_state(spec, k);
    auto fn = [&](double x, double y) { return cardiac_label(x, y, st, sc); };
    std::vector<double> frac(act.size());
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t i = 0; i < m; ++i) {
        pixel_fractions(g, i, j, spec.supersample, fn, frac);
        double v = 0.0;
        for (std::size_t l = 0; l < act.size(); ++l) v += frac[l] * act[l];
        ph.activity(i, j, k) = v;
        const int lab = fn(g.x(static_cast<double>(j)), g.y(static_cast<double>(i)));
        ph.labels(i, j, k) = lab;
        ph.lv_masks(i, j, k) = lab == label::Blood ? 1.0 : 0.0;
      }
    ph.lv_area_px[k] = std::numbers::pi * st.r_in * st.r_in / px_area;
  });

  // μ-map: water body with lungs; the heart and liver are soft tissue too
  const CardiacState st0 = cardiac_state(spec, 0);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = 0; i < m; ++i) {
      const int lab = cardiac_label(g.x(static_cast<double>(j)), g.y(static_cast<double>(i)), st0, sc);
      ph.mu_map(i, j, 0) = lab == label::Air ? 0.0 : (lab == label::Lung ? kMuLung : kMuWater);
    }

  // seed at the cavity centre
  const double hx = 25.0 * sc, hy = 15.0 * sc;
  const double col = hx / g.pix + 0.5 * static_cast<double>(m) - 0.5;
  const double row = hy / g.pix + 0.5 * static_cast<double>(m) - 0.5;
  ph.lv_seed = {static_cast<std::size_t>(std::lround(row)), static_cast<std::size_t>(std::lround(col))};
  return ph;
}

Phantom gen_brain(const PhantomSpec& spec) {
  require(spec.kind == PhantomKind::Brain, ErrorCode::BadSpec, "gen_brain given a cardiac spec");
  spec.validate();
  const std::size_t m = spec.side, tau = spec.frames;
  const Grid g{m, spec.fov_mm / static_cast<double>(m)};
  const double sc = spec.fov_mm / 256.0;

  Phantom ph;
  ph.schedule = spec.schedule();
  ph.region_names = {"air", "scalp", "gray", "white", "lesion1", "lesion2", "lesion3"};
  ph.region_params.push_back({});
  for (const auto& p : spec.brain_params) ph.region_params.push_back(p);

  std::vector<std::vector<double>> tacs(ph.region_params.size(), std::vector<double>(tau, 0.0));
  for (std::size_t l = 1; l < tacs.size(); ++l)
    tacs[l] = two_tissue_tac(ph.region_params[l], spec.input, ph.schedule, spec.convention);

  ph.activity = DynTensor({m, m, tau});
  ph.labels = DynTensor({m, m, 1});
  ph.mu_map = DynTensor({m, m, 1});
  auto fn = [&](double x, double y) { return brain_label(x, y, sc); };
  std::vector<double> frac(tacs.size());
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = 0; i < m; ++i) {
      pixel_fractions(g, i, j, spec.supersample, fn, frac);
      for (std::size_t k = 0; k < tau; ++k) {
        double v = 0.0;
        for (std::size_t l = 1; l < tacs.size(); ++l) v += frac[l] * tacs[l][k];
        ph.activity(i, j, k) = v;
      }
      const int lab = fn(g.x(static_cast<double>(j)), g.y(static_cast<double>(i)));
      ph.labels(i, j, 0) = lab;
      ph.mu_map(i, j, 0) = lab == label::Air ? 0.0 : (lab == label::Scalp ? kMuBone : kMuWater);
    }
  return ph;
}

Phantom generate_phantom(const PhantomSpec& spec) {
  return spec.kind == PhantomKind::CardiacLung ? gen_cardiac_lung(spec) : gen_brain(spec);
}

DynTensor attenuation_factors(const DynTensor& mu_map, const Geometry& g, std::size_t frames) {
  require(mu_map.rows() == g.image_side && mu_map.cols() == g.image_side, ErrorCode::DimMismatch,
          "μ-map does not match the geometry");
  const Projector p(g);
  DynTensor mu({g.image_side, g.image_side, 1});
  const double pix = g.pixel_mm();
  for (std::size_t i = 0; i < mu.size(); ++i) mu[i] = mu_map[i] * pix;
  const DynTensor line = p.forward(mu);
  DynTensor out(p.sino_dims(frames));
  const std::size_t nb = g.bins();
  for (std::size_t k = 0; k < frames; ++k)
    for (std::size_t b = 0; b < nb; ++b) out[k * nb + b] = std::exp(-line[b]);
  return out;
}

DynTensor smooth_radial(const DynTensor& sino, double fwhm_bins) {
  require(fwhm_bins > 0.0, ErrorCode::InvalidArgument, "smoothing FWHM must be > 0");
  const double sigma = fwhm_bins / (2.0 * std::sqrt(2.0 * std::numbers::ln2));
  const long radius = static_cast<long>(std::ceil(4.0 * sigma));
  std::vector<double> w(2 * radius + 1);
  double ws = 0.0;
  for (long d = -radius; d <= radius; ++d) ws += w[d + radius] = std::exp(-0.5 * d * d / (sigma * sigma));
  for (double& x : w) x /= ws;
  const long nr = static_cast<long>(sino.rows());
  DynTensor out(sino.dims());
  const std::size_t rows_total = sino.cols() * sino.frames();
  for (std::size_t a = 0; a < rows_total; ++a) {
    const double* src = sino.data() + a * nr;
    double* dst = out.data() + a * nr;
    for (long r = 0; r < nr; ++r) {
      const double v = src[r];
      if (v == 0.0) continue;
      for (long d = std::max(-radius, -r); d <= radius && r + d < nr; ++d) dst[r + d] += w[d + radius] * v;
    }
  }
  return out;
}

DynTensor scale_frames(const DynTensor& t, std::span<const double> scale) {
  require(scale.size() == t.frames(), ErrorCode::DimMismatch, "frame scale length != frames");
  DynTensor out = t;
  for (std::size_t k = 0; k < t.frames(); ++k)
    for (double& x : out.frame(k)) x *= scale[k];
  return out;
}

Simulation simulate_sinograms(const DynTensor& truth, const Projector& proj, const NoiseSpec& noise,
                              std::span<const double> durations) {
  noise.validate();
  require(truth.min() >= 0.0, ErrorCode::InvalidArgument, "truth must be nonnegative");
  const std::size_t tau = truth.frames();
  std::vector<double> dur(tau, 1.0);
  if (!durations.empty()) {
    require(durations.size() == tau, ErrorCode::DimMismatch, "durations length != frames");
    dur.assign(durations.begin(), durations.end());
  }
  const Geometry& geo = proj.geometry();
  const std::size_t nb = geo.bins();

  DynTensor trues = proj.forward(truth);  // includes attenuation if present
  for (std::size_t k = 0; k < tau; ++k)
    for (double& x : trues.frame(k)) x *= dur[k];
  const double trues_total = trues.sum();
  const double keep = 1.0 - noise.scatter_fraction - noise.random_fraction;

  Simulation sim;
  sim.frame_scale.assign(tau, 0.0);
  std::vector<double> frame_total(tau, noise.mean_counts_per_frame);
  if (trues_total > 0.0) {
    const double c = noise.mean_counts_per_frame * static_cast<double>(tau) * keep / trues_total;
    trues *= c;
    for (std::size_t k = 0; k < tau; ++k) {
      sim.frame_scale[k] = c * dur[k];
      frame_total[k] = trues.frame_sum(k) / keep;
    }
  }

  DynTensor additive(trues.dims());
  if (trues_total > 0.0 && noise.scatter_fraction > 0.0) {
    const DynTensor sc = smooth_radial(trues, static_cast<double>(geo.n_radial) / 4.0);
    for (std::size_t k = 0; k < tau; ++k) {
      const double have = sc.frame_sum(k);
      if (have <= 0.0) continue;
      const double f = noise.scatter_fraction * frame_total[k] / have;
      auto src = sc.frame(k);
      auto dst = additive.frame(k);
      for (std::size_t b = 0; b < nb; ++b) dst[b] = f * src[b];
    }
  }
  for (std::size_t k = 0; k < tau; ++k) {
    const double r = noise.random_fraction * frame_total[k] / static_cast<double>(nb);
    for (double& x : additive.frame(k)) x += r;
  }

  DynTensor counts(trues.dims());
  parallel_for(tau, [&](std::size_t k) {
    std::seed_seq seq{static_cast<std::uint32_t>(noise.rng_seed), static_cast<std::uint32_t>(noise.rng_seed >> 32),
                      static_cast<std::uint32_t>(k), 0x5eedu};
    std::mt19937_64 rng(seq);
    auto t = trues.frame(k);
    auto a = additive.frame(k);
    auto g = counts.frame(k);
    for (std::size_t b = 0; b < nb; ++b) {
      const double mean = t[b] + a[b];
      if (mean <= 0.0) continue;
      std::poisson_distribution<long long> pd(mean);
      g[b] = static_cast<double>(pd(rng));
    }
  });

  sim.data.geometry = geo;
  sim.data.counts = std::move(counts);
  sim.data.additive = std::move(additive);
  sim.data.atten = proj.attenuation().empty() ? DynTensor(trues.dims(), 1.0) : proj.attenuation();
  return sim;
}

}  // namespace fppg
