#include "analysis.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <deque>
#include <limits>

namespace fppg {

double rrmse(const DynTensor& recon, const DynTensor& truth) {
  require_same_dims(recon, truth, "rrmse");
  const double n = static_cast<double>(truth.size());
  const double mean = truth.sum() / n;
  require(mean != 0.0, ErrorCode::ZeroTruthMean, "rRMSE undefined for a zero-mean truth");
  double se = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) se += (recon[i] - truth[i]) * (recon[i] - truth[i]);
  return 100.0 * std::sqrt(se / n) / mean;
}

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;

std::vector<double> gauss_window() {
  std::vector<double> w(kWin);
  double s = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    s += w[i] = std::exp(-0.5 * d * d / (kSigma * kSigma));
  }
  for (double& x : w) x /= s;
  return w;
}

// Separable "valid" filtering of a column-major m×n image.
std::vector<double> filter_valid(const std::vector<double>& x, std::size_t m, std::size_t n,
                                 const std::vector<double>& w) {
  const std::size_t om = m - kWin + 1, on = n - kWin + 1;
  std::vector<double> tmp(om * n), out(om * on);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < om; ++i) {
      double a = 0.0;
      for (int d = 0; d < kWin; ++d) a += w[d] * x[j * m + i + d];
      tmp[j * om + i] = a;
    }
  for (std::size_t j = 0; j < on; ++j)
    for (std::size_t i = 0; i < om; ++i) {
      double a = 0.0;
      for (int d = 0; d < kWin; ++d) a += w[d] * tmp[(j + d) * om + i];
      out[j * om + i] = a;
    }
  return out;
}

}  // namespace

double ssim_frame(std::span<const double> a, std::span<const double> b, std::size_t rows, std::size_t cols,
                  double dynamic_range) {
  require(a.size() == rows * cols && b.size() == rows * cols, ErrorCode::DimMismatch, "ssim: frame sizes");
  require(rows >= kWin && cols >= kWin, ErrorCode::DimMismatch, "ssim: frames must be at least 11×11");
  require(dynamic_range > 0.0, ErrorCode::InvalidArgument, "ssim: dynamic range must be > 0");
  static const std::vector<double> w = gauss_window();
  const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end()), xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, rows, cols, w), my = filter_valid(y, rows, cols, w);
  const auto sxx = filter_valid(xx, rows, cols, w), syy = filter_valid(yy, rows, cols, w),
             sxy = filter_valid(xy, rows, cols, w);
  double acc = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cv = sxy[i] - mx[i] * my[i];
    acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cv + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return acc / static_cast<double>(mx.size());
}

double ssim(const DynTensor& recon, const DynTensor& truth, double dynamic_range) {
  require_same_dims(recon, truth, "ssim");
  std::vector<double> per(truth.frames());
  parallel_for(truth.frames(), [&](std::size_t k) {
    per[k] = ssim_frame(recon.frame(k), truth.frame(k), truth.rows(), truth.cols(), dynamic_range);
  });
  double s = 0.0;
  for (double v : per) s += v;
  return s / static_cast<double>(per.size());
}

MetricReport evaluate_metrics(const DynTensor& recon, const DynTensor& truth, double dynamic_range,
                              int realization) {
  require_same_dims(recon, truth, "metrics");
  MetricReport r;
  r.realization = realization;
  r.rrmse = rrmse(recon, truth);
  const std::size_t tau = truth.frames();
  r.ssim_frames.resize(tau);
  r.rrmse_frames.resize(tau);
  const double n = static_cast<double>(truth.size());
  const double mean = truth.sum() / n;
  parallel_for(tau, [&](std::size_t k) {
    r.ssim_frames[k] = ssim_frame(recon.frame(k), truth.frame(k), truth.rows(), truth.cols(), dynamic_range);
    double se = 0.0;
    auto a = recon.frame(k);
    auto b = truth.frame(k);
    for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
    r.rrmse_frames[k] = 100.0 * std::sqrt(se / static_cast<double>(a.size())) / mean;
  });
  double s = 0.0;
  for (double v : r.ssim_frames) s += v;
  r.ssim = s / static_cast<double>(tau);
  return r;
}

// ---- region growing ----

void fill_holes(std::vector<unsigned char>& mask, std::size_t rows, std::size_t cols) {
  require(mask.size() == rows * cols, ErrorCode::DimMismatch, "fill_holes: size");
  std::vector<unsigned char> outside(mask.size(), 0);
  std::deque<std::size_t> q;
  auto push = [&](std::size_t i, std::size_t j) {
    const std::size_t p = j * rows + i;
    if (!mask[p] && !outside[p]) {
      outside[p] = 1;
      q.push_back(p);
    }
  };
  for (std::size_t i = 0; i < rows; ++i) push(i, 0), push(i, cols - 1);
  for (std::size_t j = 0; j < cols; ++j) push(0, j), push(rows - 1, j);
  while (!q.empty()) {
    const std::size_t p = q.front();
    q.pop_front();
    const long i = static_cast<long>(p % rows), j = static_cast<long>(p / rows);
    for (long di = -1; di <= 1; ++di)
      for (long dj = -1; dj <= 1; ++dj) {
        const long ni = i + di, nj = j + dj;
        if ((di || dj) && ni >= 0 && nj >= 0 && ni < static_cast<long>(rows) && nj < static_cast<long>(cols))
          push(static_cast<std::size_t>(ni), static_cast<std::size_t>(nj));
      }
  }
  for (std::size_t p = 0; p < mask.size(); ++p)
    if (!outside[p]) mask[p] = 1;
}

std::vector<unsigned char> grow_region(std::span<const double> frame, std::size_t rows, std::size_t cols, Seed seed,
                                       double threshold) {
  require(frame.size() == rows * cols, ErrorCode::DimMismatch, "grow_region: frame size");
  require(seed.first < rows && seed.second < cols, ErrorCode::SeedOutOfBounds,
          "seed (" + std::to_string(seed.first) + ", " + std::to_string(seed.second) + ") outside " +
              std::to_string(rows) + "×" + std::to_string(cols));
  std::vector<unsigned char> in(frame.size(), 0);
  const std::size_t s = seed.second * rows + seed.first;
  in[s] = 1;
  double sum = frame[s];
  std::size_t count = 1;
  std::deque<std::size_t> q{s};
  while (!q.empty()) {
    const std::size_t p = q.front();
    q.pop_front();
    const std::size_t i = p % rows, j = p / rows;
    // neighbours in scan order: up, left, right, down
    const std::size_t nb[4] = {i > 0 ? p - 1 : SIZE_MAX, j > 0 ? p - rows : SIZE_MAX,
                               j + 1 < cols ? p + rows : SIZE_MAX, i + 1 < rows ? p + 1 : SIZE_MAX};
    for (std::size_t n : nb) {
      if (n == SIZE_MAX || in[n]) continue;
      if (std::abs(frame[n] - sum / static_cast<double>(count)) <= threshold) {
        in[n] = 1;
        sum += frame[n];
        ++count;
        q.push_back(n);
      }
    }
  }
  fill_holes(in, rows, cols);
  return in;
}

LvResult region_grow_lv(const DynTensor& frames, Seed seed, std::span<const int> thresholds,
                        const DynTensor& truth_masks) {
  require_same_dims(frames, truth_masks, "region_grow_lv");
  require(!thresholds.empty(), ErrorCode::InvalidArgument, "region_grow_lv: no thresholds");
  const std::size_t m = frames.rows(), n = frames.cols(), tau = frames.frames();
  require(seed.first < m && seed.second < n, ErrorCode::SeedOutOfBounds, "LV seed outside the image");

  // each frame scaled to 0-255 by its own max
  DynTensor scaled(frames.dims());
  for (std::size_t k = 0; k < tau; ++k) {
    const auto src = frames.frame(k);
    auto dst = scaled.frame(k);
    const double mx = *std::max_element(src.begin(), src.end());
    for (std::size_t p = 0; p < src.size(); ++p) dst[p] = mx > 0.0 ? 255.0 * std::max(src[p], 0.0) / mx : 0.0;
  }

  LvResult best;
  best.rmse_by_threshold.resize(thresholds.size());
  double best_rmse = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    DynTensor masks(frames.dims());
    parallel_for(tau, [&](std::size_t k) {
      const auto mk = grow_region(scaled.frame(k), m, n, seed, thresholds[t]);
      auto dst = masks.frame(k);
      for (std::size_t p = 0; p < mk.size(); ++p) dst[p] = mk[p];
    });
    double se = 0.0;
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < masks.size(); ++i) {
      const double d = masks[i] - truth_masks[i];
      se += d * d;
      wrong += d != 0.0;
    }
    const double rmse = std::sqrt(se / static_cast<double>(masks.size()));
    best.rmse_by_threshold[t] = rmse;
    if (rmse < best_rmse) {
      best_rmse = rmse;
      best.masks = std::move(masks);
      best.threshold_used = thresholds[t];
      best.misclassified = wrong;
    }
  }
  best.volume_curve.resize(tau);
  best.area_fraction.resize(tau);
  double fsum = 0.0;
  for (std::size_t k = 0; k < tau; ++k) {
    best.volume_curve[k] = best.masks.frame_sum(k);
    const double tv = truth_masks.frame_sum(k);
    best.area_fraction[k] = tv > 0.0 ? best.volume_curve[k] / tv : 0.0;
    fsum += best.area_fraction[k];
  }
  best.mean_area_fraction = fsum / static_cast<double>(tau);
  return best;
}

LvResult region_grow_lv(const DynTensor& frames, Seed seed, const DynTensor& truth_masks) {
  std::vector<int> t(30);
  for (int i = 0; i < 30; ++i) t[i] = i + 1;
  return region_grow_lv(frames, seed, t, truth_masks);
}

std::vector<double> line_profile(const DynTensor& t, std::size_t frame, std::pair<double, double> p0,
                                 std::pair<double, double> p1, std::size_t samples) {
  require(frame < t.frames(), ErrorCode::OutOfBounds, "line profile: frame out of range");
  require(samples >= 2, ErrorCode::InvalidArgument, "line profile needs >= 2 samples");
  const double rmax = static_cast<double>(t.rows() - 1), cmax = static_cast<double>(t.cols() - 1);
  for (auto p : {p0, p1})
    require(p.first >= 0.0 && p.first <= rmax && p.second >= 0.0 && p.second <= cmax, ErrorCode::OutOfBounds,
            "line profile endpoint outside the image");
  std::vector<double> out(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    const double u = static_cast<double>(s) / static_cast<double>(samples - 1);
    const double r = p0.first + u * (p1.first - p0.first);
    const double c = p0.second + u * (p1.second - p0.second);
    const std::size_t r0 = std::min(static_cast<std::size_t>(std::floor(r)), t.rows() - 1);
    const std::size_t c0 = std::min(static_cast<std::size_t>(std::floor(c)), t.cols() - 1);
    const std::size_t r1 = std::min(r0 + 1, t.rows() - 1), c1 = std::min(c0 + 1, t.cols() - 1);
    const double ar = r - static_cast<double>(r0), ac = c - static_cast<double>(c0);
    out[s] = (1 - ar) * (1 - ac) * t(r0, c0, frame) + ar * (1 - ac) * t(r1, c0, frame) +
             (1 - ar) * ac * t(r0, c1, frame) + ar * ac * t(r1, c1, frame);
  }
  return out;
}

Summary aggregate(std::span<const double> values) {
  require(values.size() >= 2, ErrorCode::TooFewRealizations, "a confidence interval needs at least 2 realizations");
  Summary s;
  s.n = values.size();
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(s.n);
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  const double sd = std::sqrt(ss / static_cast<double>(s.n - 1));
  s.se = sd / std::sqrt(static_cast<double>(s.n));
  const boost::math::students_t dist(static_cast<double>(s.n - 1));
  const double q = boost::math::quantile(dist, 0.975);
  s.ci_low = s.mean - q * s.se;
  s.ci_high = s.mean + q * s.se;
  return s;
}

Summary paired_difference(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::DimMismatch, "paired comparison: lengths differ");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a[i] - b[i];
  return aggregate(d);
}

}  // namespace fppg
