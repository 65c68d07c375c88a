#include "kinetics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace fppg {

double ki(const KineticParams& p) {
  const double d = p.k2 + p.k3;
  return d > 0.0 ? p.K1 * p.k3 / d : 0.0;
}

double FrameSchedule::total() const {
  double s = 0.0;
  for (double d : duration) s += d;
  return s;
}

void FrameSchedule::validate() const {
  require(!duration.empty() && start.size() == duration.size(), ErrorCode::BadSchedule,
          "frame schedule needs matching, nonempty start and duration lists");
  for (std::size_t i = 0; i < duration.size(); ++i) {
    require(duration[i] > 0.0 && std::isfinite(duration[i]), ErrorCode::BadSchedule,
            "frame " + std::to_string(i) + " has nonpositive duration");
    require(start[i] >= 0.0, ErrorCode::BadSchedule, "frame " + std::to_string(i) + " starts before injection");
    if (i > 0)
      require(start[i] >= start[i - 1] + duration[i - 1] - 1e-9, ErrorCode::BadSchedule,
              "frame " + std::to_string(i) + " overlaps its predecessor");
  }
}

FrameSchedule FrameSchedule::from_durations(std::vector<double> durations) {
  FrameSchedule s;
  double t = 0.0;
  for (double d : durations) {
    s.start.push_back(t);
    t += d;
  }
  s.duration = std::move(durations);
  s.validate();
  return s;
}

FrameSchedule FrameSchedule::brain28() {
  std::vector<double> d;
  auto add = [&](int n, double len) { d.insert(d.end(), n, len); };
  add(6, 5), add(3, 10), add(3, 20), add(2, 30), add(2, 60), add(2, 150), add(10, 300);
  return from_durations(std::move(d));
}

void InputFunction::validate() const {
  require(L1 < 0.0 && L2 < 0.0 && L3 < 0.0, ErrorCode::BadSpec, "input function exponents must be negative");
  require(A1 >= 0.0 && A2 >= 0.0 && A3 >= 0.0, ErrorCode::BadSpec, "input function amplitudes must be >= 0");
}

double InputFunction::operator()(double t_seconds) const {
  if (t_seconds <= 0.0) return 0.0;
  const double t = t_seconds / 60.0;
  const double v = (A1 * t - A2 - A3) * std::exp(L1 * t) + A2 * std::exp(L2 * t) + A3 * std::exp(L3 * t);
  return std::max(v, 0.0);
}

std::vector<double> InputFunction::sample(std::span<const double> t_seconds) const {
  std::vector<double> out(t_seconds.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*this)(t_seconds[i]);
  return out;
}

namespace {

// Forward-mode dual number with N derivative slots.
template <int N>
struct Dual {
  double v = 0.0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double x) : v(x) {}  // NOLINT(google-explicit-constructor)
  static Dual var(double x, int i) {
    Dual r(x);
    r.d[i] = 1.0;
    return r;
  }
};

template <int N>
Dual<N> operator+(Dual<N> a, const Dual<N>& b) {
  a.v += b.v;
  for (int i = 0; i < N; ++i) a.d[i] += b.d[i];
  return a;
}
template <int N>
Dual<N> operator-(Dual<N> a, const Dual<N>& b) {
  a.v -= b.v;
  for (int i = 0; i < N; ++i) a.d[i] -= b.d[i];
  return a;
}
template <int N>
Dual<N> operator-(Dual<N> a) {
  a.v = -a.v;
  for (auto& x : a.d) x = -x;
  return a;
}
template <int N>
Dual<N> operator*(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r(a.v * b.v);
  for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
template <int N>
Dual<N> operator/(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r(a.v / b.v);
  const double inv = 1.0 / (b.v * b.v);
  for (int i = 0; i < N; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) * inv;
  return r;
}
template <int N>
Dual<N> exp(const Dual<N>& a) {
  Dual<N> r(std::exp(a.v));
  for (int i = 0; i < N; ++i) r.d[i] = r.v * a.d[i];
  return r;
}
template <int N>
Dual<N> sqrt(const Dual<N>& a) {
  Dual<N> r(std::sqrt(a.v));
  const double g = r.v > 0.0 ? 0.5 / r.v : 0.0;
  for (int i = 0; i < N; ++i) r.d[i] = g * a.d[i];
  return r;
}

inline double value(double x) { return x; }
template <int N>
double value(const Dual<N>& x) {
  return x.v;
}

using std::exp;
using std::sqrt;

// 8-point Gauss–Legendre on [-1, 1]
constexpr std::array<double, 8> kGlX{-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                     -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                     0.7966664774136267,  0.9602898564975363};
constexpr std::array<double, 8> kGlW{0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                     0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                     0.2223810344533745, 0.1012285362903763};

// e^{st}·∫₀ᵗ τᵖ e^{(r−s)τ} dτ for p ∈ {0, 1}: the convolution of τᵖe^{rτ}
// with e^{sτ}, evaluated without forming e^{st} and e^{(r−s)t} separately.
template <class T>
T conv_term(int p, double r, const T& s, double t) {
  const T b = T(r) - s;
  const double bt = value(b) * t;
  if (std::abs(bt) < 0.5) {
    // series in bt
    T sum(0.0);
    T term(1.0);  // (bt)^n / n!
    const T btt = b * T(t);
    for (int n = 0; n < 30; ++n) {
      sum = sum + term / T(static_cast<double>(n + p + 1));
      term = term * btt / T(static_cast<double>(n + 1));
    }
    return exp(s * T(t)) * T(std::pow(t, p + 1)) * sum;
  }
  const T er = T(std::exp(r * t));
  const T es = exp(s * T(t));
  if (p == 0) return (er - es) / b;
  // p == 1
  const T b2 = b * b;
  return er * (T(t) / b - T(1.0) / b2) + es / b2;
}

// C₁+C₂ at time t (min) for exponential rates α and weights φ.
template <class T>
T tissue_at(const InputFunction& in, const std::array<T, 2>& phi, const std::array<T, 2>& alpha, int nexp, double t) {
  if (t <= 0.0) return T(0.0);
  T acc(0.0);
  for (int i = 0; i < nexp; ++i) {
    const T s = -alpha[i];
    T c = T(in.A1) * conv_term(1, in.L1, s, t) + T(-in.A2 - in.A3) * conv_term(0, in.L1, s, t) +
          T(in.A2) * conv_term(0, in.L2, s, t) + T(in.A3) * conv_term(0, in.L3, s, t);
    acc = acc + phi[i] * c;
  }
  return acc;
}

template <class T>
std::vector<T> model(const std::array<T, 5>& q, const InputFunction& in, const FrameSchedule& fr,
                     BloodConvention conv) {
  const T& K1 = q[0];
  const T& k2 = q[1];
  const T& k3 = q[2];
  const T& k4 = q[3];
  const T& Va = q[4];

  std::array<T, 2> phi{T(0.0), T(0.0)}, alpha{T(0.0), T(0.0)};
  int nexp = 2;
  const T sum = k2 + k3 + k4;
  const T disc = sum * sum - T(4.0) * k2 * k4;
  const T root = sqrt(T(std::max(value(disc), 0.0)) + (disc - T(value(disc))));
  if (value(root) <= 1e-12 * std::max(1.0, value(sum))) {
    // k₃ = 0 and k₂ = k₄: one tissue compartment
    nexp = 1;
    phi[0] = K1;
    alpha[0] = k2;
  } else {
    const T a2 = (sum + root) / T(2.0);
    const T a1 = value(a2) > 0.0 ? (T(2.0) * k2 * k4) / (sum + root) : T(0.0);
    const T den = a2 - a1;
    alpha = {a1, a2};
    phi[0] = K1 * (k3 + k4 - a1) / den;
    phi[1] = K1 * (a2 - k3 - k4) / den;
  }
  const T tissue_w = conv == BloodConvention::Fractional ? T(1.0) - Va : T(1.0);

  std::vector<T> out(fr.size());
  for (std::size_t f = 0; f < fr.size(); ++f) {
    const double a = fr.start[f] / 60.0, len = fr.duration[f] / 60.0;
    T acc(0.0);
    for (std::size_t g = 0; g < kGlX.size(); ++g) {
      const double t = a + 0.5 * len * (kGlX[g] + 1.0);
      const T c = tissue_at(in, phi, alpha, nexp, t);
      acc = acc + T(0.5 * kGlW[g]) * (tissue_w * c + Va * T(in(t * 60.0)));
    }
    out[f] = acc;
  }
  return out;
}

void check_inputs(const KineticParams& p, const InputFunction& in, const FrameSchedule& fr) {
  fr.validate();
  in.validate();
  for (double v : p.as_array())
    require(v >= 0.0 && std::isfinite(v), ErrorCode::InvalidArgument, "kinetic parameters must be finite and >= 0");
}

}  // namespace

std::vector<double> two_tissue_tac(const KineticParams& p, const InputFunction& input, const FrameSchedule& frames,
                                   BloodConvention conv) {
  check_inputs(p, input, frames);
  return model<double>(p.as_array(), input, frames, conv);
}

std::vector<std::array<double, 5>> two_tissue_jacobian(const KineticParams& p, const InputFunction& input,
                                                       const FrameSchedule& frames, BloodConvention conv) {
  check_inputs(p, input, frames);
  using D = Dual<5>;
  const auto a = p.as_array();
  std::array<D, 5> q;
  for (int i = 0; i < 5; ++i) q[i] = D::var(a[i], i);
  const auto m = model<D>(q, input, frames, conv);
  std::vector<std::array<double, 5>> J(m.size());
  for (std::size_t f = 0; f < m.size(); ++f) J[f] = m[f].d;
  return J;
}

std::vector<double> default_weights(std::span<const double> tac, const FrameSchedule& frames, double floor) {
  require(tac.size() == frames.size(), ErrorCode::DimMismatch, "weights: TAC length != frames");
  double mx = 0.0;
  for (double v : tac) mx = std::max(mx, v);
  const double lo = floor * mx;
  std::vector<double> w(tac.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = lo > 0.0 ? frames.duration[i] / std::max(tac[i], lo) : frames.duration[i];
  return w;
}

FitResult wnls_fit(std::span<const double> tac, const InputFunction& input, const FrameSchedule& frames,
                   std::span<const double> weights, const KineticParams& init, const FitOptions& opts) {
  frames.validate();
  require(tac.size() == frames.size() && weights.size() == frames.size(), ErrorCode::DimMismatch,
          "fit: TAC, weights and schedule lengths differ");
  require(opts.upper > opts.lower, ErrorCode::InvalidArgument, "fit: empty parameter box");
  bool any_w = false;
  for (double w : weights) {
    require(w >= 0.0 && std::isfinite(w), ErrorCode::BadWeights, "fit weights must be finite and >= 0");
    any_w = any_w || w > 0.0;
  }
  require(any_w, ErrorCode::BadWeights, "all fit weights are zero");

  FitResult res;
  if (std::all_of(tac.begin(), tac.end(), [](double v) { return v == 0.0; })) {
    res.params = KineticParams::from_array({opts.lower, opts.lower, opts.lower, opts.lower, opts.lower});
    res.converged = true;
    return res;
  }

  using Vec5 = Eigen::Matrix<double, 5, 1>;
  using Mat5 = Eigen::Matrix<double, 5, 5>;
  auto clamp = [&](Vec5 v) {
    for (int i = 0; i < 5; ++i) v[i] = std::clamp(v[i], opts.lower, opts.upper);
    return v;
  };
  auto cost_of = [&](const Vec5& v) {
    const auto m = model<double>({v[0], v[1], v[2], v[3], v[4]}, input, frames, opts.convention);
    double c = 0.0;
    for (std::size_t f = 0; f < m.size(); ++f) c += weights[f] * (tac[f] - m[f]) * (tac[f] - m[f]);
    return c;
  };

  const auto a0 = init.as_array();
  Vec5 p = clamp(Vec5(a0.data()));
  double cost = cost_of(p);
  require(std::isfinite(cost), ErrorCode::FitDiverged, "fit: non-finite residual at the initial guess");
  double lambda = opts.damping;

  std::size_t it = 0;
  for (; it < opts.max_iterations; ++it) {
    using D = Dual<5>;
    std::array<D, 5> q;
    for (int i = 0; i < 5; ++i) q[i] = D::var(p[i], i);
    const auto m = model<D>(q, input, frames, opts.convention);
    Mat5 A = Mat5::Zero();
    Vec5 g = Vec5::Zero();
    for (std::size_t f = 0; f < m.size(); ++f) {
      const Vec5 j(m[f].d.data());
      const double r = tac[f] - m[f].v;
      A.noalias() += weights[f] * j * j.transpose();
      g.noalias() += weights[f] * r * j;
    }

    bool accepted = false;
    while (!accepted) {
      Mat5 H = A;
      for (int i = 0; i < 5; ++i) H(i, i) += lambda * std::max(A(i, i), 1e-12);
      const Vec5 step = H.ldlt().solve(g);
      const Vec5 trial = clamp(p + step);
      const double c = cost_of(trial);
      if (std::isfinite(c) && c < cost) {
        const double moved = (trial - p).norm();
        p = trial;
        cost = c;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        if (moved <= opts.param_tol * (p.norm() + opts.param_tol)) {
          res.converged = true;
          break;
        }
      } else {
        lambda *= 10.0;
        if (lambda > 1e16) {
          // no descent direction left inside the box
          res.converged = true;
          break;
        }
      }
    }
    if (res.converged) {
      ++it;
      break;
    }
  }
  require(std::isfinite(cost), ErrorCode::FitDiverged, "fit: non-finite residual");
  res.params = KineticParams::from_array({p[0], p[1], p[2], p[3], p[4]});
  res.residual = cost;
  res.iterations = it;
  return res;
}

const DynTensor& ParametricMaps::by_name(const std::string& name) const {
  if (name == "K1") return K1;
  if (name == "k2") return k2;
  if (name == "k3") return k3;
  if (name == "k4") return k4;
  if (name == "Va") return Va;
  if (name == "Ki") return Ki;
  fail(ErrorCode::InvalidArgument, "unknown parameter map '" + name + "'");
}

ParametricMaps parametric_images(const DynTensor& dyn, const InputFunction& input, const FrameSchedule& frames,
                                 const DynTensor& mask, const KineticParams& init, const FitOptions& opts) {
  frames.validate();
  require(dyn.frames() == frames.size(), ErrorCode::DimMismatch, "parametric images: frame count != schedule");
  require(mask.rows() == dyn.rows() && mask.cols() == dyn.cols() && mask.frames() == 1, ErrorCode::DimMismatch,
          "parametric images: mask must be m×n×1");
  const Dims d{dyn.rows(), dyn.cols(), 1};
  ParametricMaps out{DynTensor(d), DynTensor(d), DynTensor(d), DynTensor(d),
                     DynTensor(d), DynTensor(d), DynTensor(d), 0};
  const std::size_t npix = d.frame_size();
  std::vector<std::size_t> voxels;
  for (std::size_t j = 0; j < npix; ++j)
    if (mask[j] != 0.0) voxels.push_back(j);

  parallel_for(voxels.size(), [&](std::size_t v) {
    const std::size_t j = voxels[v];
    std::vector<double> tac(frames.size());
    for (std::size_t k = 0; k < tac.size(); ++k) tac[k] = dyn[k * npix + j];
    try {
      const auto w = default_weights(tac, frames, opts.weight_floor);
      const auto r = wnls_fit(tac, input, frames, w, init, opts);
      out.K1[j] = r.params.K1;
      out.k2[j] = r.params.k2;
      out.k3[j] = r.params.k3;
      out.k4[j] = r.params.k4;
      out.Va[j] = r.params.Va;
      out.Ki[j] = ki(r.params);
      if (!r.converged) out.failures[j] = 1.0;
    } catch (const Error&) {
      out.failures[j] = 1.0;
    }
  });
  out.failed = static_cast<std::size_t>(out.failures.sum());
  return out;
}

}  // namespace fppg
