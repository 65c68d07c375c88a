#include "recon.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>

#include "prox.hpp"

namespace fppg {

const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Osem: return "osem";
    case Algorithm::FppgDct: return "fppg_dct";
    case Algorithm::FppgTnn: return "fppg_tnn";
    case Algorithm::FppgDctPatch: return "fppg_dct_patch";
    case Algorithm::FppgTnnPatch: return "fppg_tnn_patch";
  }
  return "?";
}

Algorithm parse_algorithm(const std::string& s) {
  for (auto a : {Algorithm::Osem, Algorithm::FppgDct, Algorithm::FppgTnn, Algorithm::FppgDctPatch,
                 Algorithm::FppgTnnPatch})
    if (s == to_string(a)) return a;
  fail(ErrorCode::Config, "unknown algorithm '" + s + "'");
}

void ReconConfig::validate(const Geometry& g) const {
  g.validate();
  require(lambda_ref >= 0.0 && std::isfinite(lambda_ref), ErrorCode::Config, "lambda must be finite and >= 0");
  require(beta > 0.0 && beta <= 1.0, ErrorCode::Config, "beta must lie in (0, 1]");
  require(iterations >= 1, ErrorCode::Config, "iterations must be >= 1");
  require(eps_fraction > 0.0, ErrorCode::NonpositiveEpsilon, "eps fraction must be > 0");
  require(postfilter_fwhm_mm >= 0.0, ErrorCode::Config, "post-filter FWHM must be >= 0");
  if (algorithm == Algorithm::Osem)
    require(subsets >= 1 && g.n_angles % subsets == 0, ErrorCode::Config,
            "subsets must divide the " + std::to_string(g.n_angles) + " projection angles");
  if (early_stop) require(early_stop_window >= 1, ErrorCode::Config, "early-stop window must be >= 1");
}

// ---- building blocks ----

DynTensor precondition(const DynTensor& f, const DynTensor& sensitivity, double eps) {
  require(eps > 0.0, ErrorCode::NonpositiveEpsilon, "preconditioner floor must be > 0");
  require_same_dims(f, sensitivity, "precondition");
  DynTensor s(f.dims());
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double v = std::max(f[i], eps);
    s[i] = sensitivity[i] > 0.0 ? v / sensitivity[i] : v;
  }
  return s;
}

double compute_mu(double lambda_ref, const DynTensor& S, double opnorm) {
  require(lambda_ref > 0.0, ErrorCode::ZeroLambda, "mu undefined for lambda = 0");
  const double smax = S.max();
  require(smax > 0.0 && opnorm > 0.0, ErrorCode::InvalidArgument, "mu needs positive preconditioner and norm");
  return 1.0 / (2.0 * lambda_ref * opnorm * opnorm * smax);
}

std::vector<double> scale_lambda(double lambda_ref, std::span<const double> frame_counts) {
  require(!frame_counts.empty(), ErrorCode::ZeroFrameCounts, "no frames");
  double mean = 0.0;
  for (std::size_t k = 0; k < frame_counts.size(); ++k) {
    require(frame_counts[k] > 0.0, ErrorCode::ZeroFrameCounts, "frame " + std::to_string(k) + " has no counts");
    mean += frame_counts[k];
  }
  mean /= static_cast<double>(frame_counts.size());
  std::vector<double> out(frame_counts.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = lambda_ref * std::sqrt(mean / frame_counts[k]);
  return out;
}

double epsilon_floor(const DynTensor& f, double fraction) {
  require(fraction > 0.0, ErrorCode::NonpositiveEpsilon, "eps fraction must be > 0");
  std::vector<double> v = f.vec();
  if (v.empty()) return 1e-9;
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  const double med = *mid;
  if (med > 0.0) return fraction * med;
  const double mx = f.max();
  if (mx > 0.0) return 1e-9 * mx;
  return 1e-9;
}

std::vector<PenaltyTerm> make_penalty_terms(Dims image, const ReconConfig& cfg) {
  using T = PenaltyTerm::Transform;
  using S = PenaltyTerm::Shrink;
  T t = T::Dct;
  S s = S::L1;
  std::optional<PatchSettings> patches;
  switch (cfg.algorithm) {
    case Algorithm::FppgDct: break;
    case Algorithm::FppgTnn: t = T::Identity, s = S::Tnn; break;
    case Algorithm::FppgDctPatch: patches = cfg.patch; break;
    case Algorithm::FppgTnnPatch:
      t = T::Identity, s = S::Tnn;
      patches = cfg.patch;
      break;
    case Algorithm::Osem: return {};
  }
  std::vector<PenaltyTerm> terms;
  terms.emplace_back(image, t, s, patches, false);
  if (cfg.rotation) terms.emplace_back(image, t, s, patches, true);
  return terms;
}

DynTensor initial_image(const DynTensor& sensitivity, const DynTensor& counts) {
  const double ss = sensitivity.sum();
  const double total = counts.sum();
  require(ss > 0.0, ErrorCode::InvalidArgument, "sensitivity is zero everywhere");
  const double v = total > 0.0 ? total / ss : 1.0;
  return DynTensor(sensitivity.dims(), v);
}

// ---- FPPG ----

namespace {

// W f: frame k scaled by λ_k/λ_ref.
DynTensor weight_frames(const DynTensor& f, const std::vector<double>& lambda_frames, double lambda_ref) {
  DynTensor w = f;
  for (std::size_t k = 0; k < f.frames(); ++k) {
    const double s = lambda_frames[k] / lambda_ref;
    for (double& x : w.frame(k)) x *= s;
  }
  return w;
}

double penalty_value(const std::vector<PenaltyTerm>& terms, const DynTensor& wf) {
  double total = 0.0;
  std::vector<double> coeff;
  for (const auto& t : terms) {
    t.apply(wf, coeff);
    total += t.value(coeff);
  }
  return total;
}

}  // namespace

FppgSolver::FppgSolver(const Projector& projector, const SinogramStack& data, ReconConfig cfg)
    : proj_(projector.with_attenuation(data.atten)), data_(data), cfg_(std::move(cfg)) {
  require(cfg_.algorithm != Algorithm::Osem, ErrorCode::Config, "FPPG solver given the OSEM algorithm");
  cfg_.validate(data_.geometry);
  data_.validate();
  const std::size_t tau = data_.frames();
  const Dims image = proj_.image_dims(tau);

  sens_ = proj_.sensitivity(tau);
  state_.f = initial_image(sens_, data_.counts);
  state_.h = state_.f;

  const auto counts = data_.frame_counts();
  if (cfg_.lambda_ref > 0.0) {
    state_.lambda_frames =
        cfg_.poisson_lambda ? scale_lambda(cfg_.lambda_ref, counts) : std::vector<double>(tau, cfg_.lambda_ref);
    terms_ = make_penalty_terms(image, cfg_);
    double sq = 0.0;
    for (const auto& t : terms_) sq += t.opnorm_sq();
    opnorm_ = std::sqrt(sq);
    for (const auto& t : terms_) state_.c.emplace_back(t.coeff_size(), 0.0);
  } else {
    state_.lambda_frames.assign(tau, 0.0);
  }
}

TraceRow FppgSolver::evaluate(const DynTensor& f) const {
  TraceRow row;
  row.iteration = iteration_;
  row.fidelity = kl_objective(proj_, f, data_.counts, data_.additive);
  row.penalty = 0.0;
  if (cfg_.lambda_ref > 0.0)
    row.penalty = cfg_.lambda_ref * penalty_value(terms_, weight_frames(f, state_.lambda_frames, cfg_.lambda_ref));
  row.objective = row.fidelity + row.penalty;
  row.rel_change = last_rel_change_;
  return row;
}

std::vector<double> FppgSolver::dual_residuals() const {
  std::vector<double> out;
  if (cfg_.lambda_ref <= 0.0 || state_.mu <= 0.0) return out;
  std::vector<double> bf;
  for (std::size_t t = 0; t < terms_.size(); ++t) {
    terms_[t].apply(state_.f, bf);
    const auto& c = state_.c[t];
    std::vector<double> v(bf.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = bf[i] + c[i] / state_.mu;
    terms_[t].prox(v, 1.0 / state_.mu);
    double num = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) num += (v[i] - bf[i]) * (v[i] - bf[i]);
    const double cn = norm2(c);
    out.push_back(state_.mu * std::sqrt(num) / std::max(cn, std::numeric_limits<double>::min()));
  }
  return out;
}

void FppgSolver::step() {
  DynTensor& f = state_.f;
  const std::size_t tau = f.frames();
  const DynTensor af = proj_.forward(f);

  // the trace row for the current iterate reuses A f
  const bool eval_penalty = cfg_.objective_every > 0 && iteration_ % cfg_.objective_every == 0;
  TraceRow row;
  row.iteration = iteration_;
  row.fidelity = kl_objective_from_projection(af, data_.counts, data_.additive);
  row.penalty = std::numeric_limits<double>::quiet_NaN();
  row.objective = std::numeric_limits<double>::quiet_NaN();
  if (eval_penalty) {
    row.penalty = cfg_.lambda_ref > 0.0 ? cfg_.lambda_ref * penalty_value(terms_, weight_frames(f, state_.lambda_frames,
                                                                                                cfg_.lambda_ref))
                                        : 0.0;
    row.objective = row.fidelity + row.penalty;
  }
  row.rel_change = last_rel_change_;
  state_.objective_trace.push_back(row);

  DynTensor grad = sens_;
  grad -= proj_.backward(kl_ratio(af, data_.counts, data_.additive));

  const DynTensor S = precondition(f, sens_, epsilon_floor(f, cfg_.eps_fraction));
  const bool penalized = cfg_.lambda_ref > 0.0;
  if (penalized) {
    if (!cfg_.freeze_mu || iteration_ == 0) state_.mu = compute_mu(cfg_.lambda_ref, S, opnorm_);
    DynTensor pen(f.dims());
    for (std::size_t t = 0; t < terms_.size(); ++t) terms_[t].adjoint_add(state_.c[t], pen);
    for (std::size_t k = 0; k < tau; ++k) {
      auto g = grad.frame(k);
      auto p = pen.frame(k);
      const double lk = state_.lambda_frames[k];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += lk * p[i];
    }
  }

  DynTensor next(f.dims());
  for (std::size_t i = 0; i < f.size(); ++i) next[i] = std::max(f[i] - cfg_.beta * S[i] * grad[i], 0.0);
  require(all_finite(next.vec()), ErrorCode::NonFinite, "iterate became non-finite at iteration " +
                                                            std::to_string(iteration_ + 1));

  double dn = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) dn += (next[i] - f[i]) * (next[i] - f[i]);
  const double fn = frobenius(f);
  last_rel_change_ = fn > 0.0 ? std::sqrt(dn) / fn : std::sqrt(dn);

  if (penalized) {
    DynTensor& h = state_.h;
    h = next;
    h *= 2.0;
    h -= f;
    const double mu = state_.mu;
    std::vector<double> v;
    for (std::size_t t = 0; t < terms_.size(); ++t) {
      terms_[t].apply(h, v);
      auto& c = state_.c[t];
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += c[i] / mu;
      std::vector<double> p = v;
      terms_[t].prox(p, 1.0 / mu);
      for (std::size_t i = 0; i < v.size(); ++i) c[i] = mu * (v[i] - p[i]);
    }
  }
  f = std::move(next);
  ++iteration_;
}

ReconResult FppgSolver::run(const IterationHook& hook) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  std::size_t quiet = 0;
  while (iteration_ < cfg_.iterations) {
    step();
    state_.objective_trace.back().wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    if (hook) hook(iteration_, state_.f);
    if (cfg_.early_stop) {
      quiet = last_rel_change_ < cfg_.early_stop_tol ? quiet + 1 : 0;
      if (quiet >= cfg_.early_stop_window) break;
    }
  }
  ReconResult r;
  TraceRow last = evaluate(state_.f);
  r.final_dual_residuals = dual_residuals();
  if (!r.final_dual_residuals.empty()) {
    double m = 0.0;
    for (double x : r.final_dual_residuals) m = std::max(m, x);
    last.dual_residual = m;
  }
  last.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  state_.objective_trace.push_back(last);
  r.image = state_.f;
  r.trace = state_.objective_trace;
  r.iterations_run = iteration_;
  r.mu = state_.mu;
  r.final_rel_change = last_rel_change_;
  return r;
}

namespace {

ReconResult run_fppg(Algorithm a, const Projector& p, const SinogramStack& data, ReconConfig cfg,
                     const IterationHook& hook) {
  cfg.algorithm = a;
  FppgSolver solver(p, data, std::move(cfg));
  return solver.run(hook);
}

}  // namespace

ReconResult fppg_dct(const Projector& p, const SinogramStack& data, const ReconConfig& cfg,
                     const IterationHook& hook) {
  return run_fppg(Algorithm::FppgDct, p, data, cfg, hook);
}

ReconResult fppg_tnn(const Projector& p, const SinogramStack& data, const ReconConfig& cfg,
                     const IterationHook& hook) {
  return run_fppg(Algorithm::FppgTnn, p, data, cfg, hook);
}

ReconResult fppg_dct_patch(const Projector& p, const SinogramStack& data, const ReconConfig& cfg,
                           const IterationHook& hook) {
  return run_fppg(Algorithm::FppgDctPatch, p, data, cfg, hook);
}

ReconResult fppg_tnn_patch(const Projector& p, const SinogramStack& data, const ReconConfig& cfg,
                           const IterationHook& hook) {
  return run_fppg(Algorithm::FppgTnnPatch, p, data, cfg, hook);
}

// ---- OSEM ----

ReconResult mlem_osem(const Projector& p, const SinogramStack& data, const ReconConfig& cfg,
                      const IterationHook& hook) {
  cfg.validate(data.geometry);
  data.validate();
  const Projector proj = p.with_attenuation(data.atten);
  const std::size_t tau = data.frames();
  const Dims image = proj.image_dims(tau);
  const std::size_t npix = image.frame_size();
  const std::size_t nbin = data.geometry.bins();
  const std::size_t nsub = cfg.subsets;

  // per-frame, per-subset sensitivities
  std::vector<double> sens(tau * nsub * npix, 0.0);
  {
    const std::vector<double> ones(nbin, 1.0);
    parallel_for(tau * nsub, [&](std::size_t idx) {
      const std::size_t k = idx / nsub, s = idx % nsub;
      proj.backward_frame(ones, k, std::span<double>(sens.data() + idx * npix, npix), s, nsub);
    });
  }

  DynTensor f(image);
  for (std::size_t k = 0; k < tau; ++k) {
    double st = 0.0;
    for (std::size_t s = 0; s < nsub; ++s)
      for (std::size_t j = 0; j < npix; ++j) st += sens[(k * nsub + s) * npix + j];
    const double total = data.counts.frame_sum(k);
    const double v = st > 0.0 && total > 0.0 ? total / st : 1.0;
    for (double& x : f.frame(k)) x = v;
  }

  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  ReconResult r;
  double rel = 0.0;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    TraceRow row;
    row.iteration = it - 1;
    row.fidelity = kl_objective(proj, f, data.counts, data.additive);
    row.penalty = 0.0;
    row.objective = row.fidelity;
    row.rel_change = rel;

    const DynTensor prev = f;
    parallel_for(tau, [&](std::size_t k) {
      std::vector<double> sino(nbin), back(npix);
      auto fk = f.frame(k);
      auto gk = data.counts.frame(k);
      auto ak = data.additive.frame(k);
      for (std::size_t s = 0; s < nsub; ++s) {
        proj.forward_frame(fk, k, sino, s, nsub);
        for (std::size_t b = 0; b < nbin; ++b) {
          if ((b / data.geometry.n_radial) % nsub != s) continue;
          const double den = sino[b] + ak[b];
          if (gk[b] <= 0.0) {
            sino[b] = 0.0;
            continue;
          }
          require(den > 0.0, ErrorCode::DivisionByZeroBin,
                  "frame " + std::to_string(k) + " bin " + std::to_string(b) + ": Af + additive = 0 with counts > 0");
          sino[b] = gk[b] / den;
        }
        std::fill(back.begin(), back.end(), 0.0);
        proj.backward_frame(sino, k, back, s, nsub);
        const double* sk = sens.data() + (k * nsub + s) * npix;
        for (std::size_t j = 0; j < npix; ++j)
          if (sk[j] > 0.0) fk[j] *= back[j] / sk[j];
      }
    });
    require(all_finite(f.vec()), ErrorCode::NonFinite, "OSEM iterate became non-finite");
    double dn = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) dn += (f[i] - prev[i]) * (f[i] - prev[i]);
    const double pn = frobenius(prev);
    rel = pn > 0.0 ? std::sqrt(dn) / pn : std::sqrt(dn);
    row.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    r.trace.push_back(row);
    if (hook) hook(it, f);
  }
  TraceRow last;
  last.iteration = cfg.iterations;
  last.fidelity = kl_objective(proj, f, data.counts, data.additive);
  last.objective = last.fidelity;
  last.rel_change = rel;
  last.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  r.trace.push_back(last);

  r.image = gaussian_postfilter(f, cfg.postfilter_fwhm_mm, data.geometry.pixel_mm());
  r.iterations_run = cfg.iterations;
  r.final_rel_change = rel;
  return r;
}

ReconResult reconstruct(const Projector& p, const SinogramStack& data, const ReconConfig& cfg,
                        const IterationHook& hook) {
  switch (cfg.algorithm) {
    case Algorithm::Osem: return mlem_osem(p, data, cfg, hook);
    case Algorithm::FppgDct: return fppg_dct(p, data, cfg, hook);
    case Algorithm::FppgTnn: return fppg_tnn(p, data, cfg, hook);
    case Algorithm::FppgDctPatch: return fppg_dct_patch(p, data, cfg, hook);
    case Algorithm::FppgTnnPatch: return fppg_tnn_patch(p, data, cfg, hook);
  }
  fail(ErrorCode::Config, "unknown algorithm");
}

// ---- utilities ----

namespace {

std::size_t mirror(long u, std::size_t n) {
  const long N = static_cast<long>(n);
  long x = u;
  while (x < 0 || x >= N) {
    if (x < 0) x = -x - 1;
    if (x >= N) x = 2 * N - x - 1;
  }
  return static_cast<std::size_t>(x);
}

}  // namespace

DynTensor gaussian_postfilter(const DynTensor& f, double fwhm_mm, double pixel_mm) {
  require(fwhm_mm >= 0.0 && pixel_mm > 0.0, ErrorCode::InvalidArgument, "post-filter needs fwhm >= 0, pixel > 0");
  if (fwhm_mm == 0.0) return f;
  const double sigma = fwhm_mm / (2.0 * std::sqrt(2.0 * std::numbers::ln2)) / pixel_mm;
  const long radius = std::max<long>(1, static_cast<long>(std::ceil(4.0 * sigma)));
  std::vector<double> w(2 * radius + 1);
  double ws = 0.0;
  for (long d = -radius; d <= radius; ++d) ws += w[d + radius] = std::exp(-0.5 * d * d / (sigma * sigma));
  for (double& x : w) x /= ws;

  const std::size_t m = f.rows(), n = f.cols();
  DynTensor out(f.dims());
  std::vector<double> tmp(m * n);
  for (std::size_t k = 0; k < f.frames(); ++k) {
    auto src = f.frame(k);
    auto dst = out.frame(k);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (long d = -radius; d <= radius; ++d)
          acc += w[d + radius] * src[j * m + mirror(static_cast<long>(i) + d, m)];
        tmp[j * m + i] = acc;
      }
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (long d = -radius; d <= radius; ++d)
          acc += w[d + radius] * tmp[mirror(static_cast<long>(j) + d, n) * m + i];
        dst[j * m + i] = acc;
      }
  }
  return out;
}

SinogramStack gated_rebin(const SinogramStack& s, std::size_t bins, std::size_t cycle) {
  const std::size_t tau = s.frames();
  require(bins >= 1 && cycle >= 1 && cycle % bins == 0 && tau % cycle == 0, ErrorCode::BadBinning,
          "cannot gate " + std::to_string(tau) + " frames into " + std::to_string(bins) + " bins of a " +
              std::to_string(cycle) + "-frame cycle");
  const Dims d{s.counts.rows(), s.counts.cols(), bins};
  SinogramStack out;
  out.geometry = s.geometry;
  out.counts = DynTensor(d);
  out.additive = DynTensor(d);
  if (!s.atten.empty()) out.atten = DynTensor(d);
  std::vector<double> members(bins, 0.0);
  for (std::size_t k = 0; k < tau; ++k) {
    const std::size_t b = (k % cycle) * bins / cycle;
    members[b] += 1.0;
    auto add = [&](const DynTensor& src, DynTensor& dst) {
      auto a = src.frame(k);
      auto o = dst.frame(b);
      for (std::size_t i = 0; i < a.size(); ++i) o[i] += a[i];
    };
    add(s.counts, out.counts);
    add(s.additive, out.additive);
    if (!s.atten.empty()) add(s.atten, out.atten);
  }
  if (!s.atten.empty())
    for (std::size_t b = 0; b < bins; ++b)
      for (double& x : out.atten.frame(b)) x /= members[b];
  return out;
}

double objective(const Projector& p, const DynTensor& f, const SinogramStack& data, const ReconConfig& cfg) {
  const Projector proj = p.with_attenuation(data.atten);
  const double F = kl_objective(proj, f, data.counts, data.additive);
  if (cfg.algorithm == Algorithm::Osem || cfg.lambda_ref <= 0.0) return F;
  const auto terms = make_penalty_terms(f.dims(), cfg);
  const auto lam = cfg.poisson_lambda ? scale_lambda(cfg.lambda_ref, data.frame_counts())
                                      : std::vector<double>(f.frames(), cfg.lambda_ref);
  return F + cfg.lambda_ref * penalty_value(terms, weight_frames(f, lam, cfg.lambda_ref));
}

}  // namespace fppg
