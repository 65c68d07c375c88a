#include "pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>
#include <sstream>

#include "config.hpp"

namespace fs = std::filesystem;

namespace fppg {

// ---- config ----

namespace {

const std::vector<std::string> kRunKeys{"name", "realizations", "seed", "out", "threads", "lv", "fit", "fit_methods"};
const std::vector<std::string> kPhantomKeys{
    "kind",           "side",           "frames",        "fov_mm",          "supersample",      "lv_area_mm2",
    "lv_area_amp_mm2", "liver_amplitude_mm", "act_body", "act_lung",        "act_myocardium",   "act_blood",
    "act_liver",      "scalp",          "gray",          "white",           "lesion1",          "lesion2",
    "lesion3",        "convention",     "frame_seconds", "cardiac_period_s", "breathing_period_s"};
const std::vector<std::string> kNoiseKeys{"mean_counts", "scatter_fraction", "random_fraction"};
const std::vector<std::string> kGeometryKeys{"n_radial", "n_angles"};
const std::vector<std::string> kSweepKeys{"ratio", "ssim_tol", "max_evals", "realization"};
const std::vector<std::string> kKineticsKeys{"upper", "max_iterations", "param_tol", "damping", "weight_floor"};
const std::vector<std::string> kMethodKeys{
    "algorithm",  "lambda",       "iterations",     "subsets",        "beta",          "patch",
    "span",       "pad",          "rotation",       "eps_fraction",   "freeze_mu",     "poisson_lambda",
    "objective_every", "early_stop", "early_stop_tol", "sweep_lambdas", "sweep_iterations", "select_by_ssim",
    "fwhm_mm",    "fwhm_max_mm",  "fwhm_step_mm",   "gated_bins"};

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::size_t nonneg(const IniConfig& ini, const std::string& sec, const std::string& key, long fallback) {
  const long v = ini.get_int(sec, key, fallback);
  if (v < 0) ini.fail_at(sec, key, "must be >= 0");
  return static_cast<std::size_t>(v);
}

KineticParams params_from(const IniConfig& ini, const std::string& key, const KineticParams& fallback) {
  if (!ini.has("phantom", key)) return fallback;
  const auto v = ini.get_list("phantom", key, {});
  if (v.size() != 5) ini.fail_at("phantom", key, "expected K1, k2, k3, k4, Va");
  return {v[0], v[1], v[2], v[3], v[4]};
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  const IniConfig ini = IniConfig::parse(text, source);
  RunConfig c;
  c.text = text;
  c.source = source;
  for (const auto& s : ini.sections()) {
    const bool known = s == "run" || s == "phantom" || s == "noise" || s == "geometry" || s == "sweep" ||
                       s == "kinetics" || s.rfind("method ", 0) == 0;
    if (!known) fail(ErrorCode::Config, source + ": unknown section [" + s + "]");
  }
  ini.check_keys("run", kRunKeys);
  ini.check_keys("phantom", kPhantomKeys);
  ini.check_keys("noise", kNoiseKeys);
  ini.check_keys("geometry", kGeometryKeys);
  ini.check_keys("sweep", kSweepKeys);
  ini.check_keys("kinetics", kKineticsKeys);

  c.name = ini.get("run", "name", "run");
  c.realizations = nonneg(ini, "run", "realizations", 1);
  c.seed = nonneg(ini, "run", "seed", 1);
  c.out_dir = ini.get("run", "out", "out");
  c.threads = static_cast<int>(ini.get_int("run", "threads", 1));
  c.lv = ini.get_bool("run", "lv", false);
  c.fit = ini.get_bool("run", "fit", false);
  c.fit_methods = split_names(ini.get("run", "fit_methods", ""));

  const PhantomKind kind = parse_phantom_kind(ini.get("phantom", "kind", "cardiac"));
  const std::size_t side = nonneg(ini, "phantom", "side", kind == PhantomKind::CardiacLung ? 64 : 96);
  if (kind == PhantomKind::CardiacLung) {
    PhantomSpec p = PhantomSpec::cardiac(side, 1);
    p.frame_seconds = ini.get_double("phantom", "frame_seconds", p.frame_seconds);
    p.cardiac_period_s = ini.get_double("phantom", "cardiac_period_s", p.cardiac_period_s);
    p.breathing_period_s = ini.get_double("phantom", "breathing_period_s", p.breathing_period_s);
    if (!(p.frame_seconds > 0.0)) ini.fail_at("phantom", "frame_seconds", "must be > 0");
    p.frames = nonneg(ini, "phantom", "frames", 2 * static_cast<long>(p.frames_per_breathing_cycle()));
    p.frame_durations.assign(p.frames, p.frame_seconds);
    p.lv_area_mm2 = ini.get_double("phantom", "lv_area_mm2", p.lv_area_mm2);
    p.lv_area_amp_mm2 = ini.get_double("phantom", "lv_area_amp_mm2", p.lv_area_amp_mm2);
    p.liver_amplitude_mm = ini.get_double("phantom", "liver_amplitude_mm", p.liver_amplitude_mm);
    p.act_body = ini.get_double("phantom", "act_body", p.act_body);
    p.act_lung = ini.get_double("phantom", "act_lung", p.act_lung);
    p.act_myocardium = ini.get_double("phantom", "act_myocardium", p.act_myocardium);
    p.act_blood = ini.get_double("phantom", "act_blood", p.act_blood);
    p.act_liver = ini.get_double("phantom", "act_liver", p.act_liver);
    c.phantom = p;
    c.noise = NoiseSpec::cardiac();
  } else {
    PhantomSpec p = PhantomSpec::brain(side);
    const char* keys[6] = {"scalp", "gray", "white", "lesion1", "lesion2", "lesion3"};
    for (int i = 0; i < 6; ++i) p.brain_params[i] = params_from(ini, keys[i], p.brain_params[i]);
    const std::string conv = ini.get("phantom", "convention", "fractional");
    if (conv == "fractional")
      p.convention = BloodConvention::Fractional;
    else if (conv == "additive")
      p.convention = BloodConvention::Additive;
    else
      ini.fail_at("phantom", "convention", "expected fractional or additive");
    c.phantom = p;
    c.noise = NoiseSpec::brain();
  }
  c.phantom.fov_mm = ini.get_double("phantom", "fov_mm", c.phantom.fov_mm);
  c.phantom.supersample = nonneg(ini, "phantom", "supersample", 3);

  c.noise.mean_counts_per_frame = ini.get_double("noise", "mean_counts", c.noise.mean_counts_per_frame);
  c.noise.scatter_fraction = ini.get_double("noise", "scatter_fraction", c.noise.scatter_fraction);
  c.noise.random_fraction = ini.get_double("noise", "random_fraction", c.noise.random_fraction);

  c.geometry = Geometry::desk(c.phantom.side, c.phantom.fov_mm);
  if (ini.has("geometry", "n_radial") || ini.has("geometry", "n_angles"))
    c.geometry = Geometry::uniform(c.phantom.side, nonneg(ini, "geometry", "n_radial", c.geometry.n_radial),
                                   nonneg(ini, "geometry", "n_angles", c.geometry.n_angles), c.phantom.fov_mm);

  c.sweep.ratio = ini.get_double("sweep", "ratio", c.sweep.ratio);
  c.sweep.ssim_tol = ini.get_double("sweep", "ssim_tol", c.sweep.ssim_tol);
  c.sweep.max_evals = nonneg(ini, "sweep", "max_evals", static_cast<long>(c.sweep.max_evals));
  c.sweep.realization = nonneg(ini, "sweep", "realization", 0);

  c.fit_options.upper = ini.get_double("kinetics", "upper", c.fit_options.upper);
  c.fit_options.max_iterations = nonneg(ini, "kinetics", "max_iterations", 200);
  c.fit_options.param_tol = ini.get_double("kinetics", "param_tol", c.fit_options.param_tol);
  c.fit_options.damping = ini.get_double("kinetics", "damping", c.fit_options.damping);
  c.fit_options.weight_floor = ini.get_double("kinetics", "weight_floor", c.fit_options.weight_floor);
  c.fit_options.convention = c.phantom.convention;

  // patch defaults follow the phantom: whole-run temporal patches for the
  // cardiac set, 4-frame patches for the brain set
  PatchSettings patch_default;
  if (kind == PhantomKind::CardiacLung) {
    patch_default.patch = {8, 8, c.phantom.frames};
    patch_default.span = {4, 4, c.phantom.frames};
  } else {
    patch_default.patch = {8, 8, 4};
    patch_default.span = {4, 4, 2};
  }

  for (const auto& s : ini.sections()) {
    if (s.rfind("method ", 0) != 0) continue;
    ini.check_keys(s, kMethodKeys);
    MethodConfig m;
    m.name = s.substr(7);
    if (m.name.empty() || m.name.find_first_of("/\\ ,") != std::string::npos)
      fail(ErrorCode::Config, source + ": bad method name in [" + s + "]");
    ReconConfig& r = m.recon;
    r.algorithm = parse_algorithm(ini.require_string(s, "algorithm"));
    r.lambda_ref = ini.get_double(s, "lambda", 0.0);
    r.iterations = nonneg(ini, s, "iterations", r.algorithm == Algorithm::Osem ? 20 : 300);
    r.subsets = nonneg(ini, s, "subsets", r.algorithm == Algorithm::Osem ? 24 : 1);
    r.beta = ini.get_double(s, "beta", 1.0);
    r.patch = patch_default;
    r.patch.patch = ini.get_dims(s, "patch", patch_default.patch);
    r.patch.span = ini.get_dims(s, "span", patch_default.span);
    if (ini.has(s, "pad")) r.patch.pad_rows = r.patch.pad_cols = ini.get_int(s, "pad", -1);
    r.rotation = ini.get_bool(s, "rotation", false);
    r.eps_fraction = ini.get_double(s, "eps_fraction", 0.01);
    r.freeze_mu = ini.get_bool(s, "freeze_mu", false);
    r.poisson_lambda = ini.get_bool(s, "poisson_lambda", true);
    r.objective_every = nonneg(ini, s, "objective_every", 10);
    r.early_stop = ini.get_bool(s, "early_stop", false);
    r.early_stop_tol = ini.get_double(s, "early_stop_tol", r.early_stop_tol);
    r.postfilter_fwhm_mm = ini.get_double(s, "fwhm_mm", 0.0);
    m.sweep_lambdas = ini.get_list(s, "sweep_lambdas", {});
    m.sweep_iterations = nonneg(ini, s, "sweep_iterations", 0);
    m.select_by_ssim = ini.get_bool(s, "select_by_ssim", !ini.has(s, "fwhm_mm"));
    m.fwhm_max_mm = ini.get_double(s, "fwhm_max_mm", 30.0);
    m.fwhm_step_mm = ini.get_double(s, "fwhm_step_mm", 0.5);
    m.gated_bins = nonneg(ini, s, "gated_bins", 0);
    c.methods.push_back(std::move(m));
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Config, "cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path);
}

void RunConfig::validate() const {
  auto bad = [&](const std::string& what) { fail(ErrorCode::Config, source + ": " + what); };
  phantom.validate();
  noise.validate();
  geometry.validate();
  if (geometry.image_side != phantom.side) bad("geometry does not match the phantom side");
  if (realizations < 1) bad("[run] realizations must be >= 1");
  if (threads < 1) bad("[run] threads must be >= 1");
  if (methods.empty()) bad("no [method NAME] sections");
  if (sweep.ratio <= 1.0) bad("[sweep] ratio must be > 1");
  if (sweep.realization >= realizations) bad("[sweep] realization out of range");
  std::set<std::string> names;
  for (const auto& m : methods) {
    const std::string where = "[method " + m.name + "] ";
    if (!names.insert(m.name).second) bad("duplicate method '" + m.name + "'");
    try {
      m.recon.validate(geometry);
    } catch (const Error& e) {
      bad(where + e.what());
    }
    if (m.fppg()) {
      if (m.gated_bins) bad(where + "gated_bins applies to OSEM only");
      if (m.sweep_lambdas.empty() && m.recon.lambda_ref < 0.0) bad(where + "lambda must be >= 0");
      for (double l : m.sweep_lambdas)
        if (!(l > 0.0)) bad(where + "sweep_lambdas must be > 0");
      const bool patched =
          m.recon.algorithm == Algorithm::FppgDctPatch || m.recon.algorithm == Algorithm::FppgTnnPatch;
      if (patched) {
        const auto& p = m.recon.patch.patch;
        if (p.rows > phantom.side || p.cols > phantom.side || p.frames > phantom.frames)
          bad(where + "patch larger than the image");
      }
    } else {
      if (!m.sweep_lambdas.empty()) bad(where + "OSEM has no lambda to sweep");
      if (m.fwhm_step_mm <= 0.0 || m.fwhm_max_mm < 0.0) bad(where + "FWHM sweep needs step > 0 and max >= 0");
      if (m.gated_bins) {
        if (phantom.kind != PhantomKind::CardiacLung) bad(where + "gating needs the cardiac phantom");
        const std::size_t cyc = phantom.frames_per_cardiac_cycle();
        if (cyc % m.gated_bins || phantom.frames % cyc)
          bad(where + "gated_bins must divide the cardiac cycle of " + std::to_string(cyc) + " frames");
      }
    }
  }
  if (lv && phantom.kind != PhantomKind::CardiacLung) bad("[run] lv needs the cardiac phantom");
  if (fit && phantom.kind != PhantomKind::Brain) bad("[run] fit needs the brain phantom");
  for (const auto& n : fit_methods)
    if (!names.count(n)) bad("[run] fit_methods names unknown method '" + n + "'");
}

const MethodConfig& RunConfig::method(const std::string& n) const {
  for (const auto& m : methods)
    if (m.name == n) return m;
  fail(ErrorCode::Config, "unknown method '" + n + "'");
}

std::string sha256_hex(const std::string& text) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr) != 1)
    fail(ErrorCode::Io, "SHA-256 failed");
  std::ostringstream ss;
  for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return ss.str();
}

const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> s{"simulate", "sweep", "recon", "analyze", "fit", "report"};
  return s;
}

// ---- λ sweep ----

SweepResult lambda_sweep(const std::vector<double>& grid, const SweepSettings& s, const SweepEval& eval) {
  require(!grid.empty(), ErrorCode::Config, "empty lambda grid");
  require(s.ratio > 1.0, ErrorCode::Config, "sweep ratio must be > 1");
  SweepResult res;
  std::map<double, SweepPoint> pts;
  auto run = [&](double l) {
    if (pts.count(l) || res.points.size() >= s.max_evals) return;
    const auto [ss, rr] = eval(l);
    SweepPoint p{res.points.size(), l, ss, rr};
    pts[l] = p;
    res.points.push_back(p);
  };
  std::vector<double> g = grid;
  std::sort(g.begin(), g.end());
  for (double l : g) run(l);

  auto best_of = [&]() {
    auto b = pts.begin();
    for (auto it = pts.begin(); it != pts.end(); ++it)
      if (it->second.ssim > b->second.ssim) b = it;
    return b;
  };
  double prev_best = best_of()->second.ssim;
  while (res.points.size() < s.max_evals) {
    const auto b = best_of();
    std::vector<double> cand;
    if (b == pts.begin()) {
      // argmax on the lower edge: step outward
      const double step = pts.size() > 1 ? std::next(pts.begin())->first / b->first : 10.0;
      cand.push_back(b->first / step);
    } else if (std::prev(b)->first * s.ratio < b->first) {
      cand.push_back(std::sqrt(std::prev(b)->first * b->first));
    }
    const auto nx = std::next(b);
    if (nx == pts.end()) {
      const double step = pts.size() > 1 ? b->first / std::prev(b)->first : 10.0;
      cand.push_back(b->first * step);
    } else if (b->first * s.ratio < nx->first) {
      cand.push_back(std::sqrt(b->first * nx->first));
    }
    if (cand.empty()) break;
    for (double l : cand) run(l);
    const double now = best_of()->second.ssim;
    const bool interior = best_of() != pts.begin() && std::next(best_of()) != pts.end();
    if (interior && std::abs(now - prev_best) < s.ssim_tol) break;
    prev_best = now;
  }
  const auto b = best_of();
  res.best_lambda = b->first;
  res.best_ssim = b->second.ssim;
  return res;
}

// ---- stages ----

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string real_dir(std::size_t r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "real_%03zu", r);
  return buf;
}

class Csv {
 public:
  Csv(fs::path path, const std::vector<std::string>& header) : path_(std::move(path)) { row(header); }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }
  void commit() {
    const fs::path tmp = path_.string() + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary);
      if (!f) fail(ErrorCode::Io, "cannot write " + tmp.string());
      f << out_.str();
    }
    fs::rename(tmp, path_);
  }

 private:
  fs::path path_;
  std::ostringstream out_;
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    fail(ErrorCode::Io, "CSV column '" + name + "' missing");
  }
};

Table read_csv(const fs::path& p, const std::string& producer) {
  std::ifstream f(p, std::ios::binary);
  if (!f) fail(ErrorCode::MissingInput, "missing " + p.string() + " (produced by stage '" + producer + "')");
  Table t;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (first)
      t.header = cells, first = false;
    else
      t.rows.push_back(cells);
  }
  return t;
}

void save(const fs::path& p, const DynTensor& t) {
  const fs::path tmp = p.string() + ".tmp";
  write_dtn(tmp.string(), t);
  fs::rename(tmp, p);
}

DynTensor load(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) fail(ErrorCode::MissingInput, "missing " + p.string() + " (produced by stage '" + producer + "')");
  return read_dtn(p.string());
}

struct Context {
  const RunConfig& cfg;
  std::ostream& log;
  fs::path out;
  std::shared_ptr<const RayMatrix> rays;

  Projector projector() const { return Projector(rays, DynTensor()); }
  fs::path rdir(std::size_t r) const { return out / real_dir(r); }

  SinogramStack data(std::size_t r) const {
    SinogramStack s;
    s.geometry = cfg.geometry;
    s.counts = load(rdir(r) / "counts.dtn", "simulate");
    s.additive = load(rdir(r) / "additive.dtn", "simulate");
    s.atten = load(rdir(r) / "atten.dtn", "simulate");
    return s;
  }
  DynTensor truth(std::size_t r) const { return load(rdir(r) / "truth_counts.dtn", "simulate"); }
};

// Dynamic image from gated bins: frame k shows its bin divided by the
// number of frames that went into the bin.
DynTensor expand_gated(const DynTensor& bins, std::size_t frames, std::size_t cycle) {
  const std::size_t nb = bins.frames();
  const double per_bin = static_cast<double>(frames / nb);
  DynTensor out({bins.rows(), bins.cols(), frames});
  for (std::size_t k = 0; k < frames; ++k) {
    const std::size_t b = (k % cycle) * nb / cycle;
    auto src = bins.frame(b);
    auto dst = out.frame(k);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] / per_bin;
  }
  return out;
}

void stage_simulate(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Phantom ph = generate_phantom(cfg.phantom);
  save(ctx.out / "truth.dtn", ph.activity);
  save(ctx.out / "labels.dtn", ph.labels);
  save(ctx.out / "mu_map.dtn", ph.mu_map);
  if (cfg.phantom.kind == PhantomKind::CardiacLung) save(ctx.out / "lv_masks.dtn", ph.lv_masks);

  const DynTensor atten = attenuation_factors(ph.mu_map, cfg.geometry, cfg.phantom.frames);
  const Projector pa(ctx.rays, atten);
  Csv csv(ctx.out / "simulation.csv", {"realization", "seed", "frame", "duration_s", "scale", "counts"});
  for (std::size_t r = 0; r < cfg.realizations; ++r) {
    NoiseSpec noise = cfg.noise;
    noise.rng_seed = cfg.realization_seed(r);
    const Simulation sim = simulate_sinograms(ph.activity, pa, noise, cfg.phantom.frame_durations);
    fs::create_directories(ctx.rdir(r));
    save(ctx.rdir(r) / "counts.dtn", sim.data.counts);
    save(ctx.rdir(r) / "additive.dtn", sim.data.additive);
    save(ctx.rdir(r) / "atten.dtn", sim.data.atten);
    save(ctx.rdir(r) / "truth_counts.dtn", scale_frames(ph.activity, sim.frame_scale));
    for (std::size_t k = 0; k < sim.frame_scale.size(); ++k)
      csv.row({std::to_string(r), std::to_string(noise.rng_seed), std::to_string(k),
               num(cfg.phantom.frame_durations[k]), num(sim.frame_scale[k]), num(sim.data.counts.frame_sum(k))});
    ctx.log << "simulate: realization " << r << " seed " << noise.rng_seed << " total counts "
            << sim.data.counts.sum() << "\n";
  }
  csv.commit();
}

double dynamic_range(const DynTensor& truth) { return truth.max(); }

std::map<std::string, double> read_lambdas(const Context& ctx) {
  std::map<std::string, double> out;
  bool need = false;
  for (const auto& m : ctx.cfg.methods) need = need || !m.sweep_lambdas.empty();
  if (!need) return out;
  const Table t = read_csv(ctx.out / "lambdas.csv", "sweep");
  const auto cm = t.col("method"), cl = t.col("lambda");
  for (const auto& row : t.rows) out[row[cm]] = std::stod(row[cl]);
  return out;
}

void stage_sweep(Context& ctx) {
  const auto& cfg = ctx.cfg;
  Csv chosen(ctx.out / "lambdas.csv", {"method", "lambda", "ssim", "evaluations"});
  bool any = false;
  for (const auto& m : cfg.methods) {
    if (m.sweep_lambdas.empty()) continue;
    any = true;
    const std::size_t r = cfg.sweep.realization;
    const SinogramStack data = ctx.data(r);
    const DynTensor truth = ctx.truth(r);
    const double L = dynamic_range(truth);
    const Projector p = ctx.projector();
    auto eval = [&](double lambda) {
      ReconConfig rc = m.recon;
      rc.lambda_ref = lambda;
      if (m.sweep_iterations) rc.iterations = m.sweep_iterations;
      const ReconResult res = reconstruct(p, data, rc);
      const double s = ssim(res.image, truth, L), e = rrmse(res.image, truth);
      ctx.log << "sweep: " << m.name << " lambda " << num(lambda) << " ssim " << num(s) << " rrmse " << num(e) << "\n";
      return std::make_pair(s, e);
    };
    const SweepResult sr = lambda_sweep(m.sweep_lambdas, cfg.sweep, eval);
    Csv csv(ctx.out / ("sweep_" + m.name + ".csv"), {"order", "lambda", "ssim", "rrmse"});
    for (const auto& pt : sr.points)
      csv.row({std::to_string(pt.order), num(pt.lambda), num(pt.ssim), num(pt.rrmse)});
    csv.commit();
    chosen.row({m.name, num(sr.best_lambda), num(sr.best_ssim), std::to_string(sr.points.size())});
    ctx.log << "sweep: " << m.name << " chose lambda " << num(sr.best_lambda) << "\n";
  }
  if (any) chosen.commit();
}

void write_trace(const fs::path& p, const std::vector<TraceRow>& trace) {
  Csv csv(p, {"iteration", "fidelity", "penalty", "objective", "rel_change", "dual_residual"});
  for (const auto& t : trace)
    csv.row({std::to_string(t.iteration), num(t.fidelity), num(t.penalty), num(t.objective), num(t.rel_change),
             num(t.dual_residual)});
  csv.commit();
}

void stage_recon(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto lambdas = read_lambdas(ctx);
  const Projector p = ctx.projector();
  fs::create_directories(ctx.out / "traces");
  Csv sel(ctx.out / "osem_selection.csv", {"realization", "method", "iteration", "fwhm_mm", "ssim"});
  Csv used(ctx.out / "recon_settings.csv", {"realization", "method", "algorithm", "lambda", "iterations", "mu"});
  for (std::size_t r = 0; r < cfg.realizations; ++r) {
    const SinogramStack data = ctx.data(r);
    const DynTensor truth = ctx.truth(r);
    const double L = dynamic_range(truth);
    for (const auto& m : cfg.methods) {
      ReconConfig rc = m.recon;
      DynTensor image;
      std::vector<TraceRow> trace;
      double mu = 0.0;
      std::size_t iters = rc.iterations;
      if (m.fppg()) {
        if (!m.sweep_lambdas.empty()) {
          auto it = lambdas.find(m.name);
          if (it == lambdas.end())
            fail(ErrorCode::MissingInput, "no swept lambda for '" + m.name + "' (produced by stage 'sweep')");
          rc.lambda_ref = it->second;
        }
        ReconResult res = reconstruct(p, data, rc);
        image = std::move(res.image);
        trace = std::move(res.trace);
        mu = res.mu;
        iters = res.iterations_run;
      } else {
        const std::size_t cycle = cfg.phantom.frames_per_cardiac_cycle();
        const SinogramStack input = m.gated_bins ? gated_rebin(data, m.gated_bins, cycle) : data;
        auto as_dynamic = [&](const DynTensor& f) {
          return m.gated_bins ? expand_gated(f, truth.frames(), cycle) : f;
        };
        const double pix = cfg.geometry.pixel_mm();
        if (m.select_by_ssim) {
          rc.postfilter_fwhm_mm = 0.0;
          double best = -2.0, best_fwhm = 0.0;
          std::size_t best_it = 0;
          const std::size_t steps = static_cast<std::size_t>(std::floor(m.fwhm_max_mm / m.fwhm_step_mm + 1e-9));
          auto hook = [&](std::size_t it, const DynTensor& f) {
            const DynTensor dyn = as_dynamic(f);
            for (std::size_t s = 0; s <= steps; ++s) {
              const double fw = static_cast<double>(s) * m.fwhm_step_mm;
              DynTensor filt = gaussian_postfilter(dyn, fw, pix);
              const double v = ssim(filt, truth, L);
              if (v > best) {
                best = v, best_fwhm = fw, best_it = it;
                image = std::move(filt);
              }
            }
          };
          ReconResult res = reconstruct(p, input, rc, hook);
          trace = std::move(res.trace);
          iters = best_it;
          sel.row({std::to_string(r), m.name, std::to_string(best_it), num(best_fwhm), num(best)});
        } else {
          ReconResult res = reconstruct(p, input, rc);
          image = as_dynamic(res.image);
          trace = std::move(res.trace);
        }
      }
      save(ctx.rdir(r) / ("recon_" + m.name + ".dtn"), image);
      write_trace(ctx.out / "traces" / (m.name + "_" + real_dir(r) + ".csv"), trace);
      used.row({std::to_string(r), m.name, to_string(rc.algorithm), num(rc.lambda_ref), std::to_string(iters),
                num(mu)});
      ctx.log << "recon: " << real_dir(r) << " " << m.name << " ssim " << num(ssim(image, truth, L)) << " rrmse "
              << num(rrmse(image, truth)) << "\n";
    }
  }
  sel.commit();
  used.commit();
}

void stage_analyze(Context& ctx) {
  const auto& cfg = ctx.cfg;
  Csv metrics(ctx.out / "metrics.csv", {"realization", "method", "rrmse", "ssim"});
  Csv frames(ctx.out / "metrics_frames.csv", {"realization", "method", "frame", "rrmse", "ssim"});
  Csv lv(ctx.out / "lv.csv", {"realization", "method", "threshold", "area_fraction", "misclassified"});
  Csv curves(ctx.out / "lv_curves.csv", {"realization", "method", "frame", "volume", "true_volume"});
  DynTensor masks;
  Seed seed{0, 0};
  if (cfg.lv) {
    masks = load(ctx.out / "lv_masks.dtn", "simulate");
    seed = gen_cardiac_lung(cfg.phantom).lv_seed;
  }
  for (std::size_t r = 0; r < cfg.realizations; ++r) {
    const DynTensor truth = ctx.truth(r);
    const double L = dynamic_range(truth);
    for (const auto& m : cfg.methods) {
      const DynTensor img = load(ctx.rdir(r) / ("recon_" + m.name + ".dtn"), "recon");
      const MetricReport rep = evaluate_metrics(img, truth, L, static_cast<int>(r));
      metrics.row({std::to_string(r), m.name, num(rep.rrmse), num(rep.ssim)});
      for (std::size_t k = 0; k < rep.ssim_frames.size(); ++k)
        frames.row({std::to_string(r), m.name, std::to_string(k), num(rep.rrmse_frames[k]), num(rep.ssim_frames[k])});
      if (cfg.lv) {
        const LvResult res = region_grow_lv(img, seed, masks);
        lv.row({std::to_string(r), m.name, std::to_string(res.threshold_used), num(res.mean_area_fraction),
                std::to_string(res.misclassified)});
        for (std::size_t k = 0; k < res.volume_curve.size(); ++k)
          curves.row({std::to_string(r), m.name, std::to_string(k), num(res.volume_curve[k]),
                      num(masks.frame_sum(k))});
        ctx.log << "analyze: " << real_dir(r) << " " << m.name << " LV area fraction " << num(res.mean_area_fraction)
                << " (threshold " << res.threshold_used << ")\n";
      }
    }
  }
  metrics.commit();
  frames.commit();
  if (cfg.lv) {
    lv.commit();
    curves.commit();
  }
}

std::vector<double> read_scales(const Context& ctx, std::size_t r, std::size_t frames) {
  const Table t = read_csv(ctx.out / "simulation.csv", "simulate");
  const auto cr = t.col("realization"), cf = t.col("frame"), cs = t.col("scale");
  std::vector<double> s(frames, 0.0);
  for (const auto& row : t.rows)
    if (std::stoul(row[cr]) == r) s.at(std::stoul(row[cf])) = std::stod(row[cs]);
  return s;
}

void stage_fit(Context& ctx) {
  const auto& cfg = ctx.cfg;
  if (!cfg.fit) return;
  const Phantom ph = gen_brain(cfg.phantom);
  const std::size_t m = cfg.phantom.side;
  DynTensor mask({m, m, 1});
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = ph.labels[i] > 0 ? 1.0 : 0.0;

  // true parameter maps
  for (std::size_t p = 0; p < kParamNames.size(); ++p) {
    DynTensor t({m, m, 1});
    for (std::size_t i = 0; i < t.size(); ++i) {
      const int lab = static_cast<int>(ph.labels[i]);
      if (lab <= 0) continue;
      const auto& kp = ph.region_params[lab];
      const std::array<double, 6> v{kp.K1, kp.k2, kp.k3, kp.k4, kp.Va, ki(kp)};
      t[i] = v[p];
    }
    save(ctx.out / ("maps_true_" + std::string(kParamNames[p]) + ".dtn"), t);
  }

  std::vector<std::string> names = cfg.fit_methods;
  if (names.empty())
    for (const auto& mc : cfg.methods) names.push_back(mc.name);

  Csv bias(ctx.out / "bias.csv", {"realization", "method", "region", "param", "true", "estimate", "rel_bias"});
  Csv fails(ctx.out / "fit_failures.csv", {"realization", "method", "failed", "fitted"});
  const std::size_t fitted = static_cast<std::size_t>(mask.sum());
  for (std::size_t r = 0; r < cfg.realizations; ++r) {
    const auto scale = read_scales(ctx, r, cfg.phantom.frames);
    for (const auto& name : names) {
      DynTensor img = load(ctx.rdir(r) / ("recon_" + name + ".dtn"), "recon");
      for (std::size_t k = 0; k < img.frames(); ++k)
        for (double& x : img.frame(k)) x = scale[k] > 0.0 ? x / scale[k] : 0.0;
      const ParametricMaps maps =
          parametric_images(img, cfg.phantom.input, ph.schedule, mask, {0.1, 0.1, 0.1, 0.1, 0.1}, cfg.fit_options);
      for (const char* pn : kParamNames)
        save(ctx.rdir(r) / ("maps_" + name + "_" + pn + ".dtn"), maps.by_name(pn));
      save(ctx.rdir(r) / ("maps_" + name + "_failures.dtn"), maps.failures);
      fails.row({std::to_string(r), name, std::to_string(maps.failed), std::to_string(fitted)});

      for (std::size_t lab = 1; lab < ph.region_params.size(); ++lab) {
        const auto& kp = ph.region_params[lab];
        const std::array<double, 6> truth{kp.K1, kp.k2, kp.k3, kp.k4, kp.Va, ki(kp)};
        for (std::size_t p = 0; p < kParamNames.size(); ++p) {
          const DynTensor& mp = maps.by_name(kParamNames[p]);
          double s = 0.0;
          std::size_t n = 0;
          for (std::size_t i = 0; i < mp.size(); ++i)
            if (static_cast<std::size_t>(ph.labels[i]) == lab) s += mp[i], ++n;
          if (n == 0) continue;
          const double est = s / static_cast<double>(n);
          const double rel = truth[p] != 0.0 ? (est - truth[p]) / truth[p] : std::nan("");
          bias.row({std::to_string(r), name, ph.region_names[lab], kParamNames[p], num(truth[p]), num(est), num(rel)});
        }
      }
      ctx.log << "fit: " << real_dir(r) << " " << name << " failed voxels " << maps.failed << "/" << fitted << "\n";
    }
  }
  bias.commit();
  fails.commit();
}

void summary_rows(Csv& csv, const std::string& method, const std::string& metric, const std::vector<double>& v) {
  if (v.size() >= 2) {
    const Summary s = aggregate(v);
    csv.row({method, metric, std::to_string(s.n), num(s.mean), num(s.se), num(s.ci_low), num(s.ci_high)});
  } else {
    double mean = 0.0;
    for (double x : v) mean += x;
    if (!v.empty()) mean /= static_cast<double>(v.size());
    csv.row({method, metric, std::to_string(v.size()), num(mean), "", "", ""});
  }
}

void stage_report(Context& ctx) {
  const auto& cfg = ctx.cfg;
  // metric → method → per-realization values
  std::map<std::string, std::map<std::string, std::vector<double>>> vals;
  const Table mt = read_csv(ctx.out / "metrics.csv", "analyze");
  for (const auto& row : mt.rows) {
    vals["ssim"][row[mt.col("method")]].push_back(std::stod(row[mt.col("ssim")]));
    vals["rrmse"][row[mt.col("method")]].push_back(std::stod(row[mt.col("rrmse")]));
  }
  if (cfg.lv) {
    const Table lt = read_csv(ctx.out / "lv.csv", "analyze");
    for (const auto& row : lt.rows)
      vals["lv_area_fraction"][row[lt.col("method")]].push_back(std::stod(row[lt.col("area_fraction")]));
  }
  if (cfg.fit) {
    // per realization: mean over regions of |relative bias|
    const Table bt = read_csv(ctx.out / "bias.csv", "fit");
    std::map<std::string, std::map<std::string, std::map<std::string, std::pair<double, int>>>> acc;
    for (const auto& row : bt.rows) {
      const std::string rel = row[bt.col("rel_bias")];
      if (rel.empty()) continue;
      auto& a = acc[row[bt.col("param")]][row[bt.col("method")]][row[bt.col("realization")]];
      a.first += std::abs(std::stod(rel));
      a.second += 1;
    }
    for (const auto& [param, by_method] : acc)
      for (const auto& [method, by_r] : by_method)
        for (const auto& [r, a] : by_r) vals["abs_bias_" + param][method].push_back(a.first / a.second);
  }

  Csv summary(ctx.out / "summary.csv", {"method", "metric", "n", "mean", "se", "ci_low", "ci_high"});
  Csv paired(ctx.out / "paired.csv", {"metric", "method_a", "method_b", "n", "mean_diff", "se", "ci_low", "ci_high"});
  for (const auto& [metric, by_method] : vals) {
    for (const auto& m : cfg.methods) {
      auto it = by_method.find(m.name);
      if (it != by_method.end()) summary_rows(summary, m.name, metric, it->second);
    }
    for (std::size_t a = 0; a < cfg.methods.size(); ++a)
      for (std::size_t b = a + 1; b < cfg.methods.size(); ++b) {
        auto ia = by_method.find(cfg.methods[a].name), ib = by_method.find(cfg.methods[b].name);
        if (ia == by_method.end() || ib == by_method.end() || ia->second.size() != ib->second.size() ||
            ia->second.size() < 2)
          continue;
        const Summary s = paired_difference(ia->second, ib->second);
        paired.row({metric, cfg.methods[a].name, cfg.methods[b].name, std::to_string(s.n), num(s.mean), num(s.se),
                    num(s.ci_low), num(s.ci_high)});
      }
  }
  summary.commit();
  paired.commit();

  ctx.log << "report:\n";
  for (const auto& [metric, by_method] : vals)
    for (const auto& m : cfg.methods) {
      auto it = by_method.find(m.name);
      if (it == by_method.end()) continue;
      double mean = 0.0;
      for (double x : it->second) mean += x;
      mean /= static_cast<double>(it->second.size());
      ctx.log << "  " << std::left << std::setw(20) << metric << std::setw(16) << m.name << num(mean) << "\n";
    }
}

void write_manifest(const Context& ctx, const std::string& stage) {
  const auto& cfg = ctx.cfg;
  const fs::path p = ctx.out / "manifest.json";
  nlohmann::json j = nlohmann::json::object();
  if (fs::exists(p)) {
    std::ifstream f(p);
    try {
      j = nlohmann::json::parse(f);
    } catch (const std::exception&) {
      j = nlohmann::json::object();
    }
  }
  const std::string hash = sha256_hex(cfg.text);
  if (!j.is_object() || j.value("config_sha256", hash) != hash) j = nlohmann::json::object();  // stale artifacts from another config
  j["name"] = cfg.name;
  j["version"] = FPPG_VERSION;
  j["config_sha256"] = hash;
  j["config_source"] = cfg.source;
  j["base_seed"] = cfg.seed;
  std::vector<std::uint64_t> seeds;
  for (std::size_t r = 0; r < cfg.realizations; ++r) seeds.push_back(cfg.realization_seed(r));
  j["realization_seeds"] = seeds;
  j["threads"] = cfg.threads;
  std::set<std::string> done;
  if (j.contains("stages"))
    for (const auto& s : j["stages"]) done.insert(s.get<std::string>());
  done.insert(stage);
  std::vector<std::string> ordered;
  for (const auto& s : pipeline_stages())
    if (done.count(s)) ordered.push_back(s);
  j["stages"] = ordered;
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(ctx.out))
    if (e.is_regular_file() && e.path().filename() != "manifest.json")
      files.push_back(fs::relative(e.path(), ctx.out).generic_string());
  std::sort(files.begin(), files.end());
  j["files"] = files;
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    f << j.dump(2) << "\n";
  }
  fs::rename(tmp, p);
}

}  // namespace

void run_pipeline(const RunConfig& cfg, const std::string& stage, std::ostream& log) {
  cfg.validate();
  const auto& all = pipeline_stages();
  std::vector<std::string> todo;
  if (stage == "all")
    todo = all;
  else if (std::find(all.begin(), all.end(), stage) != all.end())
    todo = {stage};
  else
    fail(ErrorCode::Config, "unknown stage '" + stage + "'");

  set_num_threads(cfg.threads);
  fs::create_directories(cfg.out_dir);
  Context ctx{cfg, log, fs::path(cfg.out_dir), std::make_shared<const RayMatrix>(cfg.geometry)};
  for (const auto& s : todo) {
    const auto t0 = std::chrono::steady_clock::now();
    if (s == "simulate")
      stage_simulate(ctx);
    else if (s == "sweep")
      stage_sweep(ctx);
    else if (s == "recon")
      stage_recon(ctx);
    else if (s == "analyze")
      stage_analyze(ctx);
    else if (s == "fit")
      stage_fit(ctx);
    else if (s == "report")
      stage_report(ctx);
    write_manifest(ctx, s);
    log << "stage " << s << " done in " << std::fixed << std::setprecision(1)
        << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n"
        << std::defaultfloat;
  }
}

}  // namespace fppg
