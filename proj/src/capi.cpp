#include "fppg/fppg.h"

#include <cstring>
#include <exception>
#include <new>
#include <sstream>
#include <string>

#include "analysis.hpp"
#include "pipeline.hpp"
#include "recon.hpp"

struct fppg_tensor {
  fppg::DynTensor t;
};

struct fppg_projector {
  fppg::Projector p;
};

struct fppg_run {
  fppg::RunConfig cfg;
};

namespace {

thread_local std::string g_last_error;

fppg_status from_code(fppg::ErrorCode c) { return static_cast<fppg_status>(static_cast<int>(c) + 1); }

template <class F>
fppg_status guard(F&& body) {
  try {
    body();
    g_last_error.clear();
    return FPPG_OK;
  } catch (const fppg::Error& e) {
    g_last_error = e.what();
    return from_code(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return FPPG_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return FPPG_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown exception";
    return FPPG_ERR_INTERNAL;
  }
}

#define FPPG_NONNULL(ptr)                                   \
  do {                                                      \
    if (!(ptr)) {                                           \
      g_last_error = "null pointer argument: " #ptr;        \
      return FPPG_ERR_NULL_POINTER;                         \
    }                                                       \
  } while (0)

}  // namespace

extern "C" {

const char* fppg_version(void) { return FPPG_VERSION; }

const char* fppg_status_name(fppg_status status) {
  if (status == FPPG_OK) return "Ok";
  if (status == FPPG_ERR_NULL_POINTER) return "NullPointer";
  if (status == FPPG_ERR_INTERNAL) return "Internal";
  const int c = static_cast<int>(status) - 1;
  if (c >= 0 && c <= static_cast<int>(fppg::ErrorCode::MissingInput))
    return fppg::to_string(static_cast<fppg::ErrorCode>(c));
  return "Unknown";
}

const char* fppg_last_error(void) { return g_last_error.c_str(); }

int fppg_status_is_input_error(fppg_status s) {
  switch (s) {
    case FPPG_ERR_CONFIG:
    case FPPG_ERR_BAD_SPEC:
    case FPPG_ERR_BAD_FRACTIONS:
    case FPPG_ERR_BAD_SCHEDULE:
    case FPPG_ERR_BAD_BINNING:
    case FPPG_ERR_MISSING_INPUT:
    case FPPG_ERR_IO:
    case FPPG_ERR_INVALID_ARGUMENT:
    case FPPG_ERR_NULL_POINTER:
      return 1;
    default:
      return 0;
  }
}

fppg_status fppg_tensor_create(size_t rows, size_t cols, size_t frames, const double* data, fppg_tensor** out) {
  FPPG_NONNULL(out);
  *out = nullptr;
  return guard([&] {
    fppg::require(rows > 0 && cols > 0 && frames > 0, fppg::ErrorCode::InvalidArgument, "tensor dims must be positive");
    auto t = std::make_unique<fppg_tensor>();
    t->t = fppg::DynTensor({rows, cols, frames});
    if (data) std::memcpy(t->t.data(), data, t->t.size() * sizeof(double));
    *out = t.release();
  });
}

fppg_status fppg_tensor_read(const char* path, fppg_tensor** out) {
  FPPG_NONNULL(path);
  FPPG_NONNULL(out);
  *out = nullptr;
  return guard([&] { *out = new fppg_tensor{fppg::read_dtn(path)}; });
}

fppg_status fppg_tensor_write(const fppg_tensor* t, const char* path) {
  FPPG_NONNULL(t);
  FPPG_NONNULL(path);
  return guard([&] { fppg::write_dtn(path, t->t); });
}

void fppg_tensor_free(fppg_tensor* t) { delete t; }

fppg_status fppg_tensor_dims(const fppg_tensor* t, size_t* rows, size_t* cols, size_t* frames) {
  FPPG_NONNULL(t);
  if (rows) *rows = t->t.rows();
  if (cols) *cols = t->t.cols();
  if (frames) *frames = t->t.frames();
  return FPPG_OK;
}

double* fppg_tensor_data(fppg_tensor* t) { return t ? t->t.data() : nullptr; }

fppg_status fppg_projector_create(size_t image_side, size_t n_radial, size_t n_angles, double fov_mm,
                                  const fppg_tensor* atten, fppg_projector** out) {
  FPPG_NONNULL(out);
  *out = nullptr;
  return guard([&] {
    fppg::Geometry g = (n_radial == 0 || n_angles == 0) ? fppg::Geometry::desk(image_side, fov_mm)
                                                        : fppg::Geometry::uniform(image_side, n_radial, n_angles, fov_mm);
    g.validate();
    auto rays = std::make_shared<const fppg::RayMatrix>(g);
    *out = new fppg_projector{fppg::Projector(rays, atten ? atten->t : fppg::DynTensor())};
  });
}

void fppg_projector_free(fppg_projector* p) { delete p; }

fppg_status fppg_projector_geometry(const fppg_projector* p, size_t* n_radial, size_t* n_angles) {
  FPPG_NONNULL(p);
  if (n_radial) *n_radial = p->p.geometry().n_radial;
  if (n_angles) *n_angles = p->p.geometry().n_angles;
  return FPPG_OK;
}

fppg_status fppg_forward(const fppg_projector* p, const fppg_tensor* image, fppg_tensor** out) {
  FPPG_NONNULL(p);
  FPPG_NONNULL(image);
  FPPG_NONNULL(out);
  *out = nullptr;
  return guard([&] { *out = new fppg_tensor{p->p.forward(image->t)}; });
}

fppg_status fppg_backward(const fppg_projector* p, const fppg_tensor* sino, fppg_tensor** out) {
  FPPG_NONNULL(p);
  FPPG_NONNULL(sino);
  FPPG_NONNULL(out);
  *out = nullptr;
  return guard([&] { *out = new fppg_tensor{p->p.backward(sino->t)}; });
}

void fppg_recon_options_default(fppg_recon_options* o) {
  if (!o) return;
  const fppg::ReconConfig d;
  o->algorithm = "fppg_dct";
  o->lambda = d.lambda_ref;
  o->beta = d.beta;
  o->iterations = d.iterations;
  o->subsets = d.subsets;
  o->patch[0] = d.patch.patch.rows, o->patch[1] = d.patch.patch.cols, o->patch[2] = d.patch.patch.frames;
  o->span[0] = d.patch.span.rows, o->span[1] = d.patch.span.cols, o->span[2] = d.patch.span.frames;
  o->rotation = d.rotation ? 1 : 0;
  o->postfilter_fwhm_mm = d.postfilter_fwhm_mm;
}

fppg_status fppg_reconstruct(const fppg_projector* p, const fppg_tensor* counts, const fppg_tensor* additive,
                             const fppg_tensor* atten, const fppg_recon_options* o, fppg_tensor** out) {
  FPPG_NONNULL(p);
  FPPG_NONNULL(counts);
  FPPG_NONNULL(o);
  FPPG_NONNULL(o->algorithm);
  FPPG_NONNULL(out);
  *out = nullptr;
  return guard([&] {
    fppg::ReconConfig cfg;
    cfg.algorithm = fppg::parse_algorithm(o->algorithm);
    cfg.lambda_ref = o->lambda;
    cfg.beta = o->beta;
    cfg.iterations = o->iterations;
    cfg.subsets = o->subsets;
    cfg.patch.patch = {o->patch[0], o->patch[1], o->patch[2]};
    cfg.patch.span = {o->span[0], o->span[1], o->span[2]};
    cfg.rotation = o->rotation != 0;
    cfg.postfilter_fwhm_mm = o->postfilter_fwhm_mm;
    fppg::SinogramStack data;
    data.geometry = p->p.geometry();
    data.counts = counts->t;
    data.additive = additive ? additive->t : fppg::DynTensor(counts->t.dims());
    data.atten = atten ? atten->t : p->p.attenuation();
    const fppg::Projector proj = p->p.with_attenuation(data.atten);
    *out = new fppg_tensor{fppg::reconstruct(proj, data, cfg).image};
  });
}

fppg_status fppg_ssim(const fppg_tensor* recon, const fppg_tensor* truth, double dynamic_range, double* out) {
  FPPG_NONNULL(recon);
  FPPG_NONNULL(truth);
  FPPG_NONNULL(out);
  return guard([&] { *out = fppg::ssim(recon->t, truth->t, dynamic_range); });
}

fppg_status fppg_rrmse(const fppg_tensor* recon, const fppg_tensor* truth, double* out) {
  FPPG_NONNULL(recon);
  FPPG_NONNULL(truth);
  FPPG_NONNULL(out);
  return guard([&] { *out = fppg::rrmse(recon->t, truth->t); });
}

fppg_status fppg_run_load(const char* config_path, fppg_run** out) {
  FPPG_NONNULL(config_path);
  FPPG_NONNULL(out);
  *out = nullptr;
  return guard([&] { *out = new fppg_run{fppg::RunConfig::load(config_path)}; });
}

fppg_status fppg_run_parse(const char* text, const char* source, fppg_run** out) {
  FPPG_NONNULL(text);
  FPPG_NONNULL(out);
  *out = nullptr;
  return guard([&] { *out = new fppg_run{fppg::RunConfig::parse(text, source ? source : "<config>")}; });
}

void fppg_run_free(fppg_run* run) { delete run; }

fppg_status fppg_run_set_realizations(fppg_run* run, size_t n) {
  FPPG_NONNULL(run);
  return guard([&] {
    fppg::RunConfig c = run->cfg;
    c.realizations = n;
    c.validate();
    run->cfg = std::move(c);
  });
}

fppg_status fppg_run_set_seed(fppg_run* run, uint64_t seed) {
  FPPG_NONNULL(run);
  run->cfg.seed = seed;
  return FPPG_OK;
}

fppg_status fppg_run_set_out(fppg_run* run, const char* dir) {
  FPPG_NONNULL(run);
  FPPG_NONNULL(dir);
  run->cfg.out_dir = dir;
  return FPPG_OK;
}

fppg_status fppg_run_set_threads(fppg_run* run, int threads) {
  FPPG_NONNULL(run);
  return guard([&] {
    fppg::require(threads >= 1, fppg::ErrorCode::Config, "threads must be >= 1");
    run->cfg.threads = threads;
  });
}

fppg_status fppg_run_config_hash(const fppg_run* run, char out[65]) {
  FPPG_NONNULL(run);
  FPPG_NONNULL(out);
  return guard([&] {
    const std::string h = fppg::sha256_hex(run->cfg.text);
    std::memcpy(out, h.c_str(), 65);
  });
}

namespace {

// Forwards complete lines to the callback.
class CallbackBuf : public std::stringbuf {
 public:
  CallbackBuf(fppg_log_fn fn, void* user) : fn_(fn), user_(user) {}
  int sync() override {
    const std::string s = str();
    const auto nl = s.rfind('\n');
    if (nl == std::string::npos) return 0;
    if (fn_) fn_(s.substr(0, nl + 1).c_str(), user_);
    str(s.substr(nl + 1));
    return 0;
  }
  void finish() {
    if (fn_ && !str().empty()) fn_(str().c_str(), user_);
    str("");
  }

 private:
  fppg_log_fn fn_;
  void* user_;
};

}  // namespace

fppg_status fppg_run_execute(fppg_run* run, const char* stage, fppg_log_fn log, void* user) {
  FPPG_NONNULL(run);
  FPPG_NONNULL(stage);
  CallbackBuf buf(log, user);
  std::ostream os(&buf);
  os << std::unitbuf;
  const fppg_status s = guard([&] { fppg::run_pipeline(run->cfg, stage, os); });
  os.flush();
  buf.finish();
  return s;
}

}  // extern "C"
