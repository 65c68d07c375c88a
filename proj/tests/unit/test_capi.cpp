#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fppg/fppg.h"

namespace fs = std::filesystem;

namespace {

struct TensorDel {
  void operator()(fppg_tensor* t) const { fppg_tensor_free(t); }
};
struct ProjDel {
  void operator()(fppg_projector* p) const { fppg_projector_free(p); }
};
struct RunDel {
  void operator()(fppg_run* r) const { fppg_run_free(r); }
};
using Tensor = std::unique_ptr<fppg_tensor, TensorDel>;
using Proj = std::unique_ptr<fppg_projector, ProjDel>;
using RunHandle = std::unique_ptr<fppg_run, RunDel>;

Tensor make(size_t m, size_t n, size_t k, unsigned seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(m * n * k);
  for (double& x : v) x = u(rng);
  fppg_tensor* t = nullptr;
  EXPECT_EQ(fppg_tensor_create(m, n, k, v.data(), &t), FPPG_OK);
  return Tensor(t);
}

size_t count(fppg_tensor* t) {
  size_t m = 0, n = 0, k = 0;
  fppg_tensor_dims(t, &m, &n, &k);
  return m * n * k;
}

double dot(fppg_tensor* a, fppg_tensor* b) {
  double s = 0.0;
  const double *x = fppg_tensor_data(a), *y = fppg_tensor_data(b);
  for (size_t i = 0; i < count(a); ++i) s += x[i] * y[i];
  return s;
}

const char* kConfig =
    "[run]\nname = capi\nrealizations = 1\nseed = 3\nout = /tmp/unused\n\n"
    "[phantom]\nkind = cardiac\nside = 16\nframes = 4\nframe_seconds = 0.1\ncardiac_period_s = 0.2\n"
    "breathing_period_s = 0.4\n\n"
    "[method osem]\nalgorithm = osem\niterations = 3\nsubsets = 3\n";

}  // namespace

TEST(Capi, VersionAndStatusNames) {
  EXPECT_STRNE(fppg_version(), "");
  EXPECT_STREQ(fppg_status_name(FPPG_OK), "Ok");
  EXPECT_STREQ(fppg_status_name(FPPG_ERR_DIM_MISMATCH), "DimMismatch");
  EXPECT_STREQ(fppg_status_name(FPPG_ERR_MISSING_INPUT), "MissingInput");
  EXPECT_STREQ(fppg_status_name(FPPG_ERR_NULL_POINTER), "NullPointer");
  EXPECT_TRUE(fppg_status_is_input_error(FPPG_ERR_CONFIG));
  EXPECT_FALSE(fppg_status_is_input_error(FPPG_ERR_NON_FINITE));
}

TEST(Capi, TensorLifecycleAndIo) {
  const Tensor t = make(3, 4, 2, 1);
  size_t m = 0, n = 0, k = 0;
  ASSERT_EQ(fppg_tensor_dims(t.get(), &m, &n, &k), FPPG_OK);
  EXPECT_EQ(m, 3u);
  EXPECT_EQ(n, 4u);
  EXPECT_EQ(k, 2u);
  fppg_tensor* zero = nullptr;
  ASSERT_EQ(fppg_tensor_create(2, 2, 1, nullptr, &zero), FPPG_OK);
  const Tensor z(zero);
  for (size_t i = 0; i < 4; ++i) EXPECT_EQ(fppg_tensor_data(z.get())[i], 0.0);

  const std::string path = (fs::temp_directory_path() / "fppg_capi_t.dtn").string();
  ASSERT_EQ(fppg_tensor_write(t.get(), path.c_str()), FPPG_OK);
  fppg_tensor* back = nullptr;
  ASSERT_EQ(fppg_tensor_read(path.c_str(), &back), FPPG_OK);
  const Tensor b(back);
  for (size_t i = 0; i < 24; ++i) EXPECT_EQ(fppg_tensor_data(b.get())[i], fppg_tensor_data(t.get())[i]);
  std::remove(path.c_str());

  fppg_tensor* none = nullptr;
  EXPECT_EQ(fppg_tensor_read("/nonexistent/x.dtn", &none), FPPG_ERR_MISSING_INPUT);
  EXPECT_EQ(none, nullptr);
  EXPECT_STRNE(fppg_last_error(), "");
  EXPECT_EQ(fppg_tensor_create(0, 2, 1, nullptr, &none), FPPG_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(fppg_tensor_create(2, 2, 1, nullptr, nullptr), FPPG_ERR_NULL_POINTER);
  EXPECT_EQ(fppg_tensor_data(nullptr), nullptr);
  fppg_tensor_free(nullptr);
}

TEST(Capi, ProjectorAdjoint) {
  fppg_projector* raw = nullptr;
  ASSERT_EQ(fppg_projector_create(16, 0, 0, 100.0, nullptr, &raw), FPPG_OK);
  const Proj p(raw);
  size_t nr = 0, na = 0;
  ASSERT_EQ(fppg_projector_geometry(p.get(), &nr, &na), FPPG_OK);
  EXPECT_EQ(nr, 24u);
  EXPECT_EQ(na, 18u);
  const Tensor f = make(16, 16, 2, 2), y = make(nr, na, 2, 3);
  fppg_tensor *af = nullptr, *aty = nullptr;
  ASSERT_EQ(fppg_forward(p.get(), f.get(), &af), FPPG_OK);
  ASSERT_EQ(fppg_backward(p.get(), y.get(), &aty), FPPG_OK);
  const Tensor A(af), At(aty);
  const double a = dot(A.get(), y.get()), b = dot(f.get(), At.get());
  EXPECT_LT(std::abs(a - b), 1e-8 * std::abs(a));
  fppg_tensor* bad = nullptr;
  const Tensor wrong = make(15, 16, 1, 4);
  EXPECT_EQ(fppg_forward(p.get(), wrong.get(), &bad), FPPG_ERR_DIM_MISMATCH);
  EXPECT_EQ(bad, nullptr);
  EXPECT_EQ(fppg_projector_create(16, 20, 18, 100.0, nullptr, &raw), FPPG_ERR_BAD_SPEC);
}

TEST(Capi, ReconstructAndMetrics) {
  fppg_projector* raw = nullptr;
  ASSERT_EQ(fppg_projector_create(16, 0, 0, 100.0, nullptr, &raw), FPPG_OK);
  const Proj p(raw);
  std::vector<double> img(16 * 16 * 3, 0.0);
  for (size_t k = 0; k < 3; ++k)
    for (size_t j = 0; j < 16; ++j)
      for (size_t i = 0; i < 16; ++i) {
        const double x = j - 7.5, y = i - 7.5;
        img[k * 256 + j * 16 + i] = x * x + y * y < 30.0 ? 20.0 : 2.0;
      }
  fppg_tensor *truth_raw = nullptr, *sino_raw = nullptr;
  ASSERT_EQ(fppg_tensor_create(16, 16, 3, img.data(), &truth_raw), FPPG_OK);
  const Tensor truth(truth_raw);
  ASSERT_EQ(fppg_forward(p.get(), truth.get(), &sino_raw), FPPG_OK);
  const Tensor sino(sino_raw);

  fppg_recon_options o;
  fppg_recon_options_default(&o);
  for (const char* alg : {"osem", "fppg_dct", "fppg_tnn", "fppg_dct_patch", "fppg_tnn_patch"}) {
    o.algorithm = alg;
    o.iterations = 30;
    o.subsets = 6;
    o.lambda = 1e-3;
    o.patch[0] = o.patch[1] = 8;
    o.patch[2] = 3;
    o.span[0] = o.span[1] = 4;
    o.span[2] = 3;
    fppg_tensor* out = nullptr;
    ASSERT_EQ(fppg_reconstruct(p.get(), sino.get(), nullptr, nullptr, &o, &out), FPPG_OK) << alg << fppg_last_error();
    const Tensor r(out);
    double rr = 0.0, ss = 0.0;
    ASSERT_EQ(fppg_rrmse(r.get(), truth.get(), &rr), FPPG_OK);
    ASSERT_EQ(fppg_ssim(r.get(), truth.get(), 20.0, &ss), FPPG_OK);
    EXPECT_LT(rr, 30.0) << alg;
    EXPECT_GT(ss, 0.5) << alg;
    for (size_t i = 0; i < count(r.get()); ++i) EXPECT_GE(fppg_tensor_data(r.get())[i], 0.0);
  }
  o.algorithm = "nope";
  fppg_tensor* out = nullptr;
  EXPECT_EQ(fppg_reconstruct(p.get(), sino.get(), nullptr, nullptr, &o, &out), FPPG_ERR_CONFIG);
  double v = 0.0;
  fppg_tensor* zero_raw = nullptr;
  fppg_tensor_create(16, 16, 3, nullptr, &zero_raw);
  const Tensor zero(zero_raw);
  EXPECT_EQ(fppg_rrmse(truth.get(), zero.get(), &v), FPPG_ERR_ZERO_TRUTH_MEAN);
  EXPECT_EQ(fppg_ssim(truth.get(), truth.get(), 20.0, nullptr), FPPG_ERR_NULL_POINTER);
}

TEST(Capi, RunPipeline) {
  fppg_run* raw = nullptr;
  ASSERT_EQ(fppg_run_parse(kConfig, "capi.ini", &raw), FPPG_OK);
  const RunHandle run(raw);
  const fs::path out = fs::temp_directory_path() / "fppg_capi_run";
  fs::remove_all(out);
  ASSERT_EQ(fppg_run_set_out(run.get(), out.string().c_str()), FPPG_OK);
  ASSERT_EQ(fppg_run_set_threads(run.get(), 1), FPPG_OK);
  char hash[65] = {};
  ASSERT_EQ(fppg_run_config_hash(run.get(), hash), FPPG_OK);
  EXPECT_EQ(std::string(hash).size(), 64u);

  std::string log;
  auto sink = [](const char* text, void* user) { *static_cast<std::string*>(user) += text; };
  EXPECT_EQ(fppg_run_execute(run.get(), "recon", sink, &log), FPPG_ERR_MISSING_INPUT);
  ASSERT_EQ(fppg_run_execute(run.get(), "all", sink, &log), FPPG_OK) << fppg_last_error();
  EXPECT_NE(log.find("stage report done"), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "metrics.csv"));
  EXPECT_EQ(fppg_run_execute(run.get(), "bogus", nullptr, nullptr), FPPG_ERR_CONFIG);
  fs::remove_all(out);

  fppg_run* bad = nullptr;
  EXPECT_EQ(fppg_run_parse("[run\n", "bad.ini", &bad), FPPG_ERR_CONFIG);
  EXPECT_NE(std::string(fppg_last_error()).find("bad.ini:1"), std::string::npos) << fppg_last_error();
  EXPECT_EQ(fppg_run_load("/nonexistent.ini", &bad), FPPG_ERR_CONFIG);
  EXPECT_EQ(fppg_run_set_realizations(run.get(), 0), FPPG_ERR_CONFIG);
  fppg_run_free(nullptr);
}
