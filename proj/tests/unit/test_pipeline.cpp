#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pipeline.hpp"

using namespace fppg;
namespace fs = std::filesystem;

namespace {

std::string minimal_config(const std::string& out, std::size_t realizations = 1, std::uint64_t seed = 7) {
  std::ostringstream s;
  s << "[run]\nname = minimal\nrealizations = " << realizations << "\nseed = " << seed << "\nout = " << out << "\n\n"
    << "[phantom]\nkind = cardiac\nside = 16\nframes = 4\nframe_seconds = 0.1\ncardiac_period_s = 0.2\n"
    << "breathing_period_s = 0.4\n\n"
    << "[method osem]\nalgorithm = osem\niterations = 4\nsubsets = 3\n";
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fppg_test_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void run(const RunConfig& c, const std::string& stage = "all") {
  std::ostringstream log;
  run_pipeline(c, stage, log);
}

std::string config_error(const std::string& text) {
  try {
    RunConfig::parse(text, "cfg.ini").validate();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Config);
    return e.what();
  }
  ADD_FAILURE() << "no error for:\n" << text;
  return {};
}

}  // namespace

TEST(Config, ParsesMinimal) {
  const RunConfig c = RunConfig::parse(minimal_config("/tmp/x"), "m.ini");
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.name, "minimal");
  EXPECT_EQ(c.phantom.side, 16u);
  EXPECT_EQ(c.phantom.frames, 4u);
  ASSERT_EQ(c.methods.size(), 1u);
  EXPECT_EQ(c.methods[0].name, "osem");
  EXPECT_EQ(c.methods[0].recon.algorithm, Algorithm::Osem);
  EXPECT_EQ(c.realization_seed(0), 7u);
  EXPECT_EQ(c.realization_seed(3), 10u);
}

TEST(Config, ErrorsNameTheLine) {
  std::string bad = minimal_config("/tmp/x");
  bad.replace(bad.find("iterations = 4"), 14, "iterations = four");
  const std::string msg = config_error(bad);
  EXPECT_NE(msg.find("cfg.ini:"), std::string::npos) << msg;
  EXPECT_NE(msg.find("iterations"), std::string::npos) << msg;
  std::istringstream in(bad);
  std::string line;
  int n = 0, want = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find("four") != std::string::npos) want = n;
  }
  EXPECT_NE(msg.find("cfg.ini:" + std::to_string(want)), std::string::npos) << msg;
}

TEST(Config, StructuralErrors) {
  config_error("[run\nname = x\n");
  config_error("[run]\njust words\n");
  config_error(minimal_config("/tmp/x") + "bogus_key = 1\n");
  config_error(minimal_config("/tmp/x") + "[method b]\nalgorithm = nope\n");
  std::string no_methods = minimal_config("/tmp/x");
  no_methods.erase(no_methods.find("[method osem]"));
  config_error(no_methods);
  std::string subsets = minimal_config("/tmp/x");
  subsets.replace(subsets.find("subsets = 3"), 11, "subsets = 4");
  config_error(subsets);
}

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(LambdaSweep, RefinesToTenPercentAroundArgmax) {
  // unimodal in log λ with the peak at λ = 2.3
  const double peak = 2.3;
  auto eval = [&](double l) {
    const double d = std::log(l / peak);
    return std::pair{1.0 - d * d, 100.0 * d * d};
  };
  SweepSettings s;
  s.ssim_tol = 0.0;
  s.max_evals = 40;
  const SweepResult r = lambda_sweep({0.1, 1.0, 10.0, 100.0}, s, eval);
  // argmax of evaluated points is reported
  double best = -1e9, argmax = 0.0;
  for (const auto& p : r.points)
    if (p.ssim > best) {
      best = p.ssim;
      argmax = p.lambda;
    }
  EXPECT_EQ(r.best_lambda, argmax);
  EXPECT_EQ(r.best_ssim, best);
  // refinement stops once both neighbours are within 10%
  std::vector<double> ls;
  for (const auto& p : r.points) ls.push_back(p.lambda);
  std::sort(ls.begin(), ls.end());
  const auto it = std::find(ls.begin(), ls.end(), r.best_lambda);
  ASSERT_TRUE(it != ls.begin() && std::next(it) != ls.end());
  EXPECT_LE(*it / *std::prev(it), 1.1);
  EXPECT_LE(*std::next(it) / *it, 1.1);
  EXPECT_NEAR(std::log(r.best_lambda / peak), 0.0, std::log(1.1));
  for (std::size_t i = 0; i < r.points.size(); ++i) EXPECT_EQ(r.points[i].order, i);
}

TEST(LambdaSweep, EdgeArgmaxExtendsTheGrid) {
  auto eval = [](double l) { return std::pair{-std::abs(std::log(l / 500.0)), 0.0}; };
  SweepSettings s;
  s.max_evals = 30;
  const SweepResult r = lambda_sweep({1.0, 10.0}, s, eval);
  EXPECT_GT(r.best_lambda, 100.0);
  EXPECT_LT(r.best_lambda, 2500.0);
  auto low = [](double l) { return std::pair{-std::abs(std::log(l / 0.003)), 0.0}; };
  EXPECT_LT(lambda_sweep({1.0, 10.0}, s, low).best_lambda, 0.03);
}

TEST(LambdaSweep, BudgetAndErrors) {
  std::size_t calls = 0;
  auto eval = [&](double l) {
    ++calls;
    return std::pair{-std::abs(std::log(l)), 0.0};
  };
  SweepSettings s;
  s.max_evals = 5;
  const SweepResult r = lambda_sweep({0.01, 0.1, 1.0, 10.0, 100.0, 1000.0}, s, eval);
  EXPECT_EQ(calls, 5u);
  EXPECT_EQ(r.points.size(), 5u);
  EXPECT_THROW(lambda_sweep({}, s, eval), Error);
  s.ratio = 1.0;
  EXPECT_THROW(lambda_sweep({1.0}, s, eval), Error);
}

TEST(Pipeline, SmokeRunEmitsDeclaredFiles) {
  const fs::path out = scratch("smoke");
  const RunConfig c = RunConfig::parse(minimal_config(out.string()), "smoke.ini");
  const auto t0 = std::chrono::steady_clock::now();
  run(c);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 60.0);
  for (const char* f : {"manifest.json", "truth.dtn", "simulation.csv", "metrics.csv", "metrics_frames.csv",
                        "summary.csv", "paired.csv", "recon_settings.csv", "osem_selection.csv",
                        "real_000/counts.dtn", "real_000/truth_counts.dtn", "real_000/additive.dtn", "real_000/atten.dtn",
                        "real_000/recon_osem.dtn", "traces/osem_real_000.csv"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const DynTensor truth = read_dtn((out / "truth.dtn").string());
  const DynTensor rec = read_dtn((out / "real_000/recon_osem.dtn").string());
  EXPECT_EQ(truth.dims(), (Dims{16, 16, 4}));
  EXPECT_EQ(rec.dims(), truth.dims());
  EXPECT_GE(rec.min(), 0.0);
  const std::string manifest = slurp(out / "manifest.json");
  EXPECT_NE(manifest.find(sha256_hex(c.text)), std::string::npos);
  EXPECT_NE(manifest.find("real_000/recon_osem.dtn"), std::string::npos);
  fs::remove_all(out);
}

TEST(Pipeline, RerunIsByteIdentical) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  run(RunConfig::parse(minimal_config(a.string(), 2), "d.ini"));
  run(RunConfig::parse(minimal_config(b.string(), 2), "d.ini"));
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    const std::string ext = e.path().extension().string();
    if (!e.is_regular_file() || (ext != ".csv" && ext != ".dtn")) continue;
    const fs::path rel = fs::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++compared;
  }
  EXPECT_GT(compared, 10u);
  // a different seed changes the data
  const fs::path c = scratch("det_c");
  run(RunConfig::parse(minimal_config(c.string(), 2, 8), "d.ini"));
  EXPECT_NE(slurp(a / "real_000/counts.dtn"), slurp(c / "real_000/counts.dtn"));
  for (const auto& p : {a, b, c}) fs::remove_all(p);
}

TEST(Pipeline, StagesComposeToTheFullRun) {
  const fs::path whole = scratch("whole"), staged = scratch("staged");
  run(RunConfig::parse(minimal_config(whole.string()), "s.ini"));
  const RunConfig c = RunConfig::parse(minimal_config(staged.string()), "s.ini");
  for (const auto& s : pipeline_stages()) run(c, s);
  for (const char* f : {"real_000/recon_osem.dtn", "metrics.csv", "summary.csv", "metrics_frames.csv"})
    EXPECT_EQ(slurp(whole / f), slurp(staged / f)) << f;
  fs::remove_all(whole);
  fs::remove_all(staged);
}

TEST(Pipeline, MissingInputNamesProducingStage) {
  const fs::path out = scratch("missing");
  const RunConfig c = RunConfig::parse(minimal_config(out.string()), "m.ini");
  try {
    run(c, "recon");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingInput);
    EXPECT_NE(std::string(e.what()).find("simulate"), std::string::npos) << e.what();
  }
  EXPECT_THROW(run(c, "nonsense"), Error);
  fs::remove_all(out);
}

TEST(Pipeline, AnalyzeOnTruthGivesPerfectScores) {
  const fs::path out = scratch("perfect");
  const RunConfig c = RunConfig::parse(minimal_config(out.string()), "p.ini");
  run(c, "simulate");
  run(c, "recon");
  fs::copy_file(out / "real_000/truth_counts.dtn", out / "real_000/recon_osem.dtn", fs::copy_options::overwrite_existing);
  run(c, "analyze");
  std::istringstream in(slurp(out / "metrics.csv"));
  std::string header, row;
  std::getline(in, header);
  ASSERT_TRUE(std::getline(in, row));
  EXPECT_EQ(header, "realization,method,rrmse,ssim");
  std::vector<std::string> f;
  std::stringstream rs(row);
  for (std::string x; std::getline(rs, x, ',');) f.push_back(x);
  ASSERT_EQ(f.size(), 4u);
  EXPECT_EQ(std::stod(f[2]), 0.0);
  EXPECT_NEAR(std::stod(f[3]), 1.0, 1e-12);
  fs::remove_all(out);
}

TEST(Pipeline, ReportMatchesAggregate) {
  const fs::path out = scratch("report");
  run(RunConfig::parse(minimal_config(out.string(), 10), "r.ini"));
  std::vector<double> ssim;
  {
    std::istringstream in(slurp(out / "metrics.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) ssim.push_back(std::stod(line.substr(line.rfind(',') + 1)));
  }
  ASSERT_EQ(ssim.size(), 10u);
  const Summary want = aggregate(ssim);
  std::istringstream in(slurp(out / "summary.csv"));
  std::string line;
  bool found = false;
  while (std::getline(in, line)) {
    if (line.rfind("osem,ssim,", 0) != 0) continue;
    std::vector<double> v;
    std::stringstream rs(line.substr(10));
    for (std::string x; std::getline(rs, x, ',');) v.push_back(std::stod(x));
    ASSERT_EQ(v.size(), 5u);
    EXPECT_EQ(v[0], 10.0);
    EXPECT_NEAR(v[1], want.mean, 1e-10);
    EXPECT_NEAR(v[2], want.se, 1e-10);
    EXPECT_NEAR(v[3], want.ci_low, 1e-10);
    EXPECT_NEAR(v[4], want.ci_high, 1e-10);
    found = true;
  }
  EXPECT_TRUE(found);
  fs::remove_all(out);
}

TEST(Pipeline, ManifestHashTracksConfigContent) {
  const std::string a = minimal_config("/tmp/x");
  std::string b = a;
  b.replace(b.find("iterations = 4"), 14, "iterations = 5");
  EXPECT_EQ(RunConfig::parse(a).text, a);
  EXPECT_EQ(sha256_hex(RunConfig::parse(a).text), sha256_hex(RunConfig::parse(a, "other.ini").text));
  EXPECT_NE(sha256_hex(a), sha256_hex(b));
}
