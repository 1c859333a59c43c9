#include "pddm/data.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace pddm;
namespace fs = std::filesystem;

namespace {

fs::path test_dir() {
  fs::path d = fs::temp_directory_path() / "pddm_data_test";
  fs::create_directories(d);
  return d;
}

// Straight-line re-derivation of every metric, one pass per metric.
MetricReport metrics_oracle(const DenseDepthMap& pred, const DenseDepthMap& gt) {
  MetricReport r;
  std::vector<double> ps, gs;
  for (int i = 0; i < gt.width * gt.height; ++i)
    if (gt.depth[i] > 0.0) {
      ps.push_back(pred.depth[i]);
      gs.push_back(gt.depth[i]);
    }
  r.n_valid = static_cast<int>(gs.size());
  auto mean_of = [&](const std::function<double(double, double)>& f) {
    double s = 0.0;
    for (size_t i = 0; i < gs.size(); ++i) s += f(ps[i], gs[i]);
    return s / static_cast<double>(gs.size());
  };
  r.abs_rel = mean_of([](double p, double g) { return std::abs(g - p) / g; });
  r.rmse = std::sqrt(mean_of([](double p, double g) { return (g - p) * (g - p); }));
  r.mae = mean_of([](double p, double g) { return std::abs(g - p); });
  r.sq_rel = mean_of([](double p, double g) { return (g - p) * (g - p) / g; });
  auto delta = [&](double thr) {
    double s = 0.0;
    for (size_t i = 0; i < gs.size(); ++i)
      if (ps[i] > 0.0 && std::max(ps[i] / gs[i], gs[i] / ps[i]) < thr) s += 1.0;
    return s / static_cast<double>(gs.size());
  };
  r.delta1 = delta(1.25);
  r.delta2 = delta(1.5625);
  r.delta3 = delta(1.953125);
  double sl10 = 0, slog = 0, si2 = 0, si1 = 0;
  int nl = 0;
  for (size_t i = 0; i < gs.size(); ++i) {
    if (!(ps[i] > 0.0)) {
      ++r.n_excluded;
      continue;
    }
    ++nl;
    sl10 += std::abs(std::log10(ps[i] / gs[i]));
    slog += std::pow(std::log(ps[i] / gs[i]), 2);
    si2 += std::pow(1.0 / gs[i] - 1.0 / ps[i], 2);
    si1 += std::abs(1.0 / gs[i] - 1.0 / ps[i]);
  }
  if (nl > 0) {
    r.log10 = sl10 / nl;
    r.rmse_log = std::sqrt(slog / nl);
    r.irmse = std::sqrt(si2 / nl);
    r.imae = si1 / nl;
  }
  return r;
}

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("synthetic scenes are fully valid, in range, and deterministic") {
  SceneSpec spec;
  spec.seed = 17;
  Scene a = synth_scene(spec);
  Scene b = synth_scene(spec);
  CHECK(a.gt.count_valid() == spec.width * spec.height);
  CHECK(a.gt.depth.minCoeff() >= spec.range.d_min);
  CHECK(a.gt.depth.maxCoeff() <= spec.range.d_max);
  CHECK((a.gt.depth - b.gt.depth).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.image.rgb - b.image.rgb).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.image.rgb.minCoeff() >= 0.0);
  CHECK(a.image.rgb.maxCoeff() <= 1.0);
  SceneSpec other = spec;
  other.seed = 18;
  Scene c = synth_scene(other);
  CHECK((a.gt.depth - c.gt.depth).cwiseAbs().maxCoeff() > 0.0);  // seed actually matters
  SceneSpec bad = spec;
  bad.width = 17;
  CHECK_THROWS(synth_scene(bad));
}

TEST_CASE("uniform sampler draws distinct valid pixels") {
  Scene sc = synth_scene(SceneSpec{});
  SparseDepthSamples sp = sample_random(sc.gt, 500, 3);
  CHECK(sp.samples.size() == 500);
  std::set<std::pair<int, int>> seen;
  for (const auto& s : sp.samples) {
    CHECK(seen.insert({s.u, s.v}).second);  // no duplicates
    CHECK(s.d == sc.gt.at(s.v, s.u));
  }
  SparseDepthSamples sp2 = sample_random(sc.gt, 500, 3);
  CHECK(sp2.samples.size() == sp.samples.size());
  for (size_t i = 0; i < sp.samples.size(); ++i) CHECK(sp.samples[i].u == sp2.samples[i].u);
  CHECK_THROWS(sample_random(sc.gt, sc.gt.width * sc.gt.height + 1, 3));
}

TEST_CASE("grid sampler covers stride multiples") {
  Scene sc = synth_scene(SceneSpec{});  // 64x48, fully valid
  SparseDepthSamples sp = sample_grid(sc.gt, 8);
  CHECK(sp.samples.size() == 8 * 6);
  for (const auto& s : sp.samples) {
    CHECK(s.u % 8 == 0);
    CHECK(s.v % 8 == 0);
  }
}

TEST_CASE("biased sampler row-marginals match the analytic weights") {
  SceneSpec spec;
  spec.width = 32;
  spec.height = 32;
  Scene sc = synth_scene(spec);
  for (BiasMode mode : {BiasMode::top, BiasMode::middle, BiasMode::bottom}) {
    std::vector<double> expect = biased_row_marginals(sc.gt, mode, 0.35);
    std::vector<double> got(static_cast<size_t>(spec.height), 0.0);
    const int draws = 100000;
    std::mt19937_64 seeds(99);
    // Independent single draws so the empirical distribution targets the
    // single-draw marginal exactly.
    for (int i = 0; i < draws; ++i) {
      SparseDepthSamples one = sample_biased(sc.gt, 1, mode, 0.35, seeds());
      got[static_cast<size_t>(one.samples[0].v)] += 1.0 / draws;
    }
    double l1 = 0.0;
    for (size_t v = 0; v < expect.size(); ++v) l1 += std::abs(expect[v] - got[v]);
    INFO("mode ", static_cast<int>(mode), " L1 ", l1);
    CHECK(l1 < 0.02);
  }
}

TEST_CASE("biased sampler draws without replacement") {
  SceneSpec spec;
  spec.width = 16;
  spec.height = 16;
  Scene sc = synth_scene(spec);
  SparseDepthSamples sp = sample_biased(sc.gt, 200, BiasMode::bottom, 0.35, 5);
  std::set<std::pair<int, int>> seen;
  for (const auto& s : sp.samples) CHECK(seen.insert({s.u, s.v}).second);
}

TEST_CASE("noise corrupts about half the samples and keeps depths positive") {
  Scene sc = synth_scene(SceneSpec{});
  SparseDepthSamples sp = sample_random(sc.gt, 2000, 3);
  SparseDepthSamples noisy = add_noise(sp, 0.5, 0.5, 31);
  int changed = 0;
  for (size_t i = 0; i < sp.samples.size(); ++i) {
    CHECK(noisy.samples[i].d > 0.0);
    if (noisy.samples[i].d != sp.samples[i].d) ++changed;
  }
  double frac = changed / 2000.0;
  double band = 3.0 * std::sqrt(0.5 * 0.5 / 2000.0);
  CHECK(frac > 0.5 - band);
  CHECK(frac < 0.5 + band);
}

TEST_CASE("rasterization inverts sampling on hit pixels") {
  Scene sc = synth_scene(SceneSpec{});
  SparseDepthSamples sp = sample_random(sc.gt, 100, 7);
  DenseDepthMap r = rasterize(sp);
  CHECK(r.count_valid() == 100);
  for (const auto& s : sp.samples) CHECK(r.at(s.v, s.u) == s.d);
}

TEST_CASE("metrics agree with the per-pixel oracle on random maps") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> dist(0.2, 9.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    DenseDepthMap pred(16, 16), gt(16, 16);
    for (int i = 0; i < 256; ++i) {
      gt.depth[i] = coin(rng) < 0.1 ? 0.0 : dist(rng);
      pred.depth[i] = coin(rng) < 0.05 ? -0.1 : dist(rng);  // some nonpositive predictions
    }
    if (gt.count_valid() == 0) gt.depth[0] = 1.0;
    MetricReport a = compute_metrics(pred, gt);
    MetricReport b = metrics_oracle(pred, gt);
    CHECK(a.n_valid == b.n_valid);
    CHECK(a.n_excluded == b.n_excluded);
    for (auto [x, y] : {std::pair{a.abs_rel, b.abs_rel}, {a.rmse, b.rmse}, {a.mae, b.mae},
                        {a.sq_rel, b.sq_rel}, {a.log10, b.log10}, {a.rmse_log, b.rmse_log},
                        {a.delta1, b.delta1}, {a.delta2, b.delta2}, {a.delta3, b.delta3},
                        {a.irmse, b.irmse}, {a.imae, b.imae}})
      CHECK(std::abs(x - y) < 1e-12);
  }
}

TEST_CASE("metric hand cases") {
  DenseDepthMap gt(2, 1), pred(2, 1);
  gt.depth << 1.0, 1.0;
  pred.depth << 1.0, 1.0;
  MetricReport perfect = compute_metrics(pred, gt);
  CHECK(perfect.rmse == 0.0);
  CHECK(perfect.abs_rel == 0.0);
  CHECK(perfect.delta1 == 1.0);
  CHECK(perfect.delta3 == 1.0);

  pred.depth << 2.0, 2.0;  // ratio 2 exceeds every delta threshold
  MetricReport off = compute_metrics(pred, gt);
  CHECK(off.abs_rel == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(off.rmse == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(off.delta1 == 0.0);
  CHECK(off.delta2 == 0.0);
  CHECK(off.delta3 == 0.0);
  CHECK(off.rmse_log == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(off.irmse == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("depth map round trip is bitwise lossless") {
  fs::path d = test_dir();
  Scene sc = synth_scene(SceneSpec{});
  std::string f = (d / "gt.dmap").string();
  write_dmap(f, sc.gt);
  DenseDepthMap back = read_dmap(f);
  CHECK(back.width == sc.gt.width);
  CHECK(back.height == sc.gt.height);
  std::string f2 = (d / "gt2.dmap").string();
  write_dmap(f2, back);
  std::ifstream a(f, std::ios::binary), b(f2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {});
  std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
}

TEST_CASE("depth map reader reports corruption with byte offsets") {
  fs::path d = test_dir();
  std::string f = (d / "bad.dmap").string();
  std::ofstream(f, std::ios::binary) << "XMAP";
  CHECK_THROWS_WITH_AS(read_dmap(f), doctest::Contains("bad magic"), std::runtime_error);

  Scene sc = synth_scene(SceneSpec{});
  std::string full = (d / "full.dmap").string();
  write_dmap(full, sc.gt);
  std::ifstream is(full, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), {});
  std::string trunc_f = (d / "trunc.dmap").string();
  std::ofstream(trunc_f, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  try {
    read_dmap(trunc_f);
    FAIL("expected truncation error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
}

TEST_CASE("sparse CSV round trip preserves every sample") {
  fs::path d = test_dir();
  Scene sc = synth_scene(SceneSpec{});
  SparseDepthSamples sp = sample_random(sc.gt, 256, 9);
  std::string f = (d / "sparse.csv").string();
  write_sparse_csv(f, sp);
  SparseDepthSamples back = read_sparse_csv(f);
  REQUIRE(back.samples.size() == sp.samples.size());
  for (size_t i = 0; i < sp.samples.size(); ++i) {
    CHECK(back.samples[i].u == sp.samples[i].u);
    CHECK(back.samples[i].v == sp.samples[i].v);
    CHECK(back.samples[i].d == doctest::Approx(sp.samples[i].d).epsilon(1e-8));
  }
  std::ifstream is(f);
  std::string header;
  std::getline(is, header);
  CHECK(header == "u,v,d");
}

TEST_CASE("sparse CSV reader rejects malformed input with line numbers") {
  fs::path d = test_dir();
  std::string f = (d / "bad.csv").string();
  std::ofstream(f) << "x,y,z\n1,2,3\n";
  CHECK_THROWS(read_sparse_csv(f));
  std::ofstream(f) << "u,v,d\n1,2,3.5\nnot-a-row\n";
  try {
    read_sparse_csv(f);
    FAIL("expected parse error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  std::ofstream(f) << "u,v,d\n1,2,-4\n";
  CHECK_THROWS(read_sparse_csv(f));  // nonpositive depth
}

TEST_CASE("image and 16-bit depth exports are readable") {
  fs::path d = test_dir();
  Scene sc = synth_scene(SceneSpec{});
  std::string ppm = (d / "scene.ppm").string();
  write_ppm(ppm, sc.image);
  Image back = read_ppm(ppm);
  CHECK(back.width == sc.image.width);
  CHECK(back.height == sc.image.height);
  CHECK((back.rgb - sc.image.rgb).cwiseAbs().maxCoeff() < 1.0 / 255.0);

  std::string pgm = (d / "depth.pgm").string();
  write_depth_pgm(pgm, sc.gt);
  std::ifstream is(pgm, std::ios::binary);
  std::string magic;
  int w, h, maxv;
  is >> magic >> w >> h >> maxv;
  CHECK(magic == "P5");
  CHECK(w == sc.gt.width);
  CHECK(maxv == 65535);
  std::ifstream side(pgm + ".scale.txt");
  std::string key, eq;
  double scale = 0.0;
  side >> key >> eq >> scale;
  CHECK(key == "meters_per_gray_level");
  CHECK(scale * 65535.0 == doctest::Approx(sc.gt.depth.maxCoeff()).epsilon(1e-6));
}

TEST_SUITE_END();
