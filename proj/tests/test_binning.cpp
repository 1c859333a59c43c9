#include "pddm/binning.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace pddm;

namespace {

// Independent oracle: centers by explicit cumulative sums.
std::vector<double> centers_oracle(const std::vector<double>& widths, double d_min, double d_max) {
  std::vector<double> out;
  double cum = 0.0;
  for (double w : widths) {
    out.push_back(d_min + (d_max - d_min) * (w / 2.0 + cum));
    cum += w;
  }
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("binning");

TEST_CASE("uniform discretization N=4 on [0,8] gives centers 1,3,5,7") {
  BinPartition p = uniform_discretization(4, {0.0, 8.0, DepthRange::Kind::dataset_absolute});
  std::vector<double> c = bin_centers(p);
  REQUIRE(c.size() == 4);
  double expect[4] = {1, 3, 5, 7};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(c[i] - expect[i]) < 1e-9);
}

TEST_CASE("hand-computed centers for widths 0.5,0.25,0.25 on [0,4]") {
  BinPartition p;
  p.widths = {0.5, 0.25, 0.25};
  p.range = {0.0, 4.0, DepthRange::Kind::dataset_absolute};
  std::vector<double> c = bin_centers(p);
  CHECK(c[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c[1] == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(c[2] == doctest::Approx(3.5).epsilon(1e-12));
}

TEST_CASE("width normalization clamps negatives to the floor") {
  std::vector<double> w = normalize_widths({-1.0, 0.0, 1.0});
  double s = 0.001 + 0.001 + 1.001;
  CHECK(w[0] == doctest::Approx(0.001 / s).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(0.001 / s).epsilon(1e-12));
  CHECK(w[2] == doctest::Approx(1.001 / s).epsilon(1e-12));
}

TEST_CASE("normalized widths are positive and sum to one for random raw inputs") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> dist(-5.0, 5.0);
  std::uniform_int_distribution<int> len(1, 64);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> raw(static_cast<size_t>(len(rng)));
    for (double& v : raw) v = dist(rng);
    std::vector<double> w = normalize_widths(raw);
    double s = 0.0;
    for (double v : w) {
      CHECK(v > 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("centers match the cumulative-sum oracle on random partitions") {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> raw(8);
    for (double& v : raw) v = dist(rng);
    BinPartition p;
    p.widths = normalize_widths(raw);
    p.range = {0.5, 10.0, DepthRange::Kind::dataset_absolute};
    std::vector<double> c = bin_centers(p);
    std::vector<double> o = centers_oracle(p.widths, 0.5, 10.0);
    for (size_t i = 0; i < o.size(); ++i) CHECK(std::abs(c[i] - o[i]) < 1e-12);
    // centers are sorted and interior to the range
    for (size_t i = 1; i < c.size(); ++i) CHECK(c[i] > c[i - 1]);
    CHECK(c.front() > 0.5);
    CHECK(c.back() < 10.0);
  }
}

TEST_CASE("expected depth stays inside the center hull") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    ProbabilityVolume pv;
    pv.width = 4;
    pv.height = 3;
    pv.categories = 6;
    pv.p = Eigen::VectorXd(4 * 3 * 6);
    for (int px = 0; px < 12; ++px) {
      double s = 0.0;
      for (int c = 0; c < 6; ++c) {
        pv.p[px * 6 + c] = dist(rng) + 1e-9;
        s += pv.p[px * 6 + c];
      }
      for (int c = 0; c < 6; ++c) pv.p[px * 6 + c] /= s;
    }
    std::vector<double> centers{0.5, 1.0, 2.0, 4.0, 8.0, 10.0};
    DenseDepthMap d = depth_from_probs(pv, centers);
    for (int i = 0; i < 12; ++i) {
      CHECK(d.depth[i] >= 0.5);
      CHECK(d.depth[i] <= 10.0);
    }
  }
}

TEST_CASE("spacing-increasing discretization uses log-uniform edges") {
  BinPartition p = sid_discretization(4, {1.0, 16.0, DepthRange::Kind::dataset_absolute});
  // edges 1,2,4,8,16 -> widths proportional to 1,2,4,8
  REQUIRE(p.widths.size() == 4);
  CHECK(p.widths[0] == doctest::Approx(1.0 / 15.0).epsilon(1e-10));
  CHECK(p.widths[1] == doctest::Approx(2.0 / 15.0).epsilon(1e-10));
  CHECK(p.widths[2] == doctest::Approx(4.0 / 15.0).epsilon(1e-10));
  CHECK(p.widths[3] == doctest::Approx(8.0 / 15.0).epsilon(1e-10));
  for (size_t i = 1; i < p.widths.size(); ++i) CHECK(p.widths[i] > p.widths[i - 1]);
}

TEST_CASE("spacing-increasing discretization shifts nonpositive lower bounds") {
  BinPartition p = sid_discretization(4, {0.0, 8.0, DepthRange::Kind::dataset_absolute});
  CHECK(p.range.d_min == doctest::Approx(1.0));
  CHECK(p.range.d_max == doctest::Approx(9.0));
}

TEST_CASE("relative range and boundary categories") {
  SparseDepthSamples sp;
  sp.width = 8;
  sp.height = 8;
  sp.samples = {{0, 0, 2.5}, {1, 1, 7.0}, {2, 2, 4.0}};
  DepthRange rel = relative_range(sp);
  CHECK(rel.d_min == 2.5);
  CHECK(rel.d_max == 7.0);
  CHECK(rel.kind == DepthRange::Kind::scene_relative);

  BinPartition p = uniform_discretization(4, rel);
  DepthRange dataset{0.5, 10.0, DepthRange::Kind::dataset_absolute};
  BinPartition pb = add_boundary_bins(p, dataset);
  CHECK(pb.categories() == 6);
  std::vector<double> c = bin_centers(pb);
  REQUIRE(c.size() == 6);
  CHECK(c.front() == 0.5);   // pinned at dataset ends
  CHECK(c.back() == 10.0);
  for (size_t i = 1; i + 1 < c.size(); ++i) {
    CHECK(c[i] >= rel.d_min);
    CHECK(c[i] <= rel.d_max);
  }

  SparseDepthSamples same;
  same.width = 4;
  same.height = 4;
  same.samples = {{0, 0, 3.0}, {1, 1, 3.0}};
  CHECK_THROWS(relative_range(same));  // fewer than two distinct depths

  DepthRange outside{11.0, 12.0, DepthRange::Kind::scene_relative};
  BinPartition po = uniform_discretization(4, outside);
  CHECK_THROWS(add_boundary_bins(po, dataset));  // not contained in dataset range
}

TEST_CASE("differentiable partition math matches the plain versions") {
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  DepthRange range{0.5, 10.0, DepthRange::Kind::dataset_absolute};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> raw(6);
    for (double& v : raw) v = dist(rng);
    Tensor raw_t = Tensor::from({6}, raw);
    Tensor w_t = normalize_widths_t(raw_t);
    std::vector<double> w = normalize_widths(raw);
    for (int i = 0; i < 6; ++i) CHECK(w_t[i] == doctest::Approx(w[i]).epsilon(1e-12));
    Tensor c_t = centers_from_widths_t(w_t, range);
    std::vector<double> o = centers_oracle(w, 0.5, 10.0);
    for (int i = 0; i < 6; ++i) CHECK(c_t[i] == doctest::Approx(o[i]).epsilon(1e-10));
    Tensor cb = append_boundary_t(c_t, range);
    CHECK(cb.size() == 8);
    CHECK(cb[0] == 0.5);
    CHECK(cb[7] == 10.0);
  }
}

TEST_CASE("differentiable partition chain passes a gradient check") {
  DepthRange range{0.5, 10.0, DepthRange::Kind::dataset_absolute};
  Tensor raw = Tensor::from({5}, {0.4, -0.7, 1.3, 0.2, -0.1});
  auto f = [&](const Tensor& x) {
    Tensor c = append_boundary_t(centers_from_widths_t(normalize_widths_t(x), range), range);
    return sum(square(c));
  };
  GradCheckReport r = grad_check(f, raw);
  INFO(r.worst);
  CHECK(r.pass);
}

TEST_CASE("expected depth through tensors matches the plain reconstruction") {
  Tensor probs = Tensor::from({2, 3}, {0.2, 0.3, 0.5, 1.0, 0.0, 0.0});
  Tensor centers = Tensor::from({3}, {1.0, 2.0, 4.0});
  Tensor d = depth_from_probs_t(probs, centers);
  CHECK(d[0] == doctest::Approx(0.2 + 0.6 + 2.0).epsilon(1e-12));
  CHECK(d[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("degenerate ranges are rejected") {
  CHECK_THROWS(uniform_discretization(4, {5.0, 5.0, DepthRange::Kind::dataset_absolute}));
  CHECK_THROWS(uniform_discretization(0, {0.0, 8.0, DepthRange::Kind::dataset_absolute}));
  CHECK_THROWS(normalize_widths({}));
}

TEST_SUITE_END();
