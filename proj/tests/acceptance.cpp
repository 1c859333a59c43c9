// Acceptance sweep: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Runs everything in-process against the core library.

#include "pddm/config.hpp"
#include "pddm/losses.hpp"
#include "pddm/optim.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace pddm;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void criterion(int id, const std::string& what, const std::function<bool(std::string&)>& body) {
  std::string detail;
  bool ok = false;
  auto t0 = std::chrono::steady_clock::now();
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("criterion %2d: %s  [%s, %.2fs]%s%s\n", id, ok ? "PASS" : "FAIL", what.c_str(), secs,
              detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

Tensor random_tensor(const Shape& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor t = Tensor::zeros(s);
  for (int i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
  return t;
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.dim = 8;
  mc.stages = 3;
  mc.n_final = 8;
  mc.n_fixed = 32;
  mc.enc_widths = {16, 8, 8};
  mc.dec_widths = {8, 8};
  mc.ppb_channels = 8;
  mc.cspn_iters = 4;
  return mc;
}

bool check_op_grad(const std::string& name, const std::function<Tensor(const Tensor&)>& f,
                   Tensor x, std::string& detail) {
  Tensor probe = f(x);
  std::mt19937_64 wrng(99);
  Tensor w = random_tensor(probe.shape(), wrng);
  auto g = [&](const Tensor& xx) { return sum(mul(f(xx), w)); };
  GradCheckReport r = grad_check(g, x, 1e-5, 1e-5);
  if (!r.pass) detail += name + " failed (" + r.worst + "); ";
  return r.pass;
}

}  // namespace

int main() {
  criterion(1, "uniform bin centers N=4 on [0,8]", [](std::string&) {
    BinPartition p = uniform_discretization(4, {0.0, 8.0, DepthRange::Kind::dataset_absolute});
    std::vector<double> c = bin_centers(p);
    double expect[4] = {1, 3, 5, 7};
    if (c.size() != 4) return false;
    for (int i = 0; i < 4; ++i)
      if (std::abs(c[i] - expect[i]) > 1e-9) return false;
    return true;
  });

  criterion(2, "width normalization positive, sums to one (1e4 random vectors)", [](std::string&) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> dist(-5.0, 5.0);
    std::uniform_int_distribution<int> len(1, 64);
    for (int trial = 0; trial < 10000; ++trial) {
      std::vector<double> raw(static_cast<size_t>(len(rng)));
      for (double& v : raw) v = dist(rng);
      std::vector<double> w = normalize_widths(raw);
      double s = 0.0;
      for (double v : w) {
        if (!(v > 0.0)) return false;
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-6) return false;
    }
    return true;
  });

  criterion(3, "expected depth inside the center hull (1e3 volumes)", [](std::string&) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<double> centers{0.5, 1.2, 2.5, 5.0, 8.0, 10.0};
    for (int trial = 0; trial < 1000; ++trial) {
      ProbabilityVolume pv;
      pv.width = 4;
      pv.height = 4;
      pv.categories = 6;
      pv.p = Eigen::VectorXd(16 * 6);
      for (int px = 0; px < 16; ++px) {
        double s = 0.0;
        for (int c = 0; c < 6; ++c) {
          pv.p[px * 6 + c] = dist(rng) + 1e-9;
          s += pv.p[px * 6 + c];
        }
        for (int c = 0; c < 6; ++c) pv.p[px * 6 + c] /= s;
      }
      DenseDepthMap d = depth_from_probs(pv, centers);
      for (int i = 0; i < 16; ++i)
        if (d.depth[i] < 0.5 || d.depth[i] > 10.0) return false;
    }
    return true;
  });

  criterion(4, "bin-count doubling schedule, L=5, N_final in {16,64}", [](std::string&) {
    for (int n_final : {16, 64}) {
      StageSchedule s = StageSchedule::make(5, n_final);
      if (s.bins.size() != 5 || s.bins[0] != n_final / 16) return false;
      for (int l = 1; l < 5; ++l)
        if (s.bins[l] != 2 * s.bins[l - 1]) return false;
      if (s.bins[4] != n_final) return false;
    }
    return true;
  });

  criterion(5, "gradient suite: every op at 1e-5, tiny whole model at 1e-3", [](std::string& d) {
    bool ok = true;
    std::mt19937_64 rng(5);
    Tensor other = random_tensor({3, 4}, rng);
    auto nz = [&rng](const Shape& s) {
      std::mt19937_64 r2(rng());
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      Tensor t = Tensor::zeros(s);
      for (int i = 0; i < t.size(); ++i) {
        double v = dist(r2);
        t.data()[i] = std::abs(v) < 0.05 ? (v >= 0 ? v + 0.1 : v - 0.1) : v;
      }
      return t;
    };
    ok &= check_op_grad("add", [&](const Tensor& x) { return add(x, other); },
                        random_tensor({3, 4}, rng), d);
    ok &= check_op_grad("sub", [&](const Tensor& x) { return sub(other, x); },
                        random_tensor({3, 4}, rng), d);
    ok &= check_op_grad("mul", [&](const Tensor& x) { return mul(x, other); },
                        random_tensor({3, 4}, rng), d);
    ok &= check_op_grad("scale", [&](const Tensor& x) { return scale(x, -1.5); },
                        random_tensor({3, 4}, rng), d);
    ok &= check_op_grad("add_const", [&](const Tensor& x) { return add_const(x, 2.0); },
                        random_tensor({3, 4}, rng), d);
    ok &= check_op_grad("relu", [&](const Tensor& x) { return relu(x); }, nz({3, 4}), d);
    ok &= check_op_grad("leaky_relu", [&](const Tensor& x) { return leaky_relu(x); }, nz({3, 4}), d);
    ok &= check_op_grad("abs_val", [&](const Tensor& x) { return abs_val(x); }, nz({3, 4}), d);
    ok &= check_op_grad("square", [&](const Tensor& x) { return square(x); },
                        random_tensor({3, 4}, rng), d);
    Tensor denom = Tensor::scalar(1.3);
    ok &= check_op_grad("div_by", [&](const Tensor& x) { return div_by(x, denom); },
                        random_tensor({3, 4}, rng), d);
    ok &= check_op_grad("reshape", [&](const Tensor& x) { return reshape(x, {12}); },
                        random_tensor({3, 4}, rng), d);
    ok &= check_op_grad("concat_last", [&](const Tensor& x) { return concat_last({x, other}); },
                        random_tensor({3, 4}, rng), d);
    ok &= check_op_grad("slice_last", [&](const Tensor& x) { return slice_last(x, 1, 2); },
                        random_tensor({3, 4}, rng), d);
    ok &= check_op_grad("sum", [&](const Tensor& x) { return sum(x); },
                        random_tensor({3, 4}, rng), d);
    ok &= check_op_grad("mean", [&](const Tensor& x) { return mean(x); },
                        random_tensor({3, 4}, rng), d);
    std::vector<int> idx{0, 2, 2};
    ok &= check_op_grad("gather", [&](const Tensor& x) { return gather(x, idx); },
                        random_tensor({4}, rng), d);
    Tensor b34 = random_tensor({4, 2}, rng);
    ok &= check_op_grad("matmul", [&](const Tensor& x) { return matmul(x, b34); },
                        random_tensor({3, 4}, rng), d);
    ok &= check_op_grad("transpose", [&](const Tensor& x) { return transpose(x); },
                        random_tensor({3, 4}, rng), d);
    Tensor w = random_tensor({4, 2}, rng), bias = random_tensor({2}, rng);
    ok &= check_op_grad("linear", [&](const Tensor& x) { return linear(x, w, bias); },
                        random_tensor({3, 4}, rng), d);
    ok &= check_op_grad("add_rowwise", [&](const Tensor& x) { return add_rowwise(x, bias); },
                        random_tensor({3, 2}, rng), d);
    ok &= check_op_grad("softmax", [&](const Tensor& x) { return softmax_lastaxis(x); },
                        random_tensor({3, 4}, rng), d);
    Tensor g4 = random_tensor({4}, rng), be4 = random_tensor({4}, rng);
    ok &= check_op_grad("layer_norm", [&](const Tensor& x) { return layer_norm(x, g4, be4); },
                        random_tensor({3, 4}, rng), d);
    ok &= check_op_grad("channel_norm", [&](const Tensor& x) { return channel_norm(x, g4, be4); },
                        random_tensor({3, 4}, rng), d);
    Tensor k3 = random_tensor({3, 3, 2, 2}, rng), b2 = random_tensor({2}, rng);
    ok &= check_op_grad("conv2d s1", [&](const Tensor& x) { return conv2d(x, k3, b2, 1); },
                        random_tensor({4, 4, 2}, rng), d);
    ok &= check_op_grad("conv2d s2", [&](const Tensor& x) { return conv2d(x, k3, b2, 2); },
                        random_tensor({4, 4, 2}, rng), d);
    Tensor kt = random_tensor({3, 3, 2, 2}, rng);
    ok &= check_op_grad("tconv", [&](const Tensor& x) { return transposed_conv2d(x, kt, b2); },
                        random_tensor({2, 2, 2}, rng), d);
    Tensor k1 = random_tensor({3, 2, 2}, rng);
    ok &= check_op_grad("conv1d", [&](const Tensor& x) { return conv1d(x, k1, b2); },
                        random_tensor({2, 6}, rng), d);

    // whole tiny model, subsampled finite-difference sweep over every tensor
    ModelConfig mc = tiny_model();
    SceneSpec spec;
    spec.width = 16;
    spec.height = 16;
    spec.seed = 55;
    Scene sc = synth_scene(spec);
    SparseDepthSamples sp = sample_random(sc.gt, 40, 5);
    ParamStore params(5);
    Model model(params, mc);
    LossWeights lw = LossWeights::make(mc.stages);
    auto loss_fn = [&]() {
      return multi_scale_loss_t(model.forward(sc.image, sp, 1), sc.gt, lw, 0, 0);
    };
    // Step 1e-6: the L1 terms put kinks near the operating point and a larger
    // step occasionally straddles one, inflating the difference quotient.
    GradCheckReport r = grad_check_params(loss_fn, params, 1e-6, 1e-3, 4, 5);
    if (!r.pass) d += "whole model: " + r.worst;
    return ok && r.pass;
  });

  criterion(6, "chamfer zero case and double-loop oracle", [](std::string&) {
    DenseDepthMap gt(3, 1);
    gt.depth << 1.5, 4.0, 7.5;
    if (chamfer_bins({1.5, 4.0, 7.5}, gt) != 0.0) return false;
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> dist(0.5, 10.0);
    for (int trial = 0; trial < 50; ++trial) {
      DenseDepthMap g2(8, 4);
      for (int i = 0; i < 32; ++i) g2.depth[i] = dist(rng);
      std::vector<double> centers(6);
      for (double& c : centers) c = dist(rng);
      double expect = 0.0;
      for (int i = 0; i < 32; ++i) {
        double best = 1e300;
        for (double c : centers) best = std::min(best, std::pow(g2.depth[i] - c, 2));
        expect += best;
      }
      for (double c : centers) {
        double best = 1e300;
        for (int i = 0; i < 32; ++i) best = std::min(best, std::pow(g2.depth[i] - c, 2));
        expect += best;
      }
      if (std::abs(chamfer_bins(centers, g2) - expect) > 1e-10) return false;
      Tensor ct = Tensor::from({6}, centers);
      if (std::abs(chamfer_bins_t(ct, g2).item() - expect) > 1e-10) return false;
    }
    return true;
  });

  criterion(7, "multi-scale weights 0.5^(L-l), beta 0.1", [](std::string&) {
    LossWeights w = LossWeights::make(5);
    double expect[5] = {1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0 / 2, 1.0};
    if (w.omega.size() != 5 || w.beta != 0.1) return false;
    for (int i = 0; i < 5; ++i)
      if (w.omega[static_cast<size_t>(i)] != expect[i]) return false;
    return true;
  });

  criterion(8, "overfit: 500 steps, loss < 10% of start, last stage beats stage 1",
            [](std::string& d) {
    ModelConfig mc;  // full desk-scale defaults: 64x48, dim 32, L=5, N=64
    SceneSpec spec;
    spec.seed = 8;
    Scene sc = synth_scene(spec);
    SparseDepthSamples sp = sample_random(sc.gt, 500, 8);
    ParamStore params(8);
    Model model(params, mc);
    LossWeights lw = LossWeights::make(mc.stages);
    Adam opt(params, 3e-3);
    double first = 0.0, last = 0.0;
    for (int step = 1; step <= 500; ++step) {
      ForwardResult fr = model.forward(sc.image, sp, 1);
      Tensor loss = multi_scale_loss_t(fr, sc.gt, lw, 2048, 8);
      last = loss.item();
      if (step == 1) first = last;
      if (!std::isfinite(last)) {
        d = "diverged at step " + std::to_string(step);
        return false;
      }
      backward(loss);
      opt.step();
    }
    ForwardResult fr = model.forward(sc.image, sp, 1);
    const StageOutput& s1 = fr.stages.front();
    const StageOutput& sl = fr.stages.back();
    DenseDepthMap p1(s1.w, s1.h), pl(sl.w, sl.h);
    p1.depth = s1.depth.data();
    pl.depth = sl.depth.data();
    // Both stages are scored at full resolution against the same ground
    // truth, so the comparison measures the stage-refinement gain itself.
    double rmse1 = compute_metrics(upsample_nearest(p1, sc.gt.width / s1.w), sc.gt).rmse;
    double rmseL = compute_metrics(upsample_nearest(pl, sc.gt.width / sl.w), sc.gt).rmse;
    std::ostringstream os;
    os << "loss " << first << " -> " << last << "; stage-1 rmse " << rmse1 << ", final rmse "
       << rmseL;
    d = os.str();
    return last < 0.1 * first && rmseL <= rmse1;
  });

  criterion(9, "sampler statistics: biased marginals and noise fraction", [](std::string& d) {
    SceneSpec spec;
    spec.width = 32;
    spec.height = 32;
    spec.seed = 9;
    Scene sc = synth_scene(spec);
    std::vector<double> expect = biased_row_marginals(sc.gt, BiasMode::middle, 0.35);
    std::vector<double> got(static_cast<size_t>(spec.height), 0.0);
    const int draws = 100000;
    std::mt19937_64 seeds(9);
    for (int i = 0; i < draws; ++i) {
      SparseDepthSamples one = sample_biased(sc.gt, 1, BiasMode::middle, 0.35, seeds());
      got[static_cast<size_t>(one.samples[0].v)] += 1.0 / draws;
    }
    double l1 = 0.0;
    for (size_t v = 0; v < expect.size(); ++v) l1 += std::abs(expect[v] - got[v]);

    SceneSpec big;
    big.seed = 10;
    Scene sc2 = synth_scene(big);
    SparseDepthSamples sp = sample_random(sc2.gt, 2000, 9);
    SparseDepthSamples noisy = add_noise(sp, 0.5, 0.5, 9);
    int changed = 0;
    for (size_t i = 0; i < sp.samples.size(); ++i)
      if (noisy.samples[i].d != sp.samples[i].d) ++changed;
    double frac = changed / 2000.0;
    double band = 3.0 * std::sqrt(0.25 / 2000.0);
    std::ostringstream os;
    os << "marginal L1 " << l1 << ", corrupted fraction " << frac;
    d = os.str();
    return l1 < 0.02 && std::abs(frac - 0.5) < band;
  });

  criterion(10, "metrics match an independent per-pixel oracle", [](std::string&) {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> dist(0.2, 9.0);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
      DenseDepthMap pred(16, 16), gt(16, 16);
      for (int i = 0; i < 256; ++i) {
        gt.depth[i] = coin(rng) < 0.1 ? 0.0 : dist(rng);
        pred.depth[i] = dist(rng);
      }
      if (gt.count_valid() == 0) gt.depth[0] = 1.0;
      MetricReport a = compute_metrics(pred, gt);
      double s_abs = 0, s_sq = 0, s_rel = 0, s_d1 = 0;
      int n = 0;
      for (int i = 0; i < 256; ++i)
        if (gt.depth[i] > 0.0) {
          ++n;
          s_abs += std::abs(gt.depth[i] - pred.depth[i]);
          s_sq += std::pow(gt.depth[i] - pred.depth[i], 2);
          s_rel += std::abs(gt.depth[i] - pred.depth[i]) / gt.depth[i];
          if (std::max(pred.depth[i] / gt.depth[i], gt.depth[i] / pred.depth[i]) < 1.25) s_d1 += 1;
        }
      if (std::abs(a.mae - s_abs / n) > 1e-12) return false;
      if (std::abs(a.rmse - std::sqrt(s_sq / n)) > 1e-12) return false;
      if (std::abs(a.abs_rel - s_rel / n) > 1e-12) return false;
      if (std::abs(a.delta1 - s_d1 / n) > 1e-12) return false;
    }
    DenseDepthMap gt(4, 4), pred(4, 4);
    gt.depth.setConstant(3.0);
    pred.depth.setConstant(3.0);
    MetricReport perfect = compute_metrics(pred, gt);
    return perfect.rmse == 0.0 && perfect.abs_rel == 0.0 && perfect.delta1 == 1.0 &&
           perfect.delta2 == 1.0 && perfect.delta3 == 1.0 && perfect.mae == 0.0;
  });

  criterion(11, "relative-range containment with pinned boundary categories", [](std::string&) {
    ModelConfig mc = tiny_model();
    SceneSpec spec;
    spec.width = 16;
    spec.height = 16;
    spec.seed = 11;
    Scene sc = synth_scene(spec);
    SparseDepthSamples sp = sample_random(sc.gt, 40, 11);
    DepthRange rel = relative_range(sp);
    ParamStore params(11);
    Model model(params, mc);
    ForwardResult fr = model.forward(sc.image, sp, 1);
    if (fr.rel_range.d_min != rel.d_min || fr.rel_range.d_max != rel.d_max) return false;
    for (const StageOutput& st : fr.stages) {
      int m = st.widths.size();
      if (st.centers.size() != m + 2) return false;
      if (st.centers[0] != mc.dataset_range.d_min) return false;
      if (st.centers[m + 1] != mc.dataset_range.d_max) return false;
      for (int i = 1; i <= m; ++i)
        if (st.centers[i] < rel.d_min || st.centers[i] > rel.d_max) return false;
    }
    return true;
  });

  criterion(12, "file format round trips: depth map, sparse CSV, checkpoint", [](std::string&) {
    fs::path dir = fs::temp_directory_path() / "pddm_accept_fmt";
    fs::create_directories(dir);
    auto bytes = [](const fs::path& p) {
      std::ifstream is(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(is), {});
    };
    SceneSpec spec;
    spec.seed = 12;
    Scene sc = synth_scene(spec);
    write_dmap((dir / "a.dmap").string(), sc.gt);
    DenseDepthMap back = read_dmap((dir / "a.dmap").string());
    write_dmap((dir / "b.dmap").string(), back);
    if (bytes(dir / "a.dmap") != bytes(dir / "b.dmap")) return false;

    SparseDepthSamples sp = sample_random(sc.gt, 200, 12);
    write_sparse_csv((dir / "a.csv").string(), sp);
    SparseDepthSamples spb = read_sparse_csv((dir / "a.csv").string());
    write_sparse_csv((dir / "b.csv").string(), spb);
    if (bytes(dir / "a.csv") != bytes(dir / "b.csv")) return false;
    if (spb.samples.size() != sp.samples.size()) return false;
    for (size_t i = 0; i < sp.samples.size(); ++i)
      if (spb.samples[i].u != sp.samples[i].u || spb.samples[i].v != sp.samples[i].v) return false;

    ParamStore p(12);
    p.create_weight("w", {8, 8}, 8, 8);
    p.create_zeros("b", {8});
    p.save((dir / "a.ckpt").string());
    ParamStore q(13);
    q.create_weight("w", {8, 8}, 8, 8);
    q.create_zeros("b", {8});
    q.load((dir / "a.ckpt").string());
    q.save((dir / "b.ckpt").string());
    return bytes(dir / "a.ckpt") == bytes(dir / "b.ckpt");
  });

  criterion(13, "propagation convexity and anchoring", [](std::string&) {
    SceneSpec spec;
    spec.width = 16;
    spec.height = 16;
    spec.seed = 13;
    Scene sc = synth_scene(spec);
    SparseDepthSamples sp = sample_random(sc.gt, 30, 13);
    DenseDepthMap depth(16, 16);
    for (int i = 0; i < 256; ++i) depth.depth[i] = 1.0 + (i % 9) * 0.7;
    Eigen::VectorXd affinity = Eigen::VectorXd::Random(16 * 16 * 8);
    DenseDepthMap refined = cspn_refine(depth, affinity, sp, 8);
    double lo = depth.depth.minCoeff(), hi = depth.depth.maxCoeff();
    for (const auto& s : sp.samples) {
      lo = std::min(lo, s.d);
      hi = std::max(hi, s.d);
    }
    for (int i = 0; i < 256; ++i)
      if (refined.depth[i] < lo - 1e-12 || refined.depth[i] > hi + 1e-12) return false;
    for (const auto& s : sp.samples)
      if (refined.at(s.v, s.u) != s.d) return false;
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(16 * 16 * 8);
    DenseDepthMap same = cspn_refine(depth, zero, sp, 5);
    DenseDepthMap anchored = depth;
    for (const auto& s : sp.samples) anchored.at(s.v, s.u) = s.d;
    return (same.depth - anchored.depth).cwiseAbs().maxCoeff() == 0.0;
  });

  if (g_failures == 0) {
    std::printf("all 13 acceptance criteria passed\n");
    return 0;
  }
  std::printf("%d acceptance criteria failed\n", g_failures);
  return 1;
}
