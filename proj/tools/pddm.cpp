// Command-line harness: scene generation, sparse sampling, training,
// evaluation, discretization inspection, and gradient checking.

#include "pddm/config.hpp"
#include "pddm/losses.hpp"
#include "pddm/optim.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace pddm;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "Run configuration file");
  cmd->add_option("--set", o.overrides, "Override a config key (section.key=value)");
  cmd->add_option("--seed", o.seed, "Master seed")->each([&o](const std::string&) { o.seed_set = true; });
  cmd->add_option("--out", o.out_dir, "Output directory");
}

RunConfig resolve_config(const CommonOpts& o) {
  RunConfig cfg;
  if (!o.config_path.empty()) cfg = load_config(o.config_path);
  for (const std::string& kv : o.overrides) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed_set) cfg.seed = o.seed;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  cfg.validate();
  return cfg;
}

// Derived sub-seeds so each consumer of randomness is independent.
uint64_t sub_seed(uint64_t master, uint64_t stream) { return master * 0x9E3779B97F4A7C15ull + stream; }

void write_manifest(const fs::path& path, const RunConfig& cfg, const std::string& command) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
  os << "# resolved configuration for `pddm " << command << "`\n" << render_config(cfg);
}

Scene make_scene(const RunConfig& cfg) {
  SceneSpec spec = cfg.scene;
  spec.seed = sub_seed(cfg.seed, 1);
  return synth_scene(spec);
}

SparseDepthSamples make_samples(const RunConfig& cfg, const DenseDepthMap& gt) {
  SparseDepthSamples sp;
  uint64_t s = sub_seed(cfg.seed, 2);
  if (cfg.pattern == "random") sp = sample_random(gt, cfg.n_samples, s);
  else if (cfg.pattern == "grid") sp = sample_grid(gt, cfg.grid_stride);
  else {
    BiasMode mode = cfg.pattern == "top"      ? BiasMode::top
                    : cfg.pattern == "middle" ? BiasMode::middle
                                              : BiasMode::bottom;
    sp = sample_biased(gt, cfg.n_samples, mode, cfg.alpha, s);
  }
  if (cfg.noise_sigma > 0.0) sp = add_noise(sp, cfg.noise_sigma, cfg.noise_p, sub_seed(cfg.seed, 3));
  return sp;
}

void write_metrics_row(std::ostream& os, const std::string& label, const MetricReport& m) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%d\n",
                label.c_str(), m.rmse, m.mae, m.abs_rel, m.sq_rel, m.log10, m.rmse_log, m.delta1,
                m.delta2, m.delta3, m.irmse, m.imae, m.n_valid, m.n_excluded);
  os << buf;
}

int cmd_gen(const CommonOpts& o) {
  RunConfig cfg = resolve_config(o);
  fs::create_directories(cfg.out_dir);
  Scene scene = make_scene(cfg);
  write_ppm((fs::path(cfg.out_dir) / "scene.ppm").string(), scene.image);
  write_dmap((fs::path(cfg.out_dir) / "gt.dmap").string(), scene.gt);
  write_manifest(fs::path(cfg.out_dir) / "manifest.txt", cfg, "gen");
  std::cout << "wrote scene.ppm, gt.dmap, manifest.txt to " << cfg.out_dir << " ("
            << cfg.scene.width << "x" << cfg.scene.height << ")\n";
  return 0;
}

int cmd_sample(const CommonOpts& o, const std::string& gt_path) {
  RunConfig cfg = resolve_config(o);
  fs::create_directories(cfg.out_dir);
  DenseDepthMap gt = read_dmap(gt_path);
  SparseDepthSamples sp = make_samples(cfg, gt);
  std::string out = (fs::path(cfg.out_dir) / "sparse.csv").string();
  write_sparse_csv(out, sp);
  DepthRange rel = relative_range(sp);
  std::cout << sp.samples.size() << " samples (" << cfg.pattern << ") -> " << out
            << "; relative range [" << rel.d_min << ", " << rel.d_max << "]\n";
  return 0;
}

int cmd_train(const CommonOpts& o) {
  RunConfig cfg = resolve_config(o);
  fs::create_directories(cfg.out_dir);
  Scene scene = make_scene(cfg);
  SparseDepthSamples sp = make_samples(cfg, scene.gt);
  write_ppm((fs::path(cfg.out_dir) / "scene.ppm").string(), scene.image);
  write_dmap((fs::path(cfg.out_dir) / "gt.dmap").string(), scene.gt);
  write_sparse_csv((fs::path(cfg.out_dir) / "sparse.csv").string(), sp);
  write_manifest(fs::path(cfg.out_dir) / "manifest.txt", cfg, "train");

  ParamStore params(sub_seed(cfg.seed, 4));
  Model model(params, cfg.model);
  LossWeights weights = LossWeights::make(cfg.model.stages, 0.1);
  Adam opt(params, cfg.lr);
  uint64_t bim_seed = sub_seed(cfg.seed, 5);
  uint64_t chamfer_seed = sub_seed(cfg.seed, 6);

  std::ofstream log(fs::path(cfg.out_dir) / "loss_log.csv");
  log << "step,total_loss";
  for (int l = 1; l <= cfg.model.stages; ++l) log << ",rmse_stage" << l;
  log << ",rmse_refined\n";

  for (int step = 1; step <= cfg.steps; ++step) {
    ForwardResult fr = model.forward(scene.image, sp, bim_seed);
    Tensor loss = multi_scale_loss_t(fr, scene.gt, weights, 2048, chamfer_seed);
    double lv = loss.item();
    if (!std::isfinite(lv)) {
      std::cerr << "error: non-finite loss at step " << step << "; last finite step was "
                << step - 1 << "\n";
      return 1;
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%d,%.9g", step, lv);
    log << buf;
    for (const StageOutput& st : fr.stages) {
      DenseDepthMap pred(st.w, st.h);
      pred.depth = st.depth.data();
      // Every stage is scored at full resolution so the per-stage columns
      // are directly comparable.
      DenseDepthMap up = upsample_nearest(pred, scene.gt.width / st.w);
      std::snprintf(buf, sizeof(buf), ",%.9g", compute_metrics(up, scene.gt).rmse);
      log << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.9g", compute_metrics(fr.refined_depth, scene.gt).rmse);
    log << buf << "\n";
    backward(loss);
    opt.step();
    if (step == 1 || step % 50 == 0 || step == cfg.steps)
      std::cout << "step " << step << "  loss " << lv << "\n";
  }
  params.save((fs::path(cfg.out_dir) / "model.ckpt").string());
  std::cout << "wrote model.ckpt and loss_log.csv to " << cfg.out_dir << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& ckpt, const std::string& gt_path,
             const std::string& img_path, const std::string& sparse_path, bool no_sample) {
  RunConfig cfg = resolve_config(o);
  if (no_sample)
    throw std::invalid_argument(
        "evaluation without sparse samples is not supported: the model requires sparse depth input");
  fs::create_directories(cfg.out_dir);
  DenseDepthMap gt = read_dmap(gt_path);
  Image img = read_ppm(img_path);
  SparseDepthSamples sp = read_sparse_csv(sparse_path);
  // The CSV stores only (u,v,d); the grid extents come from the gt map.
  sp.width = gt.width;
  sp.height = gt.height;

  ParamStore params(sub_seed(cfg.seed, 4));
  Model model(params, cfg.model);
  if (!ckpt.empty()) params.load(ckpt);
  ForwardResult fr = model.forward(img, sp, sub_seed(cfg.seed, 5));

  std::ofstream mcsv(fs::path(cfg.out_dir) / "metrics.csv");
  mcsv << "stage,rmse,mae,abs_rel,sq_rel,log10,rmse_log,delta1,delta2,delta3,irmse,imae,"
          "n_valid,n_excluded\n";
  double prev_rmse = -1.0;
  bool monotone = true;
  for (const StageOutput& st : fr.stages) {
    DenseDepthMap pred(st.w, st.h);
    pred.depth = st.depth.data();
    // Metrics are computed at full resolution (nearest upsample) so stages
    // are comparable against the same ground truth.
    MetricReport m = compute_metrics(upsample_nearest(pred, gt.width / st.w), gt);
    write_metrics_row(mcsv, "stage" + std::to_string(st.stage), m);
    std::string base = (fs::path(cfg.out_dir) / ("stage" + std::to_string(st.stage))).string();
    write_dmap(base + ".dmap", pred);
    write_depth_pgm(base + ".pgm", pred);
    if (prev_rmse >= 0.0 && m.rmse > prev_rmse) monotone = false;
    prev_rmse = m.rmse;
  }
  MetricReport mr = compute_metrics(fr.refined_depth, gt);
  write_metrics_row(mcsv, "refined", mr);
  std::string base = (fs::path(cfg.out_dir) / "refined").string();
  write_dmap(base + ".dmap", fr.refined_depth);
  write_depth_pgm(base + ".pgm", fr.refined_depth);
  if (!monotone) std::cerr << "warning: per-stage RMSE is not non-increasing\n";
  std::cout << "refined rmse " << mr.rmse << "  abs_rel " << mr.abs_rel << "  delta1 " << mr.delta1
            << "; wrote metrics.csv and per-stage maps to " << cfg.out_dir << "\n";
  return 0;
}

int cmd_discretize(const CommonOpts& o, const std::string& method, int n, const std::string& ckpt,
                   const std::string& gt_path, const std::string& img_path,
                   const std::string& sparse_path) {
  RunConfig cfg = resolve_config(o);
  fs::create_directories(cfg.out_dir);
  std::ofstream os(fs::path(cfg.out_dir) / "centers.csv");
  char buf[32];
  if (method == "ud" || method == "sid") {
    DepthRange range = cfg.model.dataset_range;
    BinPartition part =
        method == "ud" ? uniform_discretization(n, range) : sid_discretization(n, range);
    os << "# method=" << method << " n=" << n << " range=[" << part.range.d_min << ","
       << part.range.d_max << "]";
    if (method == "sid" && part.range.d_min != range.d_min)
      os << " (range shifted by +1: log spacing requires a positive lower bound)";
    os << "\n";
    std::vector<double> centers = bin_centers(part);
    for (size_t i = 0; i < centers.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.9g", centers[i]);
      os << (i ? "," : "") << buf;
    }
    os << "\n";
  } else if (method == "learned") {
    if (ckpt.empty() || gt_path.empty() || img_path.empty() || sparse_path.empty())
      throw std::invalid_argument(
          "discretize --method learned needs --checkpoint, --gt, --image, and --sparse");
    DenseDepthMap gt = read_dmap(gt_path);
    Image img = read_ppm(img_path);
    SparseDepthSamples sp = read_sparse_csv(sparse_path);
    sp.width = gt.width;
    sp.height = gt.height;
    ParamStore params(sub_seed(cfg.seed, 4));
    Model model(params, cfg.model);
    params.load(ckpt);
    ForwardResult fr = model.forward(img, sp, sub_seed(cfg.seed, 5));
    os << "# method=learned stages=" << fr.stages.size() << " relative range=[" << fr.rel_range.d_min
       << "," << fr.rel_range.d_max << "]\n";
    for (const StageOutput& st : fr.stages) {
      os << "stage" << st.stage;
      for (int i = 0; i < st.centers.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.9g", st.centers[i]);
        os << "," << buf;
      }
      os << "\n";
    }
  } else {
    throw std::invalid_argument("discretize: unknown method '" + method + "'");
  }
  std::cout << "wrote centers.csv to " << cfg.out_dir << "\n";
  return 0;
}

int cmd_gradcheck(const CommonOpts& o, bool inject_error, int max_entries) {
  RunConfig cfg = resolve_config(o);
  // Tiny defaults unless the caller overrides them: full-size sweeps are
  // pointlessly slow for a finite-difference pass.
  if (o.config_path.empty() && o.overrides.empty()) {
    cfg.model.dim = 8;
    cfg.model.stages = 3;
    cfg.model.n_final = 8;
    cfg.model.n_fixed = 32;
    cfg.model.heads = 2;
    cfg.model.enc_widths = {16, 8, 8};
    cfg.model.dec_widths = {8, 8};
    cfg.model.ppb_channels = 8;
    cfg.scene.width = 16;
    cfg.scene.height = 16;
    cfg.n_samples = 40;
  }
  cfg.validate();
  Scene scene = make_scene(cfg);
  SparseDepthSamples sp = make_samples(cfg, scene.gt);
  ParamStore params(sub_seed(cfg.seed, 4));
  Model model(params, cfg.model);
  LossWeights weights = LossWeights::make(cfg.model.stages, 0.1);
  uint64_t bim_seed = sub_seed(cfg.seed, 5);
  Tensor probe = inject_error ? params.all().begin()->second : Tensor();
  auto loss_fn = [&]() {
    ForwardResult fr = model.forward(scene.image, sp, bim_seed);
    Tensor loss = multi_scale_loss_t(fr, scene.gt, weights, 0, 0);
    // Test hook: adds a term the tape cannot see, so finite differences and
    // the analytic gradient must disagree.
    if (inject_error) loss = add(loss, Tensor::scalar(0.5 * probe.data()[0]));
    return loss;
  };
  GradCheckReport rep = grad_check_params(loss_fn, params, 1e-6, 1e-3, max_entries,
                                          sub_seed(cfg.seed, 7));
  std::cout << (rep.pass ? "PASS" : "FAIL") << "  max rel err " << rep.max_rel_err << "  worst "
            << rep.worst << "\n";
  return rep.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive sparse-to-dense depth completion toolkit"};
  app.require_subcommand(1);

  CommonOpts gen_o, sample_o, train_o, eval_o, disc_o, gc_o;

  CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic scene (image + gt depth)");
  add_common(gen, gen_o);

  CLI::App* sample = app.add_subcommand("sample", "Draw sparse depth samples from a gt map");
  add_common(sample, sample_o);
  std::string sample_gt;
  sample->add_option("--gt", sample_gt, "Ground-truth DMAP file")->required();

  CLI::App* train = app.add_subcommand("train", "Train on one synthetic scene");
  add_common(train, train_o);

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a scene");
  add_common(eval, eval_o);
  std::string eval_ckpt, eval_gt, eval_img, eval_sparse;
  bool eval_nosample = false;
  eval->add_option("--checkpoint", eval_ckpt, "Parameter checkpoint");
  eval->add_option("--gt", eval_gt, "Ground-truth DMAP file")->required();
  eval->add_option("--image", eval_img, "Scene PPM image")->required();
  eval->add_option("--sparse", eval_sparse, "Sparse samples CSV");
  eval->add_flag("--no-sample", eval_nosample, "Evaluate without sparse input (rejected)");

  CLI::App* disc = app.add_subcommand("discretize", "Emit bin centers (ud / sid / learned)");
  add_common(disc, disc_o);
  std::string disc_method = "ud", disc_ckpt, disc_gt, disc_img, disc_sparse;
  int disc_n = 64;
  disc->add_option("--method", disc_method, "ud, sid, or learned");
  disc->add_option("--n", disc_n, "Bin count for ud/sid");
  disc->add_option("--checkpoint", disc_ckpt, "Checkpoint (learned mode)");
  disc->add_option("--gt", disc_gt, "Ground-truth DMAP (learned mode)");
  disc->add_option("--image", disc_img, "Scene PPM (learned mode)");
  disc->add_option("--sparse", disc_sparse, "Sparse CSV (learned mode)");

  CLI::App* gc = app.add_subcommand("gradcheck", "Finite-difference check of the whole model");
  add_common(gc, gc_o);
  bool gc_inject = false;
  int gc_max_entries = 6;
  gc->add_flag("--inject-grad-error", gc_inject, "Negative-control test hook");
  gc->add_option("--max-entries", gc_max_entries,
                 "Entries checked per parameter tensor (0 = all)");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen(gen_o);
    if (sample->parsed()) return cmd_sample(sample_o, sample_gt);
    if (train->parsed()) return cmd_train(train_o);
    if (eval->parsed())
      return cmd_eval(eval_o, eval_ckpt, eval_gt, eval_img, eval_sparse, eval_nosample);
    if (disc->parsed())
      return cmd_discretize(disc_o, disc_method, disc_n, disc_ckpt, disc_gt, disc_img, disc_sparse);
    if (gc->parsed()) return cmd_gradcheck(gc_o, gc_inject, gc_max_entries);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
