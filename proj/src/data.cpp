#include "pddm/data.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace pddm {

void SceneSpec::validate() const {
  validate_range(range);
  if (width <= 0 || height <= 0 || width % 16 != 0 || height % 16 != 0)
    throw std::invalid_argument("scene extents " + std::to_string(width) + "x" +
                                std::to_string(height) + " must be positive and divisible by 16");
  if (n_planes < 1) throw std::invalid_argument("scene needs at least one background plane");
}

namespace {

struct Shade {
  double r, g, b;
};

double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

}  // namespace

Scene synth_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const int w = spec.width, h = spec.height;
  const double lo = spec.range.d_min, span = spec.range.span();

  Scene scene;
  scene.gt = DenseDepthMap(w, h);
  scene.image = Image(w, h);
  std::vector<Shade> color(static_cast<size_t>(w * h));

  // Background: average of tilted planes covering the far part of the range.
  std::vector<std::array<double, 3>> planes;
  for (int p = 0; p < spec.n_planes; ++p) {
    double base = lo + span * (0.55 + 0.35 * uni(rng));
    double du = span * (uni(rng) - 0.5) * 0.5;
    double dv = span * (uni(rng) - 0.5) * 0.5;
    planes.push_back({base, du, dv});
  }
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      double un = w > 1 ? static_cast<double>(u) / (w - 1) : 0.0;
      double vn = h > 1 ? static_cast<double>(v) / (h - 1) : 0.0;
      double d = 0.0;
      for (const auto& pl : planes) d += pl[0] + pl[1] * (un - 0.5) + pl[2] * (vn - 0.5);
      d /= spec.n_planes;
      d = std::min(spec.range.d_max - 1e-3 * span, std::max(lo + 1e-3 * span, d));
      scene.gt.at(v, u) = d;
      color[static_cast<size_t>(v * w + u)] = {0.6, 0.6, 0.7};
    }
  }

  // Front-facing boxes, nearer than the background where painted.
  for (int b = 0; b < spec.n_boxes; ++b) {
    int bw = std::max(2, static_cast<int>(uni(rng) * w / 2));
    int bh = std::max(2, static_cast<int>(uni(rng) * h / 2));
    int bu = static_cast<int>(uni(rng) * (w - bw));
    int bv = static_cast<int>(uni(rng) * (h - bh));
    double d = lo + span * (0.1 + 0.4 * uni(rng));
    Shade c{0.3 + 0.6 * uni(rng), 0.3 + 0.6 * uni(rng), 0.3 + 0.6 * uni(rng)};
    for (int v = bv; v < bv + bh; ++v)
      for (int u = bu; u < bu + bw; ++u)
        if (d < scene.gt.at(v, u)) {
          scene.gt.at(v, u) = d;
          color[static_cast<size_t>(v * w + u)] = c;
        }
  }

  // Spheres: disc footprint with a spherical depth profile.
  for (int s = 0; s < spec.n_spheres; ++s) {
    double cu = uni(rng) * w, cv = uni(rng) * h;
    double r = (0.08 + 0.17 * uni(rng)) * std::min(w, h);
    double d0 = lo + span * (0.15 + 0.5 * uni(rng));
    Shade c{0.3 + 0.6 * uni(rng), 0.3 + 0.6 * uni(rng), 0.3 + 0.6 * uni(rng)};
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        double du = u - cu, dv = v - cv;
        double rr = du * du + dv * dv;
        if (rr >= r * r) continue;
        double d = d0 - 0.15 * span * std::sqrt(1.0 - rr / (r * r));
        d = std::max(lo + 1e-3 * span, d);
        if (d < scene.gt.at(v, u)) {
          scene.gt.at(v, u) = d;
          color[static_cast<size_t>(v * w + u)] = c;
        }
      }
  }

  // Shade from depth so the image carries the depth signal; optional texture.
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      double d = scene.gt.at(v, u);
      double shade = 1.0 - 0.8 * (d - lo) / span;
      double tex = 0.0;
      if (spec.texture)
        tex = 0.06 * std::sin(0.7 * u + 0.9 * v) +
              0.04 * std::sin(2.3 * u) * std::cos(1.7 * v);
      const Shade& c = color[static_cast<size_t>(v * w + u)];
      int base = (v * w + u) * 3;
      scene.image.rgb[base + 0] = clamp01(c.r * shade + tex);
      scene.image.rgb[base + 1] = clamp01(c.g * shade + tex);
      scene.image.rgb[base + 2] = clamp01(c.b * shade + tex);
    }
  return scene;
}

static std::vector<int> valid_indices(const DenseDepthMap& gt) {
  std::vector<int> idx;
  idx.reserve(static_cast<size_t>(gt.width * gt.height));
  for (int i = 0; i < gt.width * gt.height; ++i)
    if (gt.depth[i] > 0.0) idx.push_back(i);
  return idx;
}

SparseDepthSamples sample_random(const DenseDepthMap& gt, int n, uint64_t seed) {
  std::vector<int> idx = valid_indices(gt);
  if (n < 1 || n > static_cast<int>(idx.size()))
    throw std::invalid_argument("sample_random: requested " + std::to_string(n) + " of " +
                                std::to_string(idx.size()) + " valid pixels");
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: first n entries are a uniform sample without replacement.
  for (int i = 0; i < n; ++i) {
    std::uniform_int_distribution<int> pick(i, static_cast<int>(idx.size()) - 1);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(pick(rng))]);
  }
  SparseDepthSamples out;
  out.width = gt.width;
  out.height = gt.height;
  out.pattern = "random";
  out.seed = seed;
  for (int i = 0; i < n; ++i) {
    int p = idx[static_cast<size_t>(i)];
    out.samples.push_back({p % gt.width, p / gt.width, gt.depth[p]});
  }
  return out;
}

SparseDepthSamples sample_grid(const DenseDepthMap& gt, int stride) {
  if (stride < 1) throw std::invalid_argument("sample_grid: stride must be >= 1");
  SparseDepthSamples out;
  out.width = gt.width;
  out.height = gt.height;
  out.pattern = "grid";
  for (int v = 0; v < gt.height; v += stride)
    for (int u = 0; u < gt.width; u += stride)
      if (gt.valid_at(v, u)) out.samples.push_back({u, v, gt.at(v, u)});
  return out;
}

static double bias_weight(int row, int height, BiasMode mode, double alpha) {
  double d = 0.0;
  switch (mode) {
    case BiasMode::bottom: d = row; break;
    case BiasMode::top: d = height - row; break;
    case BiasMode::middle: d = std::abs(row - height / 2.0); break;
  }
  return 1.0 / (std::pow(d, alpha) + 1.0);
}

SparseDepthSamples sample_biased(const DenseDepthMap& gt, int n, BiasMode mode, double alpha,
                                 uint64_t seed) {
  std::vector<int> idx = valid_indices(gt);
  if (n < 1 || n > static_cast<int>(idx.size()))
    throw std::invalid_argument("sample_biased: requested " + std::to_string(n) + " of " +
                                std::to_string(idx.size()) + " valid pixels");
  std::vector<double> w(idx.size());
  double total = 0.0;
  for (size_t i = 0; i < idx.size(); ++i) {
    w[i] = bias_weight(idx[i] / gt.width, gt.height, mode, alpha);
    total += w[i];
  }
  std::mt19937_64 rng(seed);
  SparseDepthSamples out;
  out.width = gt.width;
  out.height = gt.height;
  out.pattern = mode == BiasMode::top ? "top" : (mode == BiasMode::middle ? "middle" : "bottom");
  out.seed = seed;
  for (int k = 0; k < n; ++k) {
    std::uniform_real_distribution<double> uni(0.0, total);
    double r = uni(rng);
    size_t pick = 0;
    double cum = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
      if (w[i] <= 0.0) continue;
      cum += w[i];
      pick = i;
      if (r < cum) break;
    }
    int p = idx[pick];
    out.samples.push_back({p % gt.width, p / gt.width, gt.depth[p]});
    total -= w[pick];
    w[pick] = 0.0;  // sequential renormalization
  }
  return out;
}

std::vector<double> biased_row_marginals(const DenseDepthMap& gt, BiasMode mode, double alpha) {
  std::vector<double> rows(static_cast<size_t>(gt.height), 0.0);
  double total = 0.0;
  for (int v = 0; v < gt.height; ++v)
    for (int u = 0; u < gt.width; ++u)
      if (gt.valid_at(v, u)) {
        double w = bias_weight(v, gt.height, mode, alpha);
        rows[static_cast<size_t>(v)] += w;
        total += w;
      }
  for (double& r : rows) r /= total;
  return rows;
}

SparseDepthSamples add_noise(const SparseDepthSamples& samples, double sigma, double p_corrupt,
                             uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, sigma);
  SparseDepthSamples out = samples;
  out.pattern = samples.pattern + "+noise";
  for (auto& s : out.samples)
    if (uni(rng) < p_corrupt) s.d = std::max(1e-6, s.d + gauss(rng));
  return out;
}

DenseDepthMap rasterize(const SparseDepthSamples& samples) {
  DenseDepthMap out(samples.width, samples.height);
  for (const auto& s : samples.samples) out.at(s.v, s.u) = s.d;
  return out;
}

MetricReport compute_metrics(const DenseDepthMap& pred, const DenseDepthMap& gt) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw std::invalid_argument("compute_metrics: extent mismatch");
  MetricReport r;
  double s_abs_rel = 0, s_sq = 0, s_abs = 0, s_sq_rel = 0;
  double s_log10 = 0, s_logsq = 0, s_isq = 0, s_iabs = 0;
  int n_log = 0;
  for (int i = 0; i < gt.width * gt.height; ++i) {
    double g = gt.depth[i];
    if (!(g > 0.0)) continue;
    double p = pred.depth[i];
    double e = g - p;
    ++r.n_valid;
    s_abs_rel += std::abs(e) / g;
    s_sq += e * e;
    s_abs += std::abs(e);
    s_sq_rel += e * e / g;
    if (p > 0.0) {
      double ratio = std::max(p / g, g / p);
      if (ratio < 1.25) ++r.delta1;
      if (ratio < 1.25 * 1.25) ++r.delta2;
      if (ratio < 1.25 * 1.25 * 1.25) ++r.delta3;
      s_log10 += std::abs(std::log10(p) - std::log10(g));
      double dl = std::log(p) - std::log(g);
      s_logsq += dl * dl;
      double ie = 1.0 / g - 1.0 / p;
      s_isq += ie * ie;
      s_iabs += std::abs(ie);
      ++n_log;
    } else {
      ++r.n_excluded;
    }
  }
  if (r.n_valid == 0) throw std::invalid_argument("compute_metrics: no valid ground-truth pixels");
  double n = r.n_valid;
  r.abs_rel = s_abs_rel / n;
  r.rmse = std::sqrt(s_sq / n);
  r.mae = s_abs / n;
  r.sq_rel = s_sq_rel / n;
  r.delta1 /= n;
  r.delta2 /= n;
  r.delta3 /= n;
  if (n_log > 0) {
    r.log10 = s_log10 / n_log;
    r.rmse_log = std::sqrt(s_logsq / n_log);
    r.irmse = std::sqrt(s_isq / n_log);
    r.imae = s_iabs / n_log;
  }
  return r;
}

// --- file formats ---

namespace {
template <typename T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
}  // namespace

void write_dmap(const std::string& path, const DenseDepthMap& map) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("dmap: cannot open '" + path + "' for writing");
  os.write("DMAP", 4);
  write_raw<uint8_t>(os, 1);
  write_raw<uint32_t>(os, static_cast<uint32_t>(map.width));
  write_raw<uint32_t>(os, static_cast<uint32_t>(map.height));
  for (int i = 0; i < map.width * map.height; ++i)
    write_raw<float>(os, static_cast<float>(map.depth[i]));
}

DenseDepthMap read_dmap(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("dmap: cannot open '" + path + "'");
  auto fail_at = [&](const std::string& what) {
    throw std::runtime_error("dmap: " + what + " in '" + path + "' at byte offset " +
                             std::to_string(static_cast<long long>(is.tellg())));
  };
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DMAP", 4) != 0)
    throw std::runtime_error("dmap: bad magic in '" + path + "'");
  uint8_t version = 0;
  is.read(reinterpret_cast<char*>(&version), 1);
  if (!is || version != 1) fail_at("unsupported version");
  uint32_t w = 0, h = 0;
  is.read(reinterpret_cast<char*>(&w), 4);
  is.read(reinterpret_cast<char*>(&h), 4);
  if (!is || w == 0 || h == 0) fail_at("truncated or empty header");
  DenseDepthMap map(static_cast<int>(w), static_cast<int>(h));
  for (uint32_t i = 0; i < w * h; ++i) {
    float v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) fail_at("truncated payload");
    map.depth[static_cast<int>(i)] = static_cast<double>(v);
  }
  return map;
}

void write_sparse_csv(const std::string& path, const SparseDepthSamples& samples) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("sparse csv: cannot open '" + path + "' for writing");
  os << "u,v,d\n";
  char buf[64];
  for (const auto& s : samples.samples) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9g\n", s.u, s.v, s.d);
    os << buf;
  }
}

SparseDepthSamples read_sparse_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("sparse csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line) || line != "u,v,d")
    throw std::runtime_error("sparse csv: expected header 'u,v,d' in '" + path + "'");
  SparseDepthSamples out;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    SparseSample s;
    char extra;
    if (std::sscanf(line.c_str(), "%d,%d,%lf%c", &s.u, &s.v, &s.d, &extra) != 3)
      throw std::runtime_error("sparse csv: malformed line " + std::to_string(line_no) + " in '" +
                               path + "'");
    if (s.u < 0 || s.v < 0)
      throw std::runtime_error("sparse csv: negative coordinate at line " + std::to_string(line_no));
    if (!(s.d > 0.0))
      throw std::runtime_error("sparse csv: non-positive depth at line " + std::to_string(line_no));
    out.samples.push_back(s);
    out.width = std::max(out.width, s.u + 1);
    out.height = std::max(out.height, s.v + 1);
  }
  return out;
}

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("ppm: cannot open '" + path + "' for writing");
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (int i = 0; i < img.width * img.height * 3; ++i) {
    auto b = static_cast<unsigned char>(std::lround(255.0 * std::min(1.0, std::max(0.0, img.rgb[i]))));
    os.put(static_cast<char>(b));
  }
}

Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("ppm: cannot open '" + path + "'");
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("ppm: unsupported header in '" + path + "'");
  is.get();  // single whitespace after maxval
  std::vector<char> raw(static_cast<size_t>(w) * h * 3);
  is.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!is) throw std::runtime_error("ppm: truncated pixel data in '" + path + "'");
  Image img;
  img.width = w;
  img.height = h;
  img.rgb = Vec(w * h * 3);
  for (size_t i = 0; i < raw.size(); ++i)
    img.rgb[static_cast<int>(i)] = static_cast<unsigned char>(raw[i]) / 255.0;
  return img;
}

void write_depth_pgm(const std::string& path, const DenseDepthMap& map) {
  double mx = map.depth.maxCoeff();
  double scale = mx > 0 ? mx / 65535.0 : 1.0;  // meters per gray level
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("pgm: cannot open '" + path + "' for writing");
  os << "P5\n" << map.width << " " << map.height << "\n65535\n";
  for (int i = 0; i < map.width * map.height; ++i) {
    auto v = static_cast<uint16_t>(std::lround(std::min(65535.0, map.depth[i] / scale)));
    os.put(static_cast<char>(v >> 8));  // big-endian per PGM convention
    os.put(static_cast<char>(v & 0xff));
  }
  std::ofstream side(path + ".scale.txt");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", scale);
  side << "meters_per_gray_level = " << buf << "\n";
}

}  // namespace pddm
