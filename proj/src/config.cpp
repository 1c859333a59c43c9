#include "pddm/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pddm {

void RunConfig::validate() const {
  model.validate();
  scene.validate();
  if (steps < 0) throw std::invalid_argument("config: steps must be non-negative");
  if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
  if (pattern != "random" && pattern != "grid" && pattern != "top" && pattern != "middle" &&
      pattern != "bottom")
    throw std::invalid_argument("config: unknown sampling pattern '" + pattern + "'");
  int factor = model.downsample_factor();
  if (scene.width % factor != 0 || scene.height % factor != 0)
    throw std::invalid_argument("config: scene extents must be divisible by " +
                                std::to_string(factor));
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(trim(item)));
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  ModelConfig& m = cfg.model;
  SceneSpec& sc = cfg.scene;
  try {
    if (key == "model.dim") m.dim = std::stoi(value);
    else if (key == "model.stages") m.stages = std::stoi(value);
    else if (key == "model.n_final") m.n_final = std::stoi(value);
    else if (key == "model.heads") m.heads = std::stoi(value);
    else if (key == "model.ffn_mult") m.ffn_mult = std::stoi(value);
    else if (key == "model.n_fixed") m.n_fixed = std::stoi(value);
    else if (key == "model.cspn_iters") m.cspn_iters = std::stoi(value);
    else if (key == "model.raw_coords") m.raw_coords = value == "true" || value == "1";
    else if (key == "model.enc_widths") m.enc_widths = parse_int_list(value);
    else if (key == "model.dec_widths") m.dec_widths = parse_int_list(value);
    else if (key == "model.ppb_channels") m.ppb_channels = std::stoi(value);
    else if (key == "model.use_relative_range") m.use_relative_range = value == "true" || value == "1";
    else if (key == "scene.width") sc.width = std::stoi(value);
    else if (key == "scene.height") sc.height = std::stoi(value);
    else if (key == "scene.d_min") { sc.range.d_min = std::stod(value); m.dataset_range.d_min = std::stod(value); }
    else if (key == "scene.d_max") { sc.range.d_max = std::stod(value); m.dataset_range.d_max = std::stod(value); }
    else if (key == "scene.planes") sc.n_planes = std::stoi(value);
    else if (key == "scene.boxes") sc.n_boxes = std::stoi(value);
    else if (key == "scene.spheres") sc.n_spheres = std::stoi(value);
    else if (key == "scene.texture") sc.texture = value == "true" || value == "1";
    else if (key == "train.steps") cfg.steps = std::stoi(value);
    else if (key == "train.lr") cfg.lr = std::stod(value);
    else if (key == "sample.pattern") cfg.pattern = value;
    else if (key == "sample.n") cfg.n_samples = std::stoi(value);
    else if (key == "sample.stride") cfg.grid_stride = std::stoi(value);
    else if (key == "sample.alpha") cfg.alpha = std::stod(value);
    else if (key == "sample.noise_sigma") cfg.noise_sigma = std::stod(value);
    else if (key == "sample.noise_p") cfg.noise_p = std::stod(value);
    else if (key == "run.seed") cfg.seed = std::stoull(value);
    else if (key == "run.out") cfg.out_dir = value;
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad value '" + value + "' for key '" + key + "'");
  }
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
  RunConfig cfg;
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: malformed line " + std::to_string(line_no) + " in '" +
                               path + "'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    apply_override(cfg, section.empty() ? key : section + "." + key, value);
  }
  return cfg;
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream os;
  const ModelConfig& m = cfg.model;
  os << "[model]\n"
     << "dim = " << m.dim << "\nstages = " << m.stages << "\nn_final = " << m.n_final
     << "\nheads = " << m.heads << "\nffn_mult = " << m.ffn_mult << "\nn_fixed = " << m.n_fixed
     << "\ncspn_iters = " << m.cspn_iters << "\nraw_coords = " << (m.raw_coords ? 1 : 0)
     << "\nenc_widths = " << join(m.enc_widths) << "\ndec_widths = " << join(m.dec_widths)
     << "\nppb_channels = " << m.ppb_channels
     << "\nuse_relative_range = " << (m.use_relative_range ? 1 : 0) << "\n\n[scene]\n"
     << "width = " << cfg.scene.width << "\nheight = " << cfg.scene.height
     << "\nd_min = " << cfg.scene.range.d_min << "\nd_max = " << cfg.scene.range.d_max
     << "\nplanes = " << cfg.scene.n_planes << "\nboxes = " << cfg.scene.n_boxes
     << "\nspheres = " << cfg.scene.n_spheres << "\ntexture = " << (cfg.scene.texture ? 1 : 0)
     << "\n\n[train]\nsteps = " << cfg.steps << "\nlr = " << cfg.lr << "\n\n[sample]\n"
     << "pattern = " << cfg.pattern << "\nn = " << cfg.n_samples
     << "\nstride = " << cfg.grid_stride << "\nalpha = " << cfg.alpha
     << "\nnoise_sigma = " << cfg.noise_sigma << "\nnoise_p = " << cfg.noise_p
     << "\n\n[run]\nseed = " << cfg.seed << "\nout = " << cfg.out_dir << "\n";
  return os.str();
}

}  // namespace pddm
