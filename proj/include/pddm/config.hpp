#pragma once

// Plain-text `key = value` run configuration with [section] headers, plus
// the resolved-config manifest written next to every run's outputs.

#include "pddm/data.hpp"
#include "pddm/modulating.hpp"

#include <map>
#include <string>

namespace pddm {

struct RunConfig {
  ModelConfig model;
  SceneSpec scene;
  // optimizer
  int steps = 500;
  double lr = 3e-3;
  // sampling
  std::string pattern = "random";
  int n_samples = 500;
  int grid_stride = 8;
  double alpha = 0.35;
  double noise_sigma = 0.0;     // 0 disables corruption
  double noise_p = 0.5;
  // seeds
  uint64_t seed = 0;            // master seed (params, samplers, BIM resampling)
  std::string out_dir = "out";

  void validate() const;
};

// Parses a config file; unknown keys are an error. Throws on malformed lines.
RunConfig load_config(const std::string& path);

// Applies a single "section.key=value" override.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Serializes the resolved config in the same file format.
std::string render_config(const RunConfig& cfg);

}  // namespace pddm
