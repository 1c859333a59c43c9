#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace pddm {

// Dense metric depth on an image grid; depth 0 marks an invalid pixel.
struct DenseDepthMap {
  int width = 0;
  int height = 0;
  Eigen::VectorXd depth;  // row-major, height*width

  DenseDepthMap() = default;
  DenseDepthMap(int w, int h) : width(w), height(h), depth(Eigen::VectorXd::Zero(w * h)) {}

  double at(int v, int u) const { return depth[v * width + u]; }
  double& at(int v, int u) { return depth[v * width + u]; }
  bool valid_at(int v, int u) const { return at(v, u) > 0.0; }
  int count_valid() const { return static_cast<int>((depth.array() > 0.0).count()); }
};

struct SparseSample {
  int u = 0;  // column
  int v = 0;  // row
  double d = 0.0;
};

struct SparseDepthSamples {
  int width = 0;
  int height = 0;
  std::vector<SparseSample> samples;
  std::string pattern;  // sampling pattern tag
  uint64_t seed = 0;
};

// RGB image with channel-interleaved values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  Eigen::VectorXd rgb;  // row-major, height*width*3

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(Eigen::VectorXd::Zero(w * h * 3)) {}
};

}  // namespace pddm
