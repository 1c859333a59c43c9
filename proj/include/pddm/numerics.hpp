#pragma once

// Dense double-precision arrays with tape-based reverse-mode differentiation.
// Each forward op records a closure that scatters gradients back to its
// inputs; backward() runs the closures in reverse topological order.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace pddm {

using Shape = std::vector<int>;
using Vec = Eigen::VectorXd;
using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

std::string shape_str(const Shape& s);
int shape_numel(const Shape& s);

struct Node {
  Shape shape;
  Vec data;
  Vec grad;  // size 0 until first accumulation
  bool requires_grad = false;  // leaf flag
  bool track = false;          // gradient needed here or upstream
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

  void ensure_grad() {
    if (grad.size() != data.size()) grad = Vec::Zero(data.size());
  }
};

// Value-semantics handle over a shared graph node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& s, bool requires_grad = false);
  static Tensor full(const Shape& s, double v);
  static Tensor from(const Shape& s, std::vector<double> values, bool requires_grad = false);
  static Tensor from_vec(const Shape& s, Vec values, bool requires_grad = false);
  static Tensor scalar(double v);

  bool valid() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int size() const { return static_cast<int>(n_->data.size()); }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(n_->shape.size()); }

  Vec& data() { return n_->data; }
  const Vec& data() const { return n_->data; }
  Vec& grad() { n_->ensure_grad(); return n_->grad; }
  bool has_grad() const { return n_->grad.size() == n_->data.size(); }

  double operator[](int i) const { return n_->data[i]; }
  double item() const;

  bool requires_grad() const { return n_->requires_grad; }
  bool tracked() const { return n_->track; }
  void set_requires_grad(bool rg) { n_->requires_grad = rg; n_->track = rg; }
  void zero_grad() { if (n_->grad.size() > 0) n_->grad.setZero(); }

  std::shared_ptr<Node> node() const { return n_; }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}
  std::shared_ptr<Node> n_;
  friend Tensor make_op(Shape shape, Vec data, std::vector<Tensor> parents,
                        std::function<void(Node&)> backprop);
};

// Builds a non-leaf node; backprop is dropped when no parent is tracked.
Tensor make_op(Shape shape, Vec data, std::vector<Tensor> parents,
               std::function<void(Node&)> backprop);

// --- elementwise ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_const(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.01);
Tensor abs_val(const Tensor& a);
Tensor square(const Tensor& a);
// b must be a single-element tensor; broadcast divide.
Tensor div_by(const Tensor& a, const Tensor& b);

// --- shape / reduction ---
Tensor reshape(const Tensor& a, const Shape& s);
Tensor concat_last(const std::vector<Tensor>& parts);
// View [start, start+len) of the last axis.
Tensor slice_last(const Tensor& a, int start, int len);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// 1-D index select; gradient scatter-adds into x.
Tensor gather(const Tensor& x, const std::vector<int>& idx);

// --- linear algebra ---
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x: [n, f_in]; w: [f_in, f_out]; b: [f_out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor add_rowwise(const Tensor& x, const Tensor& bias);

// --- normalization / softmax ---
Tensor softmax_lastaxis(const Tensor& a);
// Normalizes over the last axis with learned affine (gamma, beta of length = last extent).
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// Normalizes each last-axis channel over all leading positions (single-image batch norm stand-in).
Tensor channel_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// --- convolution ---
// x: [h, w, c_in]; k: [kh, kw, c_in, c_out] with kh == kw in {1, 3}; b: [c_out].
// stride 1 keeps extents ("same" zero padding); stride 2 halves even extents.
Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& b, int stride = 1);
// x: [h, w, c_in]; k: [3, 3, c_out, c_in]; b: [c_out]; output [2h, 2w, c_out].
// Exact adjoint of conv2d(., k, stride 2) up to the bias term.
Tensor transposed_conv2d(const Tensor& x, const Tensor& k, const Tensor& b);
// x: [n_ch, len]; k: [3, n_ch, c_out]; b: [c_out]; same padding over len -> [c_out, len].
Tensor conv1d(const Tensor& x, const Tensor& k, const Tensor& b);

// --- autodiff driver ---
// loss must be scalar; accumulates grad on every tracked ancestor.
void backward(const Tensor& loss);

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = true;
  std::string worst;  // description of the worst-offending entry
};

// Central finite differences of f at x against the analytic gradient.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                           double step = 1e-5, double tol = 1e-5);

// --- parameters ---
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed) : seed_(seed), rng_(seed) {}

  // Glorot-uniform init over the given fans; path must be fresh.
  Tensor create_weight(const std::string& path, const Shape& s, int fan_in, int fan_out);
  Tensor create_zeros(const std::string& path, const Shape& s);
  Tensor create_ones(const std::string& path, const Shape& s);

  Tensor get(const std::string& path) const;
  bool has(const std::string& path) const { return params_.count(path) > 0; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  uint64_t seed() const { return seed_; }
  int total_size() const;

  void zero_grads();
  void save(const std::string& path) const;   // "PDDM" checkpoint, float32 payload
  void load(const std::string& path);         // replaces values of matching entries

 private:
  Tensor insert(const std::string& path, Tensor t);
  uint64_t seed_;
  std::mt19937_64 rng_;
  std::map<std::string, Tensor> params_;  // ordered for deterministic traversal
};

// Finite-difference sweep over (a subsample of) every parameter in the store.
GradCheckReport grad_check_params(const std::function<Tensor()>& loss_fn, ParamStore& params,
                                  double step = 1e-5, double tol = 1e-4,
                                  int max_entries_per_param = 0, uint64_t seed = 0);

}  // namespace pddm
