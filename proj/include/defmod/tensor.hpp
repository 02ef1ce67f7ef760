#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "defmod/rng.hpp"

namespace defmod {

using Vec = std::vector<double>;

// Dense row-major parameter matrix with gradient accumulator and Adam moments.
// Vectors are stored as rows x 1.
class ParamTensor {
 public:
  ParamTensor() = default;
  ParamTensor(std::string name, std::size_t rows, std::size_t cols = 1);

  const std::string& name() const { return name_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return value.size(); }

  double& operator()(std::size_t r, std::size_t c) { return value[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return value[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {value.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {value.data() + r * cols_, cols_}; }
  std::span<double> grad_row(std::size_t r) { return {grad.data() + r * cols_, cols_}; }

  void fill_uniform(Rng& rng, double lo, double hi);
  // Appends n zero rows (optimizer moments included).
  void append_rows(std::size_t n);
  void zero_grad();
  void reset_moments();

  Vec value;
  Vec grad;
  Vec m;
  Vec v;

 private:
  std::string name_;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
};

using ParamList = std::vector<ParamTensor*>;

// y += W x. Each output sums its terms in ascending column order.
void matvec_add(const ParamTensor& w, std::span<const double> x, std::span<double> y);
// x_grad += W^T dy
void matvec_t_add(const ParamTensor& w, std::span<const double> dy, std::span<double> x_grad);
// W.grad += dy x^T
void outer_add_grad(ParamTensor& w, std::span<const double> dy, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double cosine(std::span<const double> a, std::span<const double> b);

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log sigma(x), stable for large |x|.
inline double log_sigmoid(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

bool all_finite(std::span<const double> xs);

Vec softmax(std::span<const double> logits);
double log_sum_exp(std::span<const double> xs);

struct XentResult {
  double loss;
  Vec grad;  // softmax(logits) - onehot(target)
};

// -log softmax(logits)[target] with max-subtraction. Throws on a bad target.
XentResult softmax_xent(std::span<const double> logits, std::size_t target);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
};

void validate(const AdamConfig& cfg);

// Bias-corrected Adam update over every tensor, then clears gradients.
// A non-finite gradient throws Error(Numeric) naming the tensor before any
// tensor is touched.
void adam_step(const ParamList& params, AdamConfig& cfg);

// Plain SGD on the dense gradient, then clears gradients.
void sgd_step(const ParamList& params, double lr);

double global_grad_norm(const ParamList& params);
// Scales all gradients so the global L2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(const ParamList& params, double max_norm);

void zero_grads(const ParamList& params);

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_coords_per_tensor = 64;  // sampled when a tensor is larger
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Compares the gradients currently stored in `params` against central
// differences of `loss`. Relative error is |a-n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const std::function<double()>& loss, const ParamList& params,
                           const GradCheckOptions& opts = {});

}  // namespace defmod
