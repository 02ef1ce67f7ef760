#include "defmod/tensor.hpp"

#include <algorithm>
#include <numeric>

#include "defmod/error.hpp"

namespace defmod {

void ParamTensor::append_rows(std::size_t n) {
  rows_ += n;
  for (auto* buf : {&value, &grad, &m, &v}) buf->resize(rows_ * cols_, 0.0);
}

ParamTensor::ParamTensor(std::string name, std::size_t rows, std::size_t cols)
    : value(rows * cols, 0.0),
      grad(rows * cols, 0.0),
      m(rows * cols, 0.0),
      v(rows * cols, 0.0),
      name_(std::move(name)),
      rows_(rows),
      cols_(cols) {}

void ParamTensor::fill_uniform(Rng& rng, double lo, double hi) {
  for (auto& x : value) x = rng.uniform(lo, hi);
}

void ParamTensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

void ParamTensor::reset_moments() {
  std::fill(m.begin(), m.end(), 0.0);
  std::fill(v.begin(), v.end(), 0.0);
}

void matvec_add(const ParamTensor& w, std::span<const double> x, std::span<double> y) {
  require(x.size() == w.cols() && y.size() == w.rows(), ErrorCode::Usage,
          "matvec dimension mismatch for " + w.name());
  const std::size_t cols = w.cols();
  const double* p = w.value.data();
  for (std::size_t r = 0; r < w.rows(); ++r, p += cols) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += p[j] * x[j];
    y[r] += s;
  }
}

void matvec_t_add(const ParamTensor& w, std::span<const double> dy, std::span<double> x_grad) {
  const std::size_t cols = w.cols();
  const double* p = w.value.data();
  for (std::size_t r = 0; r < w.rows(); ++r, p += cols) {
    const double d = dy[r];
    if (d == 0.0) continue;
    for (std::size_t j = 0; j < cols; ++j) x_grad[j] += p[j] * d;
  }
}

void outer_add_grad(ParamTensor& w, std::span<const double> dy, std::span<const double> x) {
  const std::size_t cols = w.cols();
  double* g = w.grad.data();
  for (std::size_t r = 0; r < w.rows(); ++r, g += cols) {
    const double d = dy[r];
    if (d == 0.0) continue;
    for (std::size_t j = 0; j < cols; ++j) g[j] += d * x[j];
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

Vec softmax(std::span<const double> logits) {
  Vec p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (auto& x : p) {
    x = std::exp(x - mx);
    z += x;
  }
  for (auto& x : p) x /= z;
  return p;
}

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return -INFINITY;
  const double mx = *std::max_element(xs.begin(), xs.end());
  double z = 0.0;
  for (double x : xs) z += std::exp(x - mx);
  return mx + std::log(z);
}

XentResult softmax_xent(std::span<const double> logits, std::size_t target) {
  require(target < logits.size(), ErrorCode::Usage,
          "softmax_xent target " + std::to_string(target) + " out of range " + std::to_string(logits.size()));
  const double lse = log_sum_exp(logits);
  XentResult r{lse - logits[target], Vec(logits.size())};
  for (std::size_t i = 0; i < logits.size(); ++i) r.grad[i] = std::exp(logits[i] - lse);
  r.grad[target] -= 1.0;
  return r;
}

void validate(const AdamConfig& cfg) {
  require(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1, ErrorCode::Usage,
          "Adam betas must lie in [0, 1)");
  require(cfg.eps > 0, ErrorCode::Usage, "Adam epsilon must be positive");
  require(cfg.lr > 0, ErrorCode::Usage, "learning rate must be positive");
}

void adam_step(const ParamList& params, AdamConfig& cfg) {
  validate(cfg);
  for (const auto* p : params)
    require(all_finite(p->grad), ErrorCode::Numeric, "non-finite gradient in tensor " + p->name());
  ++cfg.step;
  const double t = static_cast<double>(cfg.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double g = p->grad[i];
      p->m[i] = cfg.beta1 * p->m[i] + (1.0 - cfg.beta1) * g;
      p->v[i] = cfg.beta2 * p->v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = p->m[i] / c1;
      const double vhat = p->v[i] / c2;
      p->value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    require(all_finite(p->value), ErrorCode::Numeric, "non-finite value after update in tensor " + p->name());
    p->zero_grad();
  }
}

void sgd_step(const ParamList& params, double lr) {
  for (const auto* p : params)
    require(all_finite(p->grad), ErrorCode::Numeric, "non-finite gradient in tensor " + p->name());
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->size(); ++i) p->value[i] -= lr * p->grad[i];
    p->zero_grad();
  }
}

double global_grad_norm(const ParamList& params) {
  double s = 0.0;
  for (const auto* p : params)
    for (double g : p->grad) s += g * g;
  return std::sqrt(s);
}

double clip_grad_norm(const ParamList& params, double max_norm) {
  const double n = global_grad_norm(params);
  if (n > max_norm && n > 0.0) {
    const double scale = max_norm / n;
    for (auto* p : params)
      for (auto& g : p->grad) g *= scale;
  }
  return n;
}

void zero_grads(const ParamList& params) {
  for (auto* p : params) p->zero_grad();
}

GradCheckResult grad_check(const std::function<double()>& loss, const ParamList& params,
                           const GradCheckOptions& opts) {
  GradCheckResult res;
  Rng rng(opts.seed);
  for (auto* p : params) {
    std::vector<std::size_t> coords(p->size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > opts.max_coords_per_tensor) {
      for (std::size_t i = 0; i < opts.max_coords_per_tensor; ++i) {
        const auto j = i + rng.below(coords.size() - i);
        std::swap(coords[i], coords[j]);
      }
      coords.resize(opts.max_coords_per_tensor);
    }
    for (auto idx : coords) {
      const double orig = p->value[idx];
      p->value[idx] = orig + opts.step;
      const double up = loss();
      p->value[idx] = orig - opts.step;
      const double down = loss();
      p->value[idx] = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double analytic = p->grad[idx];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      ++res.checked;
      if (rel > res.max_rel_error || std::isnan(rel)) {
        res.max_rel_error = std::isnan(rel) ? INFINITY : rel;
        res.worst_tensor = p->name();
        res.worst_index = idx;
      }
    }
  }
  return res;
}

}  // namespace defmod
