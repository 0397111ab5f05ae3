#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace empeval {

/// Dense parameter tensor with its gradient and Adam moments.
struct ParamBlock {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value, grad, m, v;

  void resize(std::size_t r, std::size_t c) {
    rows = r;
    cols = c;
    value.resize(r * c, 0.0);
    grad.resize(r * c, 0.0);
    m.resize(r * c, 0.0);
    v.resize(r * c, 0.0);
  }
  std::size_t size() const noexcept { return value.size(); }
  double* row(std::size_t r) { return value.data() + r * cols; }
  const double* row(std::size_t r) const { return value.data() + r * cols; }
  double* grad_row(std::size_t r) { return grad.data() + r * cols; }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay (Loshchilov & Hutter). Gradients are consumed and
/// zeroed by `step`.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  void step(std::span<ParamBlock* const> params) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double lr = cfg_.learning_rate;
    for (ParamBlock* p : params) {
      for (std::size_t i = 0; i < p->size(); ++i) {
        const double g = p->grad[i];
        p->m[i] = cfg_.beta1 * p->m[i] + (1.0 - cfg_.beta1) * g;
        p->v[i] = cfg_.beta2 * p->v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = p->m[i] / c1;
        const double vhat = p->v[i] / c2;
        p->value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.epsilon) + cfg_.weight_decay * p->value[i]);
        p->grad[i] = 0.0;
      }
    }
  }

  std::uint64_t steps() const noexcept { return t_; }
  const AdamWConfig& config() const noexcept { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::uint64_t t_ = 0;
};

}  // namespace empeval
