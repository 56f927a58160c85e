#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "morpho/params.hpp"

namespace morpho {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction. Fully deterministic; a NaN gradient
// aborts with the offending parameter named.
class Adam {
 public:
  Adam(NamedParams params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.lr <= 0.0) throw std::invalid_argument("adam: learning rate must be positive");
    for (const auto& [name, t] : params_) {
      m_.emplace_back(t->values.size(), 0.0);
      v_.emplace_back(t->values.size(), 0.0);
    }
  }

  void zero_grad() {
    for (const auto& [name, t] : params_) t->zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t p = 0; p < params_.size(); ++p) {
      auto& tensor = *params_[p].second;
      if (!tensor.has_grad()) continue;  // untouched by this loss
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < tensor.values.size(); ++i) {
        const double g = tensor.grad[i];
        if (std::isnan(g))
          throw std::runtime_error("adam: NaN gradient in parameter " + params_[p].first + " at index " +
                                   std::to_string(i));
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        tensor.values[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  int step_count() const { return t_; }
  const NamedParams& params() const { return params_; }

 private:
  NamedParams params_;
  AdamConfig cfg_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace morpho
