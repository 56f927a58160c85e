#pragma once

#include <functional>
#include <span>

#include "morpho/rng.hpp"
#include "morpho/tensor.hpp"

namespace morpho {

// Central-difference gradient check. The caller has already run a taped
// forward+backward so `params` carry autodiff gradients; `loss_fn` must
// recompute the same scalar loss from the params' current values. Returns
// max over sampled coordinates of |g_ad - g_fd| / max(1e-8, |g_fd|).
//
// Coordinates whose h and h/2 central differences disagree sit next to a
// non-differentiable point (a relu kink, a max tie) and are excluded: the
// difference quotient carries no usable derivative information there. A wrong
// backward rule still fails, since both windows then agree with each other
// and disagree with the autodiff gradient.
inline double finite_difference_check(const std::function<double()>& loss_fn,
                                      std::span<const TensorPtr> params, double h = 1e-5,
                                      int coords_per_param = 6, std::uint64_t seed = 17) {
  if (h <= 0.0) throw std::invalid_argument("finite_difference_check: h must be positive");
  Rng rng(mix_seed(seed, 0x5eedu));
  double worst = 0.0;
  for (const auto& p : params) {
    const int n = static_cast<int>(p->numel());
    const int samples = std::min(coords_per_param, n);
    for (int s = 0; s < samples; ++s) {
      const int idx = n == samples ? s : rng.uniform_int(0, n - 1);
      const double orig = p->values[static_cast<std::size_t>(idx)];
      auto eval_at = [&](double v) {
        p->values[static_cast<std::size_t>(idx)] = v;
        return loss_fn();
      };
      const double g_fd = (eval_at(orig + h) - eval_at(orig - h)) / (2.0 * h);
      const double g_half = (eval_at(orig + 0.5 * h) - eval_at(orig - 0.5 * h)) / h;
      p->values[static_cast<std::size_t>(idx)] = orig;
      if (std::abs(g_fd - g_half) > 1e-7 + 1e-5 * std::abs(g_fd)) continue;  // kink in the window
      const double g_ad = p->has_grad() ? p->grad[static_cast<std::size_t>(idx)] : 0.0;
      if (std::abs(g_ad - g_fd) <= 1e-7) continue;  // agreement below FD measurement noise
      const double rel = std::abs(g_ad - g_fd) / std::max(1e-8, std::abs(g_fd));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace morpho
