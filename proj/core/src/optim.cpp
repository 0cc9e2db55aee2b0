#include "blora/optim.hpp"

#include <algorithm>
#include <cmath>

namespace blora {

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = options_.beta1 * m[k] + (1.0 - options_.beta1) * g[k];
      v[k] = options_.beta2 * v[k] + (1.0 - options_.beta2) * g[k] * g[k];
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + options_.eps);
      w[k] -= lr * (update + options_.weight_decay * w[k]);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

double linear_schedule(double base_lr, std::size_t step, std::size_t total_steps,
                       double warmup_ratio) {
  if (total_steps == 0) return base_lr;
  const double total = static_cast<double>(total_steps);
  const double warmup = std::floor(warmup_ratio * total);
  const double s = static_cast<double>(step);
  if (s < warmup) return base_lr * (s + 1.0) / warmup;
  const double remaining = total - warmup;
  if (remaining <= 0.0) return 0.0;
  return base_lr * std::max(0.0, (total - s) / remaining);
}

}  // namespace blora
