#pragma once

#include <cstddef>
#include <vector>

#include "blora/tensor.hpp"

namespace blora {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

// Adam with bias correction. Parameters without a gradient are skipped.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options = {});

  void step(double lr);
  void zero_grad();
  std::size_t steps() const { return t_; }
  const std::vector<Tensor>& parameters() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

// Linear warmup from 0 over warmup_ratio * total steps, then linear decay to 0.
double linear_schedule(double base_lr, std::size_t step, std::size_t total_steps,
                       double warmup_ratio);

}  // namespace blora
