#pragma once

#include <vector>

#include "core/tensor.hpp"

namespace mmvd {

struct AdamConfig {
  real lr = 1e-4;
  real beta1 = 0.9;
  real beta2 = 0.999;
  real eps = 1e-8;
  real weight_decay = 5e-4;  // decoupled, applied to the parameter directly
};

/// Adam with decoupled weight decay. Moment buffers are keyed by position,
/// so the parameter list must be the same length and order on every step.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  /// One update over matched parameter/gradient lists. Gradients may be
  /// null for parameters that received none this step; weight decay still
  /// applies to them.
  void step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads);

  const AdamConfig& config() const { return cfg_; }
  long long step_count() const { return step_; }

 private:
  AdamConfig cfg_;
  long long step_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace mmvd
