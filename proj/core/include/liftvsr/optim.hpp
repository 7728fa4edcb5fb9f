#pragma once

#include <cstdint>
#include <vector>

#include "liftvsr/tensor.hpp"

namespace liftvsr::ad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed parameter list. step() consumes the accumulated gradients
// and leaves them zeroed.
class Adam {
 public:
  Adam(std::vector<Parameter> params, AdamOptions options);

  // Throws TrainingStateError when a trainable parameter has no gradient
  // buffer (no backward pass or zero_grad() since construction).
  void step();
  void zero_grad();

  std::int64_t step_count() const { return t_; }
  const std::vector<Parameter>& params() const { return params_; }
  const AdamOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }

  // Moment buffers, index-aligned with params(); exposed for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_step_count(std::int64_t t) { t_ = t; }

 private:
  std::vector<Parameter> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

}  // namespace liftvsr::ad
