#pragma once

#include <unordered_map>

#include "fsam/tensor.hpp"

namespace fsam {

/// Linear warm-up from one step, then polynomial decay:
///   step < warmup:  base * (step + 1) / warmup
///   otherwise:      base * (1 - (step - warmup) / total_steps) ^ 0.9
double learning_rate(Index step, double base_lr, Index warmup_steps, Index total_steps);

/// Decoupled weight decay Adam. Touches only trainable parameters.
class AdamW {
 public:
  explicit AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterStore& store, double lr);
  Index steps_taken() const { return t_; }

 private:
  struct Moments {
    Mat m;
    Mat v;
  };

  double weight_decay_, beta1_, beta2_, eps_;
  Index t_ = 0;
  std::unordered_map<const Parameter*, Moments> moments_;
};

}  // namespace fsam
