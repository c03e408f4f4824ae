#include "fsam/optim.hpp"

#include <algorithm>
#include <cmath>

namespace fsam {

double learning_rate(Index step, double base_lr, Index warmup_steps, Index total_steps) {
  if (step < warmup_steps)
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(std::max<Index>(total_steps, 1));
  return base_lr * std::pow(std::max(0.0, 1.0 - progress), 0.9);
}

void AdamW::step(ParameterStore& store, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Parameter& p : store) {
    if (!p.trainable()) continue;
    auto [it, inserted] = moments_.try_emplace(&p);
    Moments& mom = it->second;
    if (inserted) {
      mom.m = Mat::Zero(p.value.rows(), p.value.cols());
      mom.v = Mat::Zero(p.value.rows(), p.value.cols());
    }
    mom.m = beta1_ * mom.m + (1.0 - beta1_) * p.grad;
    mom.v = beta2_ * mom.v + (1.0 - beta2_) * p.grad.cwiseAbs2();
    p.value *= (1.0 - lr * weight_decay_);
    p.value.array() -= lr * (mom.m.array() / bc1) / ((mom.v.array() / bc2).sqrt() + eps_);
  }
}

}  // namespace fsam
