#pragma once

#include "fsam/seg_model.hpp"

namespace fsam {

/// Smoothing term in both numerator and denominator of the soft Dice.
inline constexpr double kDiceSmooth = 1e-5;

struct LossTerms {
  double total = 0.0;
  double ce = 0.0;
  double dice_loss = 0.0;
};

/// Mean pixelwise cross-entropy of softmax(logits) against integer labels.
double cross_entropy(const MaskLogits& logits, const LabelGrid& gt);

/// 1 - mean over foreground classes (1..K-1) of the smoothed soft Dice.
double dice_loss(const MaskLogits& logits, const LabelGrid& gt);

/// (1 - lambda) * CE + lambda * DiceLoss. When `dlogits` is given it receives
/// dL/dlogits with the same layout as `logits.values`.
LossTerms hybrid_loss(const MaskLogits& logits, const LabelGrid& gt, double lambda, Mat* dlogits = nullptr);

}  // namespace fsam
