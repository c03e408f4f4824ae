#include "fsam/loss.hpp"

#include <cmath>

namespace fsam {

namespace {

void check_labels(const MaskLogits& logits, const LabelGrid& gt) {
  require(gt.rows() == logits.height && gt.cols() == logits.width, ErrorKind::DimensionMismatch,
          "loss: label grid does not match logits");
  require(logits.num_classes() >= 2, ErrorKind::DimensionMismatch, "loss: need at least two classes");
  const int k = static_cast<int>(logits.num_classes());
  require(gt.minCoeff() >= 0 && gt.maxCoeff() < k, ErrorKind::LabelOutOfRange,
          "loss: labels must lie in [0, " + std::to_string(k - 1) + "]");
}

int label_at(const LabelGrid& gt, Index pixel, Index width) { return gt(pixel / width, pixel % width); }

struct DiceParts {
  Vec intersection;  // per class
  Vec denominator;   // sum p + sum g, per class
};

DiceParts dice_parts(const Mat& probs, const LabelGrid& gt, Index width) {
  const Index k = probs.cols();
  DiceParts parts{Vec::Zero(k), Vec::Zero(k)};
  parts.denominator = probs.colwise().sum().transpose();
  for (Index i = 0; i < probs.rows(); ++i) {
    const int label = label_at(gt, i, width);
    parts.intersection(label) += probs(i, label);
    parts.denominator(label) += 1.0;
  }
  return parts;
}

double dice_loss_from_parts(const DiceParts& parts) {
  const Index k = parts.intersection.size();
  double mean_dice = 0.0;
  for (Index c = 1; c < k; ++c)
    mean_dice += (2.0 * parts.intersection(c) + kDiceSmooth) / (parts.denominator(c) + kDiceSmooth);
  return 1.0 - mean_dice / static_cast<double>(k - 1);
}

double cross_entropy_from_probs(const Mat& logits, const LabelGrid& gt, Index width) {
  double total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const double peak = logits.row(i).maxCoeff();
    const double log_sum = peak + std::log((logits.row(i).array() - peak).exp().sum());
    total += log_sum - logits(i, label_at(gt, i, width));
  }
  return total / static_cast<double>(logits.rows());
}

}  // namespace

double cross_entropy(const MaskLogits& logits, const LabelGrid& gt) {
  check_labels(logits, gt);
  return cross_entropy_from_probs(logits.values, gt, logits.width);
}

double dice_loss(const MaskLogits& logits, const LabelGrid& gt) {
  check_labels(logits, gt);
  return dice_loss_from_parts(dice_parts(softmax_rows(logits.values), gt, logits.width));
}

LossTerms hybrid_loss(const MaskLogits& logits, const LabelGrid& gt, double lambda, Mat* dlogits) {
  check_labels(logits, gt);
  require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::InvalidConfig, "lambda must lie in [0, 1]");
  const Mat probs = softmax_rows(logits.values);
  const DiceParts parts = dice_parts(probs, gt, logits.width);

  LossTerms terms;
  terms.ce = cross_entropy_from_probs(logits.values, gt, logits.width);
  terms.dice_loss = dice_loss_from_parts(parts);
  terms.total = (1.0 - lambda) * terms.ce + lambda * terms.dice_loss;
  require(std::isfinite(terms.total), ErrorKind::NonFinite, "loss is not finite");

  if (dlogits != nullptr) {
    const Index n = probs.rows();
    const Index k = probs.cols();
    // Cross-entropy: (P - onehot) / n, directly in logit space.
    Mat dce = probs;
    for (Index i = 0; i < n; ++i) dce(i, label_at(gt, i, logits.width)) -= 1.0;
    dce /= static_cast<double>(n);

    // Dice: gradient w.r.t. probabilities, then through the softmax.
    Mat dprobs = Mat::Zero(n, k);
    const double scale = -1.0 / static_cast<double>(k - 1);
    for (Index c = 1; c < k; ++c) {
      const double num = 2.0 * parts.intersection(c) + kDiceSmooth;
      const double den = parts.denominator(c) + kDiceSmooth;
      dprobs.col(c).setConstant(scale * (-num / (den * den)));
      for (Index i = 0; i < n; ++i)
        if (label_at(gt, i, logits.width) == c) dprobs(i, c) += scale * 2.0 / den;
    }
    *dlogits = (1.0 - lambda) * dce + lambda * softmax_rows_backward(probs, dprobs);
  }
  return terms;
}

}  // namespace fsam
