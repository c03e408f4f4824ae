#pragma once

// Independent reference computations for the tests. Nothing here calls into
// the code it checks; each is a direct, loop-level transcription.

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "fsam/data.hpp"
#include "fsam/seg_model.hpp"

namespace oracle {

using fsam::Index;
using fsam::Mat;

inline constexpr double kPi = 3.14159265358979323846;

/// Double loop over the defining sum, angle computed directly.
inline Eigen::MatrixXcd dft(const Mat& f) {
  const Index h = f.rows(), w = f.cols();
  Eigen::MatrixXcd out(h, w);
  for (Index u = 0; u < h; ++u) {
    for (Index v = 0; v < w; ++v) {
      double re = 0.0, im = 0.0;
      for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < w; ++x) {
          const double angle = 2.0 * kPi * (static_cast<double>(u * y) / h + static_cast<double>(v * x) / w);
          re += f(y, x) * std::cos(angle);
          im -= f(y, x) * std::sin(angle);
        }
      }
      out(u, v) = {re, im};
    }
  }
  return out;
}

/// GELU through erfc, a different formulation from x * Phi(x) via erf.
inline double gelu(double x) { return 0.5 * x * std::erfc(-x / std::sqrt(2.0)); }

/// softmax(Q K^T / sqrt(dh)) V per head, concatenated, then W_O + b_O.
inline Mat attention(const Mat& x, const Mat& wq, const Mat& wk, const Mat& wv, const Mat& wo, const Mat& bo,
                     Index heads) {
  const Index t = x.rows(), d = x.cols(), dh = d / heads;
  const Mat q = x * wq, k = x * wk, v = x * wv;
  Mat ctx = Mat::Zero(t, d);
  for (Index h = 0; h < heads; ++h) {
    for (Index i = 0; i < t; ++i) {
      std::vector<double> score(static_cast<std::size_t>(t));
      double mx = -1e300;
      for (Index j = 0; j < t; ++j) {
        double s = 0.0;
        for (Index c = 0; c < dh; ++c) s += q(i, h * dh + c) * k(j, h * dh + c);
        score[static_cast<std::size_t>(j)] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, score[static_cast<std::size_t>(j)]);
      }
      double z = 0.0;
      for (auto& s : score) z += (s = std::exp(s - mx));
      for (Index j = 0; j < t; ++j)
        for (Index c = 0; c < dh; ++c) ctx(i, h * dh + c) += score[static_cast<std::size_t>(j)] / z * v(j, h * dh + c);
    }
  }
  Mat out = ctx * wo;
  for (Index i = 0; i < t; ++i) out.row(i) += bo.row(0);
  return out;
}

inline double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    dot += a(i) * b(i);
    na += a(i) * a(i);
    nb += b(i) * b(i);
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Softmax probabilities of one pixel's logit row.
inline std::vector<double> pixel_probs(const Mat& logits, Index pixel) {
  std::vector<double> p(static_cast<std::size_t>(logits.cols()));
  double mx = logits(pixel, 0);
  for (Index k = 1; k < logits.cols(); ++k) mx = std::max(mx, logits(pixel, k));
  double z = 0.0;
  for (Index k = 0; k < logits.cols(); ++k) z += (p[static_cast<std::size_t>(k)] = std::exp(logits(pixel, k) - mx));
  for (auto& v : p) v /= z;
  return p;
}

inline int label_at(const fsam::LabelGrid& gt, Index pixel, Index width) {
  return gt(pixel / width, pixel % width);
}

inline double cross_entropy(const Mat& logits, const fsam::LabelGrid& gt) {
  const Index w = gt.cols();
  double sum = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const auto p = pixel_probs(logits, i);
    sum -= std::log(p[static_cast<std::size_t>(label_at(gt, i, w))]);
  }
  return sum / static_cast<double>(logits.rows());
}

inline double dice_loss(const Mat& logits, const fsam::LabelGrid& gt, double eps) {
  const Index w = gt.cols(), k_count = logits.cols();
  double total = 0.0;
  for (Index k = 1; k < k_count; ++k) {
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (Index i = 0; i < logits.rows(); ++i) {
      const double p = pixel_probs(logits, i)[static_cast<std::size_t>(k)];
      const double g = label_at(gt, i, w) == k ? 1.0 : 0.0;
      inter += p * g;
      psum += p;
      gsum += g;
    }
    total += (2.0 * inter + eps) / (psum + gsum + eps);
  }
  return 1.0 - total / static_cast<double>(k_count - 1);
}

/// 2|A n B| / (|A| + |B|) by counting pixels.
inline double dice_count(const fsam::LabelGrid& a, const fsam::LabelGrid& b, int cls) {
  double both = 0, na = 0, nb = 0;
  for (Index y = 0; y < a.rows(); ++y)
    for (Index x = 0; x < a.cols(); ++x) {
      na += a(y, x) == cls;
      nb += b(y, x) == cls;
      both += a(y, x) == cls && b(y, x) == cls;
    }
  return na + nb == 0 ? 1.0 : 2.0 * both / (na + nb);
}

/// Central-difference check of dL/dtheta on sampled entries. Returns the
/// largest relative error |a - n| / max(|a| + |n|, floor).
template <typename LossFn>
double max_grad_error(fsam::Parameter& p, const Mat& analytic, LossFn loss, const std::vector<Index>& entries,
                      double step = 1e-5, double floor = 1e-8) {
  double worst = 0.0;
  for (Index e : entries) {
    double& theta = p.value.data()[e];
    const double saved = theta;
    theta = saved + step;
    const double up = loss();
    theta = saved - step;
    const double down = loss();
    theta = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic.data()[e];
    worst = std::max(worst, std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), floor));
  }
  return worst;
}

}  // namespace oracle
