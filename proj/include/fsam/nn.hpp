#pragma once

// Layer primitives with explicit forward/backward. Token matrices are T x d
// (one row per token); backward passes accumulate into Parameter::grad and
// return the gradient with respect to the layer input.

#include <Eigen/Sparse>

#include <cmath>
#include <concepts>
#include <numbers>

#include "fsam/tensor.hpp"

namespace fsam {

/// Exact GELU, x * Phi(x).
template <std::floating_point Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
}

template <std::floating_point Scalar>
Scalar gelu_derivative(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
  return cdf + x * pdf;
}

template <typename Derived>
auto gelu(const Eigen::MatrixBase<Derived>& x) {
  return x.unaryExpr([](typename Derived::Scalar v) { return gelu(v); }).eval();
}

template <typename Derived>
auto gelu_derivative(const Eigen::MatrixBase<Derived>& x) {
  return x.unaryExpr([](typename Derived::Scalar v) { return gelu_derivative(v); }).eval();
}

/// Row-wise numerically stable softmax.
Mat softmax_rows(const Mat& logits);

/// Backward of row-wise softmax given its output `probs`.
Mat softmax_rows_backward(const Mat& probs, const Mat& dprobs);

/// y = x W + b, with W in x out and b 1 x out (optional).
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  Index in_features() const { return weight->value.rows(); }
  Index out_features() const { return weight->value.cols(); }

  Mat forward(const Mat& x) const;
  Mat backward(const Mat& x, const Mat& dy) const;
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  double eps = 1e-6;

  struct Cache {
    Mat normalized;
    Vec inv_std;
  };

  Mat forward(const Mat& x, Cache* cache = nullptr) const;
  Mat backward(const Cache& cache, const Mat& dy) const;
};

/// 3x3 "same" convolution over a rows x cols token grid (zero padding).
/// Weight layout: (9 * in_channels) x out_channels, row index
/// (ky * 3 + kx) * in_channels + c.
struct Conv3x3 {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  Mat forward(const Mat& x, Index rows, Index cols) const;
  Mat backward(const Mat& x, Index rows, Index cols, const Mat& dy) const;
};

Mat im2col3x3(const Mat& x, Index rows, Index cols);
Mat col2im3x3(const Mat& columns, Index rows, Index cols, Index channels);

/// Sparse bilinear resampling operator (half-pixel centers, edge clamp)
/// mapping a row-major in_rows x in_cols grid to out_rows x out_cols.
Eigen::SparseMatrix<double, Eigen::RowMajor> bilinear_operator(Index in_rows, Index in_cols,
                                                              Index out_rows, Index out_cols);

}  // namespace fsam
