#include "fsam/nn.hpp"

#include <algorithm>
#include <vector>

namespace fsam {

Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double peak = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - peak).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Mat softmax_rows_backward(const Mat& probs, const Mat& dprobs) {
  const Vec inner = probs.cwiseProduct(dprobs).rowwise().sum();
  return probs.cwiseProduct(dprobs - inner.replicate(1, probs.cols()));
}

Mat Linear::forward(const Mat& x) const {
  require(x.cols() == in_features(), ErrorKind::DimensionMismatch,
          weight->name + ": input width " + std::to_string(x.cols()) + " != " +
              std::to_string(in_features()));
  Mat y = x * weight->value;
  if (bias != nullptr) y.rowwise() += bias->value.row(0);
  return y;
}

Mat Linear::backward(const Mat& x, const Mat& dy) const {
  weight->grad.noalias() += x.transpose() * dy;
  if (bias != nullptr) bias->grad.row(0) += dy.colwise().sum();
  return dy * weight->value.transpose();
}

Mat LayerNorm::forward(const Mat& x, Cache* cache) const {
  const Index d = x.cols();
  Mat normalized(x.rows(), d);
  Vec inv_std(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const RowVec centered = x.row(i).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(d);
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    normalized.row(i) = centered * inv_std(i);
  }
  Mat y = normalized.array().rowwise() * gamma->value.row(0).array();
  y.rowwise() += beta->value.row(0);
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Mat LayerNorm::backward(const Cache& cache, const Mat& dy) const {
  const Mat& xhat = cache.normalized;
  gamma->grad.row(0) += dy.cwiseProduct(xhat).colwise().sum();
  beta->grad.row(0) += dy.colwise().sum();

  const Mat dxhat = dy.array().rowwise() * gamma->value.row(0).array();
  const double d = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Index i = 0; i < dy.rows(); ++i) {
    const double mean_d = dxhat.row(i).sum() / d;
    const double mean_dx = dxhat.row(i).dot(xhat.row(i)) / d;
    dx.row(i) = cache.inv_std(i) * (dxhat.row(i).array() - mean_d - xhat.row(i).array() * mean_dx).matrix();
  }
  return dx;
}

Mat im2col3x3(const Mat& x, Index rows, Index cols) {
  require(x.rows() == rows * cols, ErrorKind::DimensionMismatch, "im2col: token count != rows*cols");
  const Index channels = x.cols();
  Mat columns = Mat::Zero(rows * cols, 9 * channels);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      const Index t = r * cols + c;
      for (Index ky = 0; ky < 3; ++ky) {
        const Index sr = r + ky - 1;
        if (sr < 0 || sr >= rows) continue;
        for (Index kx = 0; kx < 3; ++kx) {
          const Index sc = c + kx - 1;
          if (sc < 0 || sc >= cols) continue;
          columns.block(t, (ky * 3 + kx) * channels, 1, channels) = x.row(sr * cols + sc);
        }
      }
    }
  }
  return columns;
}

Mat col2im3x3(const Mat& columns, Index rows, Index cols, Index channels) {
  Mat x = Mat::Zero(rows * cols, channels);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      const Index t = r * cols + c;
      for (Index ky = 0; ky < 3; ++ky) {
        const Index sr = r + ky - 1;
        if (sr < 0 || sr >= rows) continue;
        for (Index kx = 0; kx < 3; ++kx) {
          const Index sc = c + kx - 1;
          if (sc < 0 || sc >= cols) continue;
          x.row(sr * cols + sc) += columns.block(t, (ky * 3 + kx) * channels, 1, channels);
        }
      }
    }
  }
  return x;
}

Mat Conv3x3::forward(const Mat& x, Index rows, Index cols) const {
  require(weight->value.rows() == 9 * x.cols(), ErrorKind::DimensionMismatch,
          weight->name + ": channel mismatch");
  Mat y = im2col3x3(x, rows, cols) * weight->value;
  if (bias != nullptr) y.rowwise() += bias->value.row(0);
  return y;
}

Mat Conv3x3::backward(const Mat& x, Index rows, Index cols, const Mat& dy) const {
  const Mat columns = im2col3x3(x, rows, cols);
  weight->grad.noalias() += columns.transpose() * dy;
  if (bias != nullptr) bias->grad.row(0) += dy.colwise().sum();
  return col2im3x3(dy * weight->value.transpose(), rows, cols, x.cols());
}

namespace {

struct Tap {
  Index lo, hi;
  double w_hi;
};

Tap bilinear_tap(Index dst, Index in_size, Index out_size) {
  const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
  double src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
  const Index lo = static_cast<Index>(std::floor(src));
  const Index hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, src - static_cast<double>(lo)};
}

}  // namespace

Eigen::SparseMatrix<double, Eigen::RowMajor> bilinear_operator(Index in_rows, Index in_cols,
                                                              Index out_rows, Index out_cols) {
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(out_rows * out_cols * 4));
  for (Index r = 0; r < out_rows; ++r) {
    const Tap ty = bilinear_tap(r, in_rows, out_rows);
    for (Index c = 0; c < out_cols; ++c) {
      const Tap tx = bilinear_tap(c, in_cols, out_cols);
      const Index dst = r * out_cols + c;
      const double wy[2] = {1.0 - ty.w_hi, ty.w_hi};
      const double wx[2] = {1.0 - tx.w_hi, tx.w_hi};
      const Index sy[2] = {ty.lo, ty.hi};
      const Index sx[2] = {tx.lo, tx.hi};
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          if (wy[a] * wx[b] != 0.0) triplets.emplace_back(dst, sy[a] * in_cols + sx[b], wy[a] * wx[b]);
    }
  }
  Eigen::SparseMatrix<double, Eigen::RowMajor> op(out_rows * out_cols, in_rows * in_cols);
  op.setFromTriplets(triplets.begin(), triplets.end());
  return op;
}

}  // namespace fsam
