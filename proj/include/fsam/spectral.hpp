#pragma once

// Frequency-domain utilities: brute-force DFT, fast 2-D transform,
// amplitude/phase decomposition and the amplitude preprocessing that feeds
// the frequency pathway. Everything is templated on the real scalar type and
// operates per channel.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "fsam/error.hpp"

namespace fsam {

template <typename Scalar>
using Plane = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using ComplexPlane = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic>;

/// H x W x C real image, one plane per channel.
template <typename Scalar>
struct ImageT {
  std::vector<Plane<Scalar>> channels;

  ImageT() = default;
  explicit ImageT(std::vector<Plane<Scalar>> planes) : channels(std::move(planes)) {}
  ImageT(Eigen::Index height, Eigen::Index width, Eigen::Index num_channels, Scalar fill = Scalar(0))
      : channels(static_cast<std::size_t>(num_channels), Plane<Scalar>::Constant(height, width, fill)) {}

  Eigen::Index height() const { return channels.empty() ? 0 : channels.front().rows(); }
  Eigen::Index width() const { return channels.empty() ? 0 : channels.front().cols(); }
  Eigen::Index num_channels() const { return static_cast<Eigen::Index>(channels.size()); }
};

template <typename Scalar>
struct SpectrumT {
  std::vector<ComplexPlane<Scalar>> channels;

  Eigen::Index height() const { return channels.empty() ? 0 : channels.front().rows(); }
  Eigen::Index width() const { return channels.empty() ? 0 : channels.front().cols(); }
};

template <typename Scalar>
struct AmplitudeMapT {
  std::vector<Plane<Scalar>> channels;
};

/// Entries in (-pi, pi]; the phase of 0+0j is 0.
template <typename Scalar>
struct PhaseMapT {
  std::vector<Plane<Scalar>> channels;
};

template <typename Scalar>
struct NormalizationStats {
  Scalar log_min = 0;
  Scalar log_max = 0;
  bool degenerate = false;
};

/// Preprocessed amplitude: log1p, centered, min-max scaled per channel.
template <typename Scalar>
struct FrequencyInputT {
  ImageT<Scalar> values;
  std::vector<NormalizationStats<Scalar>> stats;
  bool degenerate = false;
};

using Image = ImageT<double>;
using Spectrum = SpectrumT<double>;
using AmplitudeMap = AmplitudeMapT<double>;
using PhaseMap = PhaseMapT<double>;
using FrequencyInput = FrequencyInputT<double>;

/// Largest H*W accepted by the brute-force oracle.
inline constexpr Eigen::Index kDftBruteMaxPixels = 64 * 64;

template <typename Scalar>
void validate_image(const ImageT<Scalar>& image) {
  require(!image.channels.empty(), ErrorKind::EmptyInput, "image has no channels");
  require(image.height() >= 2 && image.width() >= 2, ErrorKind::DimensionMismatch,
          "image must be at least 2x2");
  for (const auto& plane : image.channels) {
    require(plane.rows() == image.height() && plane.cols() == image.width(),
            ErrorKind::DimensionMismatch, "image channels differ in size");
    require(plane.allFinite(), ErrorKind::NonFinite, "image contains non-finite values");
  }
}

/// Direct double sum of the DFT definition. O((HW)^2); small inputs only.
template <typename Scalar>
SpectrumT<Scalar> dft_brute(const ImageT<Scalar>& image) {
  validate_image(image);
  const Eigen::Index h = image.height();
  const Eigen::Index w = image.width();
  require(h * w <= kDftBruteMaxPixels, ErrorKind::DimensionTooLarge,
          "dft_brute is limited to H*W <= 4096");
  const Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;

  SpectrumT<Scalar> out;
  for (const auto& plane : image.channels) {
    ComplexPlane<Scalar> coeffs(h, w);
    for (Eigen::Index u = 0; u < h; ++u) {
      for (Eigen::Index v = 0; v < w; ++v) {
        std::complex<Scalar> acc(0, 0);
        for (Eigen::Index y = 0; y < h; ++y) {
          for (Eigen::Index x = 0; x < w; ++x) {
            // Reduce the phase index modulo the period before scaling so the
            // angle stays small and accurate.
            const Scalar frac = Scalar((u * y) % h) / Scalar(h) + Scalar((v * x) % w) / Scalar(w);
            const Scalar angle = -two_pi * frac;
            acc += plane(y, x) * std::complex<Scalar>(std::cos(angle), std::sin(angle));
          }
        }
        coeffs(u, v) = acc;
      }
    }
    out.channels.push_back(std::move(coeffs));
  }
  return out;
}

namespace detail {

template <typename Scalar>
ComplexPlane<Scalar> transform_plane(const ComplexPlane<Scalar>& in, bool inverse) {
  Eigen::FFT<Scalar> fft;
  ComplexPlane<Scalar> out(in.rows(), in.cols());
  std::vector<std::complex<Scalar>> src, dst;

  src.resize(static_cast<std::size_t>(in.cols()));
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    for (Eigen::Index c = 0; c < in.cols(); ++c) src[static_cast<std::size_t>(c)] = in(r, c);
    if (inverse) fft.inv(dst, src); else fft.fwd(dst, src);
    for (Eigen::Index c = 0; c < in.cols(); ++c) out(r, c) = dst[static_cast<std::size_t>(c)];
  }
  src.resize(static_cast<std::size_t>(in.rows()));
  for (Eigen::Index c = 0; c < in.cols(); ++c) {
    for (Eigen::Index r = 0; r < in.rows(); ++r) src[static_cast<std::size_t>(r)] = out(r, c);
    if (inverse) fft.inv(dst, src); else fft.fwd(dst, src);
    for (Eigen::Index r = 0; r < in.rows(); ++r) out(r, c) = dst[static_cast<std::size_t>(r)];
  }
  return out;
}

}  // namespace detail

/// Unnormalized forward 2-D transform (row pass then column pass).
template <typename Scalar>
SpectrumT<Scalar> fft2(const ImageT<Scalar>& image) {
  validate_image(image);
  SpectrumT<Scalar> out;
  for (const auto& plane : image.channels)
    out.channels.push_back(detail::transform_plane<Scalar>(plane.template cast<std::complex<Scalar>>(), false));
  return out;
}

/// Inverse transform carrying the 1/(HW) factor; returns the complex result.
template <typename Scalar>
SpectrumT<Scalar> ifft2_complex(const SpectrumT<Scalar>& spec) {
  SpectrumT<Scalar> out;
  for (const auto& plane : spec.channels) {
    require(plane.allFinite(), ErrorKind::NonFinite, "spectrum contains non-finite values");
    out.channels.push_back(detail::transform_plane<Scalar>(plane, true));
  }
  return out;
}

/// Inverse transform keeping only the real part (real-signal round trip).
template <typename Scalar>
ImageT<Scalar> ifft2(const SpectrumT<Scalar>& spec) {
  ImageT<Scalar> out;
  for (const auto& plane : ifft2_complex(spec).channels) out.channels.push_back(plane.real());
  return out;
}

template <typename Scalar>
AmplitudeMapT<Scalar> amplitude(const SpectrumT<Scalar>& spec) {
  AmplitudeMapT<Scalar> out;
  for (const auto& plane : spec.channels) {
    require(plane.allFinite(), ErrorKind::NonFinite, "spectrum contains non-finite values");
    out.channels.push_back(plane.cwiseAbs());
  }
  return out;
}

template <typename Scalar>
PhaseMapT<Scalar> phase(const SpectrumT<Scalar>& spec) {
  PhaseMapT<Scalar> out;
  for (const auto& plane : spec.channels) {
    Plane<Scalar> values(plane.rows(), plane.cols());
    for (Eigen::Index i = 0; i < plane.rows(); ++i) {
      for (Eigen::Index j = 0; j < plane.cols(); ++j) {
        const Scalar re = plane(i, j).real();
        const Scalar im = plane(i, j).imag();
        Scalar angle = (re == Scalar(0) && im == Scalar(0)) ? Scalar(0) : std::atan2(im, re);
        // atan2(-0, -1) yields -pi; fold onto the half-open interval.
        if (angle <= -std::numbers::pi_v<Scalar>) angle = std::numbers::pi_v<Scalar>;
        values(i, j) = angle;
      }
    }
    out.channels.push_back(std::move(values));
  }
  return out;
}

/// Moves the zero-frequency bin to (H/2, W/2).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> fftshift(
    const Eigen::MatrixBase<Derived>& plane) {
  const Eigen::Index h = plane.rows();
  const Eigen::Index w = plane.cols();
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out(h, w);
  for (Eigen::Index i = 0; i < h; ++i)
    for (Eigen::Index j = 0; j < w; ++j) out((i + h / 2) % h, (j + w / 2) % w) = plane(i, j);
  return out;
}

/// log1p, then min-max scaling per channel and a quadrant shift. The upper end
/// of the range is taken over the non-DC bins: the DC term bounds every other
/// bin of a non-negative image, so including it would make all normalized
/// values depend on mean intensity. DC saturates at 1. When the non-DC bins
/// are flat the full range (DC included) is used instead.
template <typename Scalar>
FrequencyInputT<Scalar> amplitude_preprocess(const AmplitudeMapT<Scalar>& amp) {
  FrequencyInputT<Scalar> out;
  for (const auto& plane : amp.channels) {
    require(plane.allFinite(), ErrorKind::NonFinite, "amplitude contains non-finite values");
    require(plane.size() >= 2, ErrorKind::DimensionMismatch, "amplitude map too small");
    Plane<Scalar> logged = plane.array().log1p().matrix();

    NormalizationStats<Scalar> stats;
    stats.log_min = logged.minCoeff();
    const Scalar dc = logged(0, 0);
    logged(0, 0) = stats.log_min;
    stats.log_max = logged.maxCoeff();
    logged(0, 0) = dc;
    if (stats.log_max == stats.log_min) stats.log_max = std::max(stats.log_max, dc);

    if (stats.log_max == stats.log_min) {
      stats.degenerate = true;
      out.degenerate = true;
      logged.setZero();
    } else {
      const Scalar range = stats.log_max - stats.log_min;
      logged = ((logged.array() - stats.log_min) / range).min(Scalar(1)).max(Scalar(0)).matrix();
    }
    out.values.channels.push_back(fftshift(logged));
    out.stats.push_back(stats);
  }
  return out;
}

/// fft2 -> amplitude -> amplitude_preprocess.
template <typename Scalar>
FrequencyInputT<Scalar> frequency_input(const ImageT<Scalar>& image) {
  return amplitude_preprocess(amplitude(fft2(image)));
}

}  // namespace fsam
