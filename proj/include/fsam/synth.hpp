#pragma once

// Synthetic multi-domain segmentation corpus. Every domain renders the same
// anatomy for a given sample index; domains differ only in appearance, via a
// gain on the low-frequency amplitude band plus additive noise.

#include <filesystem>
#include <string>
#include <vector>

#include "fsam/data.hpp"

namespace fsam {

enum class ShapeFamily { DiscInDisc, Ellipse };

std::string_view to_string(ShapeFamily family);
ShapeFamily parse_shape_family(std::string_view text);

struct SyntheticSpec {
  Index num_domains = 3;
  Index samples_per_domain = 8;
  Index image_size = 32;
  ShapeFamily shape_family = ShapeFamily::Ellipse;
  std::vector<double> gains;  // one per domain, > 0
  std::vector<double> noise;  // one per domain, Gaussian stddev >= 0
  /// Radius of the low band, as a fraction of image_size.
  double band_fraction = 0.125;
  std::uint64_t seed = 0;

  void validate() const;
  /// 3 for disc-in-disc (background, disc, cup), 2 for ellipse.
  Index num_classes() const { return shape_family == ShapeFamily::DiscInDisc ? 3 : 2; }
  double band_radius() const { return band_fraction * static_cast<double>(image_size); }
};

/// "A", "B", ..., "Z", then "D26", "D27", ...
std::string domain_name(Index index);

/// True when bin (u, v) lies within `radius` of DC (wrapped frequency distance).
bool in_low_band(Index u, Index v, Index height, Index width, double radius);

/// Scales every bin of the low band by `gain` and transforms back.
Image apply_low_band_gain(const Image& image, double gain, double radius);

/// Mean spectral amplitude over the low band (first channel).
double low_band_mean_amplitude(const Image& image, double radius);

/// Anatomy only: noiseless base image and label mask for a sample index.
std::pair<Image, LabelGrid> render_anatomy(const SyntheticSpec& spec, Index sample_index);

Dataset synth_domain_dataset(const SyntheticSpec& spec);

/// Materializes a dataset in the on-disk layout; returns its manifest.
DatasetManifest write_dataset(const Dataset& data, const std::filesystem::path& root);

}  // namespace fsam
