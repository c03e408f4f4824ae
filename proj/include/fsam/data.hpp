#pragma once

// Dataset layout on disk:
//   <root>/<domain>/images/<stem>.png
//   <root>/<domain>/masks/<stem>.png    (integer labels 0..K-1)

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fsam/spectral.hpp"
#include "fsam/tensor.hpp"

namespace fsam {

struct SegSample {
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
  std::string domain;
  std::string stem;
};

struct DatasetManifest {
  std::map<std::string, std::vector<SegSample>> domains;
  /// Files that had no counterpart (image without mask or vice versa).
  std::vector<std::filesystem::path> unmatched;

  std::size_t num_samples() const;
};

/// In-memory, preprocessed sample.
struct Sample {
  Image image;
  LabelGrid mask;
  std::string domain;
  std::string id;
};

using Dataset = std::map<std::string, std::vector<Sample>>;

DatasetManifest load_manifest(const std::filesystem::path& root);

Image resize_bilinear(const Image& image, Index height, Index width);
LabelGrid resize_nearest(const LabelGrid& mask, Index height, Index width);
/// RGB -> gray by channel mean, gray -> RGB by replication.
Image convert_channels(const Image& image, Index channels);

/// Decodes and resizes to target x target (bilinear image, nearest mask).
Sample preprocess(const SegSample& sample, Index target, Index channels = 1);
Dataset load_dataset(const DatasetManifest& manifest, Index target, Index channels = 1);

/// Number of training items for a split of n at `ratio`, ceil(ratio * n),
/// clamped to [1, n - 1].
Index split_train_count(Index n, double ratio);

/// Seeded shuffle then split: (train, val), disjoint and exhaustive.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_source(std::span<const T> items, double ratio, std::uint64_t seed) {
  const Index n = static_cast<Index>(items.size());
  require(n >= 2, ErrorKind::TooFewSamples, "split_source needs at least two samples");
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(seed, 0x53504c54);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(split_train_count(n, ratio));
  std::pair<std::vector<T>, std::vector<T>> out;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_train ? out.first : out.second).push_back(items[order[i]]);
  return out;
}

}  // namespace fsam
