#include "fsam/data.hpp"

#include "fsam/image_io.hpp"
#include "fsam/nn.hpp"

namespace fs = std::filesystem;

namespace fsam {

std::size_t DatasetManifest::num_samples() const {
  std::size_t n = 0;
  for (const auto& [_, samples] : domains) n += samples.size();
  return n;
}

namespace {

std::map<std::string, fs::path> files_by_stem(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) out.emplace(entry.path().stem().string(), entry.path());
  return out;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& root) {
  require(fs::is_directory(root), ErrorKind::UnreadableFile, "dataset root " + root.string() + " is not a directory");
  std::vector<fs::path> domain_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) domain_dirs.push_back(entry.path());
  std::sort(domain_dirs.begin(), domain_dirs.end());
  require(!domain_dirs.empty(), ErrorKind::EmptyDomain, "dataset root " + root.string() + " has no domains");

  DatasetManifest manifest;
  for (const auto& dir : domain_dirs) {
    const std::string domain = dir.filename().string();
    require(fs::is_directory(dir / "images"), ErrorKind::UnreadableFile, "domain " + domain + " has no images/");
    require(fs::is_directory(dir / "masks"), ErrorKind::MissingMask, "domain " + domain + " has no masks/");
    const auto images = files_by_stem(dir / "images");
    const auto masks = files_by_stem(dir / "masks");
    std::vector<SegSample> samples;
    for (const auto& [stem, image_path] : images) {
      auto it = masks.find(stem);
      if (it == masks.end()) {
        manifest.unmatched.push_back(image_path);
        continue;
      }
      samples.push_back({image_path, it->second, domain, stem});
    }
    for (const auto& [stem, mask_path] : masks)
      if (!images.contains(stem)) manifest.unmatched.push_back(mask_path);
    require(!samples.empty(), ErrorKind::EmptyDomain, "domain " + domain + " has no image/mask pairs");
    manifest.domains.emplace(domain, std::move(samples));
  }
  return manifest;
}

Image resize_bilinear(const Image& image, Index height, Index width) {
  if (image.height() == height && image.width() == width) return image;
  const auto op = bilinear_operator(image.height(), image.width(), height, width);
  Image out;
  for (const auto& plane : image.channels) {
    // Row-major flattening to match the operator's index convention.
    Vec flat(plane.size());
    for (Index y = 0; y < plane.rows(); ++y)
      for (Index x = 0; x < plane.cols(); ++x) flat(y * plane.cols() + x) = plane(y, x);
    const Vec resized = op * flat;
    Plane<double> p(height, width);
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) p(y, x) = resized(y * width + x);
    out.channels.push_back(std::move(p));
  }
  return out;
}

LabelGrid resize_nearest(const LabelGrid& mask, Index height, Index width) {
  if (mask.rows() == height && mask.cols() == width) return mask;
  LabelGrid out(height, width);
  // Source index of the pixel center: floor((i + 0.5) * in / out).
  for (Index y = 0; y < height; ++y) {
    const Index sy = std::min(mask.rows() - 1, ((2 * y + 1) * mask.rows()) / (2 * height));
    for (Index x = 0; x < width; ++x) {
      const Index sx = std::min(mask.cols() - 1, ((2 * x + 1) * mask.cols()) / (2 * width));
      out(y, x) = mask(sy, sx);
    }
  }
  return out;
}

Image convert_channels(const Image& image, Index channels) {
  if (image.num_channels() == channels) return image;
  require(channels == 1 || channels == 3, ErrorKind::DimensionMismatch, "channels must be 1 or 3");
  if (channels == 1) {
    Plane<double> mean = Plane<double>::Zero(image.height(), image.width());
    for (const auto& p : image.channels) mean += p;
    mean /= static_cast<double>(image.num_channels());
    return Image(std::vector<Plane<double>>{mean});
  }
  return Image(std::vector<Plane<double>>(3, image.channels.front()));
}

Sample preprocess(const SegSample& sample, Index target, Index channels) {
  Sample out;
  out.domain = sample.domain;
  out.id = sample.stem;
  const Image raw = read_image(sample.image_path);
  const LabelGrid mask = read_mask(sample.mask_path);
  out.image = resize_bilinear(convert_channels(raw, channels), target, target);
  for (auto& plane : out.image.channels) plane = plane.cwiseMax(0.0).cwiseMin(1.0);
  out.mask = resize_nearest(mask, target, target);
  return out;
}

Dataset load_dataset(const DatasetManifest& manifest, Index target, Index channels) {
  Dataset data;
  for (const auto& [domain, samples] : manifest.domains) {
    auto& out = data[domain];
    for (const auto& s : samples) out.push_back(preprocess(s, target, channels));
  }
  return data;
}

Index split_train_count(Index n, double ratio) {
  require(ratio > 0.0 && ratio < 1.0, ErrorKind::InvalidConfig, "split ratio must lie in (0, 1)");
  // The epsilon absorbs representation error in ratio * n (0.9 * 10 must give 9).
  const auto raw = static_cast<Index>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
  return std::clamp<Index>(raw, 1, n - 1);
}

}  // namespace fsam
