#include "fsam/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "fsam/image_io.hpp"

namespace fs = std::filesystem;

namespace fsam {

std::string_view to_string(ShapeFamily family) {
  return family == ShapeFamily::DiscInDisc ? "disc-in-disc" : "ellipse";
}

ShapeFamily parse_shape_family(std::string_view text) {
  if (text == "disc-in-disc") return ShapeFamily::DiscInDisc;
  if (text == "ellipse") return ShapeFamily::Ellipse;
  fail(ErrorKind::InvalidConfig, "unknown shape_family '" + std::string(text) + "' (disc-in-disc|ellipse)");
}

void SyntheticSpec::validate() const {
  require(num_domains >= 2, ErrorKind::InvalidConfig, "num_domains must be >= 2");
  require(samples_per_domain >= 1, ErrorKind::InvalidConfig, "samples_per_domain must be >= 1");
  require(image_size >= 8, ErrorKind::InvalidConfig, "image_size must be >= 8");
  require(static_cast<Index>(gains.size()) == num_domains, ErrorKind::InvalidConfig,
          "gains must list one value per domain");
  require(static_cast<Index>(noise.size()) == num_domains, ErrorKind::InvalidConfig,
          "noise must list one value per domain");
  for (double g : gains) require(g > 0.0 && std::isfinite(g), ErrorKind::InvalidConfig, "gains must be positive");
  for (double n : noise) require(n >= 0.0 && std::isfinite(n), ErrorKind::InvalidConfig, "noise must be >= 0");
  require(band_fraction > 0.0 && band_fraction < 0.5, ErrorKind::InvalidConfig, "band_fraction must be in (0, 0.5)");
}

std::string domain_name(Index index) {
  if (index < 26) return std::string(1, static_cast<char>('A' + index));
  return "D" + std::to_string(index);
}

bool in_low_band(Index u, Index v, Index height, Index width, double radius) {
  const double fu = static_cast<double>(std::min(u, height - u));
  const double fv = static_cast<double>(std::min(v, width - v));
  return fu * fu + fv * fv <= radius * radius;
}

Image apply_low_band_gain(const Image& image, double gain, double radius) {
  Spectrum spec = fft2(image);
  for (auto& plane : spec.channels)
    for (Index u = 0; u < plane.rows(); ++u)
      for (Index v = 0; v < plane.cols(); ++v)
        if (in_low_band(u, v, plane.rows(), plane.cols(), radius)) plane(u, v) *= gain;
  return ifft2(spec);
}

double low_band_mean_amplitude(const Image& image, double radius) {
  const auto amp = amplitude(fft2(image));
  const auto& plane = amp.channels.front();
  double sum = 0.0;
  Index count = 0;
  for (Index u = 0; u < plane.rows(); ++u)
    for (Index v = 0; v < plane.cols(); ++v)
      if (in_low_band(u, v, plane.rows(), plane.cols(), radius)) {
        sum += plane(u, v);
        ++count;
      }
  return sum / static_cast<double>(count);
}

std::pair<Image, LabelGrid> render_anatomy(const SyntheticSpec& spec, Index sample_index) {
  const Index s = spec.image_size;
  const double size = static_cast<double>(s);
  auto rng = make_rng(spec.seed, 0x414e4154 + static_cast<std::uint64_t>(sample_index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const double cy = uniform(0.35, 0.65) * size;
  const double cx = uniform(0.35, 0.65) * size;
  // Ellipse parameters (also the outer disc when a == b).
  double a = uniform(0.15, 0.3) * size;
  double b = uniform(0.15, 0.3) * size;
  const double theta = uniform(0.0, std::numbers::pi);
  double r_inner = 0.0, iy = cy, ix = cx;
  if (spec.shape_family == ShapeFamily::DiscInDisc) {
    a = b = uniform(0.2, 0.3) * size;
    r_inner = a * uniform(0.35, 0.6);
    const double slack = 0.25 * (a - r_inner);
    const double phi = uniform(0.0, 2.0 * std::numbers::pi);
    iy = cy + slack * std::sin(phi);
    ix = cx + slack * std::cos(phi);
  }
  const double shade_phase = uniform(0.0, 2.0 * std::numbers::pi);
  const double shade_fy = std::floor(uniform(1.0, 3.0));
  const double shade_fx = std::floor(uniform(1.0, 3.0));
  const double tex_phase = uniform(0.0, 2.0 * std::numbers::pi);
  const double tex_fy = std::floor(uniform(6.0, 10.0));
  const double tex_fx = std::floor(uniform(6.0, 10.0));

  Plane<double> plane(s, s);
  LabelGrid mask = LabelGrid::Zero(s, s);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (Index y = 0; y < s; ++y) {
    for (Index x = 0; x < s; ++x) {
      const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
      const double dy = py - cy, dx = px - cx;
      const double ry = -st * dx + ct * dy, rx = ct * dx + st * dy;
      int label = (rx * rx) / (a * a) + (ry * ry) / (b * b) <= 1.0 ? 1 : 0;
      if (label == 1 && r_inner > 0.0) {
        const double qy = py - iy, qx = px - ix;
        if (qy * qy + qx * qx <= r_inner * r_inner) label = 2;
      }
      mask(y, x) = label;
      const double shade = 0.03 * std::sin(2.0 * std::numbers::pi * (shade_fy * py + shade_fx * px) / size + shade_phase);
      const double texture = 0.015 * std::sin(2.0 * std::numbers::pi * (tex_fy * py + tex_fx * px) / size + tex_phase);
      plane(y, x) = 0.12 + shade + texture + 0.12 * label;
    }
  }
  return {Image(std::vector<Plane<double>>{plane}), mask};
}

Dataset synth_domain_dataset(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<std::pair<Image, LabelGrid>> anatomy;
  for (Index i = 0; i < spec.samples_per_domain; ++i) anatomy.push_back(render_anatomy(spec, i));

  Dataset data;
  for (Index d = 0; d < spec.num_domains; ++d) {
    const std::string name = domain_name(d);
    const double gain = spec.gains[static_cast<std::size_t>(d)];
    const double sigma = spec.noise[static_cast<std::size_t>(d)];
    auto& samples = data[name];
    for (Index i = 0; i < spec.samples_per_domain; ++i) {
      const auto& [base, mask] = anatomy[static_cast<std::size_t>(i)];
      Image image = apply_low_band_gain(base, gain, spec.band_radius());
      if (sigma > 0.0) {
        auto rng = make_rng(spec.seed, 0x4e4f4953 + static_cast<std::uint64_t>(d) * 1000003ULL +
                                           static_cast<std::uint64_t>(i));
        std::normal_distribution<double> noise(0.0, sigma);
        for (auto& plane : image.channels)
          for (Index y = 0; y < plane.rows(); ++y)
            for (Index x = 0; x < plane.cols(); ++x) plane(y, x) += noise(rng);
      }
      for (auto& plane : image.channels) plane = plane.cwiseMax(0.0).cwiseMin(1.0);
      char id[32];
      std::snprintf(id, sizeof(id), "s%04lld", static_cast<long long>(i));
      samples.push_back({std::move(image), mask, name, id});
    }
  }
  return data;
}

DatasetManifest write_dataset(const Dataset& data, const fs::path& root) {
  DatasetManifest manifest;
  std::error_code ec;
  for (const auto& [domain, samples] : data) {
    const fs::path images = root / domain / "images";
    const fs::path masks = root / domain / "masks";
    fs::create_directories(images, ec);
    require(!ec, ErrorKind::Io, "cannot create " + images.string() + ": " + ec.message());
    fs::create_directories(masks, ec);
    require(!ec, ErrorKind::Io, "cannot create " + masks.string() + ": " + ec.message());
    auto& entries = manifest.domains[domain];
    for (const auto& s : samples) {
      const fs::path image_path = images / (s.id + ".png");
      const fs::path mask_path = masks / (s.id + ".png");
      write_image(image_path, s.image);
      write_mask(mask_path, s.mask);
      entries.push_back({image_path, mask_path, domain, s.id});
    }
  }
  return manifest;
}

}  // namespace fsam
