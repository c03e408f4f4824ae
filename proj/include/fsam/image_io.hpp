#pragma once

#include <filesystem>

#include "fsam/spectral.hpp"
#include "fsam/tensor.hpp"

namespace fsam {

/// Reads an 8-bit PNG as grayscale or RGB, scaled to [0, 1].
Image read_image(const std::filesystem::path& path);
/// Reads an integer-labelled grayscale PNG.
LabelGrid read_mask(const std::filesystem::path& path);

/// Writes 1- or 3-channel images as 8-bit PNG; values are clamped to [0, 1].
void write_image(const std::filesystem::path& path, const Image& image);
void write_plane(const std::filesystem::path& path, const Plane<double>& values);
void write_mask(const std::filesystem::path& path, const LabelGrid& mask);

}  // namespace fsam
