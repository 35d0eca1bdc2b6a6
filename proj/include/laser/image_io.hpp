// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>

#include "laser/localization.hpp"
#include "laser/types.hpp"

namespace laser {

// PNG (8-bit gray, gray+alpha, RGB or RGBA; alpha is dropped) or binary PPM.
// The format is sniffed from the first bytes. Throws IoError or FormatError.
ImageBuffer read_image(const std::filesystem::path& path);

void write_png(const ImageBuffer& image, const std::filesystem::path& path);
void write_ppm(const ImageBuffer& image, const std::filesystem::path& path);

// PPM for a .ppm extension, PNG otherwise.
void write_image(const ImageBuffer& image, const std::filesystem::path& path);

// Overlay of a patch map on its image. The map is bilinearly upsampled between
// patch centers, scaled by its maximum to v in [0, 1], colored with the "hot"
// ramp (r = 3v, g = 3v - 1, b = 3v - 2, each clamped) and blended with alpha
// 0.6 v. The optional box is outlined 2 px wide in green. Throws
// GeometryError when the map grid does not cover the image.
ImageBuffer render_heatmap(const PatchMap& map, const ImageBuffer& image, const std::optional<CropBox>& box = {});

inline constexpr double kHeatmapMaxAlpha = 0.6;

}  // namespace laser
