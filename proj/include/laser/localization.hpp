// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <utility>
#include <vector>

#include "laser/contrastive.hpp"
#include "laser/types.hpp"

namespace laser {

// Patch-level attention map over a grid (non-negative, length P).
struct PatchMap {
    int layer = 0;
    GridGeometry grid;
    std::vector<double> values;
};

// Pixel-space crop rectangle, half-open.
using CropBox = PixelRect;

// Selected patches, strongest first; ties resolved by ascending index.
struct PatchSet {
    std::vector<int> indices;

    bool contains(int index) const;
    std::size_t size() const { return indices.size(); }
};

// Mean contrastive map over the selected heads of the selected layer.
PatchMap aggregate_layer_map(const AttentionTrace& trace, const VaqProfile& profile);
PatchMap aggregate_layer_map(std::span<const AttentionTrace> steps, const VaqProfile& profile);

// Mean contrastive map over explicit heads of one layer.
PatchMap contrastive_layer_map(const AttentionTrace& trace, int layer, std::span<const int> heads);

// Mean raw with-query attention over all heads of one layer.
PatchMap raw_layer_map(const AttentionTrace& trace, int layer);

// Argmax cell, lowest index on ties.
GridCell peak_patch(const PatchMap& map);

// Attention-weighted centroid in pixels; falls back to the peak patch center
// for an all-zero map.
std::pair<double, double> attention_centroid(const PatchMap& map);

std::pair<double, double> patch_center(const GridGeometry& grid, GridCell cell);

// Crop dimensions: max(round(fraction * dim), min_crop), capped at dim.
std::pair<int, int> crop_dimensions(int image_width, int image_height, const PipelineConfig& config);

// Box of crop_dimensions centered on (cx, cy), translated to fit the image.
CropBox crop_box_at(double cx, double cy, int image_width, int image_height, const PipelineConfig& config);
CropBox crop_box(GridCell peak, const GridGeometry& grid, const PipelineConfig& config);

// Centers on the peak patch or the attention centroid per config.crop_center.
CropBox crop_box_for(const PatchMap& map, const PipelineConfig& config);

// Throws GeometryError when the box is empty or leaves the image.
ImageBuffer apply_crop(const ImageBuffer& image, const CropBox& box);

PatchSet top_k_patches(std::span<const double> values, int k);
PatchSet top_k_patches(const PatchMap& map, const PipelineConfig& config);

Rgb mask_color(const ImageBuffer& image, MaskFill fill);

// Fills every selected patch rect. Throws GeometryError when the grid does not
// describe this image.
ImageBuffer mask_patches(const ImageBuffer& image, const PatchSet& patches, const GridGeometry& grid,
                         MaskFill fill = MaskFill::gray);

// Crop of the masked original: I- = crop(mask(I)).
ImageBuffer build_counterfactual(const ImageBuffer& image, const CropBox& box, const PatchSet& patches,
                                 const GridGeometry& grid, MaskFill fill = MaskFill::gray);

}  // namespace laser
