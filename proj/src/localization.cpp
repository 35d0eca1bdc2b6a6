// SPDX-License-Identifier: Apache-2.0
#include "laser/localization.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "laser/errors.hpp"

namespace laser {

bool PatchSet::contains(int index) const {
    return std::find(indices.begin(), indices.end(), index) != indices.end();
}

PatchMap contrastive_layer_map(const AttentionTrace& trace, int layer, std::span<const int> heads) {
    if (heads.empty()) throw ConfigError("no heads to aggregate");
    PatchMap map;
    map.layer = layer;
    map.grid = trace.grid;
    map.values.assign(trace.patches, 0.0);
    for (int h : heads) {
        const auto c = contrastive_map(trace, layer, h);
        for (int p = 0; p < trace.patches; ++p) map.values[p] += c.values[p];
    }
    for (auto& v : map.values) v /= static_cast<double>(heads.size());
    return map;
}

PatchMap aggregate_layer_map(const AttentionTrace& trace, const VaqProfile& profile) {
    return aggregate_layer_map(std::span<const AttentionTrace>(&trace, 1), profile);
}

PatchMap aggregate_layer_map(std::span<const AttentionTrace> steps, const VaqProfile& profile) {
    if (steps.size() != static_cast<std::size_t>(profile.steps())) {
        throw ShapeError(fmt::format("profile covers {} steps but {} traces given", profile.steps(), steps.size()));
    }
    const int layer = profile.selected_layer;
    PatchMap map;
    map.layer = layer;
    map.grid = steps.front().grid;
    map.values.assign(steps.front().patches, 0.0);
    for (std::size_t t = 0; t < steps.size(); ++t) {
        const auto& heads = profile.top_heads(layer, static_cast<int>(t)).heads;
        const auto step_map = contrastive_layer_map(steps[t], layer, heads);
        for (std::size_t p = 0; p < map.values.size(); ++p) map.values[p] += step_map.values[p];
    }
    for (auto& v : map.values) v /= static_cast<double>(steps.size());
    return map;
}

PatchMap raw_layer_map(const AttentionTrace& trace, int layer) {
    if (layer < 0 || layer >= trace.layers) {
        throw RangeError(fmt::format("layer {} outside [0, {})", layer, trace.layers));
    }
    PatchMap map;
    map.layer = layer;
    map.grid = trace.grid;
    map.values.assign(trace.patches, 0.0);
    for (int h = 0; h < trace.heads; ++h) {
        const auto row = trace.with_row(layer, h);
        for (int p = 0; p < trace.patches; ++p) map.values[p] += row[p];
    }
    for (auto& v : map.values) v /= trace.heads;
    return map;
}

GridCell peak_patch(const PatchMap& map) {
    return map.grid.cell(argmax_lowest(map.values));
}

std::pair<double, double> patch_center(const GridGeometry& grid, GridCell cell) {
    const auto r = patch_rect(grid, grid.index(cell));
    return {(r.x0 + r.x1) / 2.0, (r.y0 + r.y1) / 2.0};
}

std::pair<double, double> attention_centroid(const PatchMap& map) {
    double total = 0.0, cx = 0.0, cy = 0.0;
    for (int p = 0; p < static_cast<int>(map.values.size()); ++p) {
        const auto [x, y] = patch_center(map.grid, map.grid.cell(p));
        total += map.values[p];
        cx += map.values[p] * x;
        cy += map.values[p] * y;
    }
    if (total <= 0.0) return patch_center(map.grid, peak_patch(map));
    return {cx / total, cy / total};
}

std::pair<int, int> crop_dimensions(int image_width, int image_height, const PipelineConfig& config) {
    auto dim = [&](int full) {
        const int scaled = static_cast<int>(std::lround(config.crop_fraction * full));
        return std::min(std::max(scaled, config.min_crop), full);
    };
    return {dim(image_width), dim(image_height)};
}

CropBox crop_box_at(double cx, double cy, int image_width, int image_height, const PipelineConfig& config) {
    if (image_width <= 0 || image_height <= 0) {
        throw GeometryError(fmt::format("cannot crop a {}x{} image", image_width, image_height));
    }
    const auto [w, h] = crop_dimensions(image_width, image_height, config);
    auto place = [](double center, int size, int full) {
        const int start = static_cast<int>(std::floor(center - size / 2.0));
        return std::clamp(start, 0, full - size);
    };
    CropBox box;
    box.x0 = place(cx, w, image_width);
    box.y0 = place(cy, h, image_height);
    box.x1 = box.x0 + w;
    box.y1 = box.y0 + h;
    return box;
}

CropBox crop_box(GridCell peak, const GridGeometry& grid, const PipelineConfig& config) {
    const auto [cx, cy] = patch_center(grid, peak);
    return crop_box_at(cx, cy, grid.image_width, grid.image_height, config);
}

CropBox crop_box_for(const PatchMap& map, const PipelineConfig& config) {
    if (config.crop_center == CropCenter::centroid) {
        const auto [cx, cy] = attention_centroid(map);
        return crop_box_at(cx, cy, map.grid.image_width, map.grid.image_height, config);
    }
    return crop_box(peak_patch(map), map.grid, config);
}

ImageBuffer apply_crop(const ImageBuffer& image, const CropBox& box) {
    if (box.x0 < 0 || box.y0 < 0 || box.x1 > image.width || box.y1 > image.height || box.x0 >= box.x1 ||
        box.y0 >= box.y1) {
        throw GeometryError(fmt::format("crop box ({}, {}, {}, {}) is not inside the {}x{} image", box.x0, box.y0,
                                        box.x1, box.y1, image.width, image.height));
    }
    ImageBuffer out(box.width(), box.height(), {}, ImageRole::cropped_positive);
    const std::size_t row_bytes = static_cast<std::size_t>(box.width()) * ImageBuffer::channels;
    for (int y = 0; y < box.height(); ++y) {
        const auto src = image.data.begin() + static_cast<std::ptrdiff_t>(image.offset(box.x0, box.y0 + y));
        std::copy(src, src + static_cast<std::ptrdiff_t>(row_bytes),
                  out.data.begin() + static_cast<std::ptrdiff_t>(out.offset(0, y)));
    }
    return out;
}

PatchSet top_k_patches(std::span<const double> values, int k) {
    if (k < 0) throw ConfigError(fmt::format("k_patch {} is negative", k));
    const int n = static_cast<int>(values.size());
    const int take = std::min(k, n);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + take, order.end(), [&](int a, int b) {
        return values[a] > values[b] || (values[a] == values[b] && a < b);
    });
    order.resize(take);
    return {std::move(order)};
}

PatchSet top_k_patches(const PatchMap& map, const PipelineConfig& config) {
    return top_k_patches(map.values, config.resolved_k_patch(static_cast<int>(map.values.size())));
}

Rgb mask_color(const ImageBuffer& image, MaskFill fill) {
    switch (fill) {
        case MaskFill::gray: return {127, 127, 127};
        case MaskFill::black: return {0, 0, 0};
        case MaskFill::mean: {
            std::uint64_t sum[3] = {0, 0, 0};
            const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
            if (n == 0) return {127, 127, 127};
            for (std::size_t i = 0; i < image.data.size(); ++i) sum[i % 3] += image.data[i];
            auto avg = [&](int c) { return static_cast<std::uint8_t>((sum[c] + n / 2) / n); };
            return {avg(0), avg(1), avg(2)};
        }
    }
    return {127, 127, 127};
}

ImageBuffer mask_patches(const ImageBuffer& image, const PatchSet& patches, const GridGeometry& grid, MaskFill fill) {
    if (grid.image_width != image.width || grid.image_height != image.height) {
        throw GeometryError(fmt::format("grid describes a {}x{} image but the image is {}x{}", grid.image_width,
                                        grid.image_height, image.width, image.height));
    }
    ImageBuffer out = image;
    out.role = ImageRole::masked;
    const Rgb color = mask_color(image, fill);
    for (int index : patches.indices) {
        const auto r = patch_rect(grid, index);
        for (int y = r.y0; y < r.y1; ++y) {
            for (int x = r.x0; x < r.x1; ++x) out.set_pixel(x, y, color);
        }
    }
    return out;
}

ImageBuffer build_counterfactual(const ImageBuffer& image, const CropBox& box, const PatchSet& patches,
                                 const GridGeometry& grid, MaskFill fill) {
    ImageBuffer out = apply_crop(mask_patches(image, patches, grid, fill), box);
    out.role = ImageRole::counterfactual;
    return out;
}

}  // namespace laser
