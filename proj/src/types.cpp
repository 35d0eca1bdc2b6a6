// SPDX-License-Identifier: Apache-2.0
#include "laser/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <fmt/format.h>

#include "laser/errors.hpp"

namespace laser {

void GridGeometry::validate() const {
    if (rows <= 0 || cols <= 0) {
        throw ValidationError(fmt::format("grid {}x{} must have positive dimensions", rows, cols));
    }
    if (image_width < cols || image_height < rows) {
        throw ValidationError(fmt::format("grid {}x{} does not fit a {}x{} image (patches under 1 px)",
                                          rows, cols, image_width, image_height));
    }
}

PixelRect patch_rect(const GridGeometry& grid, int patch_index) {
    if (patch_index < 0 || patch_index >= grid.patch_count()) {
        throw RangeError(fmt::format("patch index {} outside [0, {})", patch_index, grid.patch_count()));
    }
    const int pw = grid.patch_width();
    const int ph = grid.patch_height();
    const auto c = grid.cell(patch_index);
    PixelRect r;
    r.x0 = c.col * pw;
    r.y0 = c.row * ph;
    r.x1 = c.col == grid.cols - 1 ? grid.image_width : r.x0 + pw;
    r.y1 = c.row == grid.rows - 1 ? grid.image_height : r.y0 + ph;
    return r;
}

GridCell cell_of_pixel(const GridGeometry& grid, int x, int y) {
    if (x < 0 || y < 0 || x >= grid.image_width || y >= grid.image_height) {
        throw RangeError(fmt::format("pixel ({}, {}) outside {}x{} image", x, y, grid.image_width,
                                     grid.image_height));
    }
    return {std::min(y / grid.patch_height(), grid.rows - 1), std::min(x / grid.patch_width(), grid.cols - 1)};
}

void TokenLayout::validate() const {
    const TokenSpan* spans[] = {&system, &visual, &query, &answer_prefix};
    const char* names[] = {"system", "visual", "query", "answer_prefix"};
    for (int i = 0; i < 4; ++i) {
        if (spans[i]->end < spans[i]->start) {
            throw ValidationError(fmt::format("{} span [{}, {}) is inverted", names[i], spans[i]->start,
                                              spans[i]->end));
        }
        if (i > 0 && spans[i]->start < spans[i - 1]->end) {
            throw ValidationError(fmt::format("{} span overlaps or precedes {} span", names[i], names[i - 1]));
        }
    }
}

ImageBuffer::ImageBuffer(int w, int h, Rgb fill, ImageRole r) : width(w), height(h), role(r) {
    if (w < 0 || h < 0) {
        throw GeometryError(fmt::format("negative image size {}x{}", w, h));
    }
    data.resize(static_cast<std::size_t>(w) * h * channels);
    for (std::size_t i = 0; i < data.size(); i += channels) {
        data[i] = fill.r;
        data[i + 1] = fill.g;
        data[i + 2] = fill.b;
    }
}

void AttentionTrace::validate() const {
    if (layers <= 0 || heads <= 0 || patches <= 0) {
        throw ValidationError(fmt::format("trace shape L={} H={} P={} must be positive", layers, heads, patches));
    }
    grid.validate();
    if (grid.patch_count() != patches) {
        throw ValidationError(
            fmt::format("grid {}x{} holds {} patches but trace has P={}", grid.rows, grid.cols, grid.patch_count(), patches));
    }
    layout.validate();
    if (layout.visual.size() != static_cast<std::uint32_t>(patches)) {
        throw ValidationError(fmt::format("visual span holds {} tokens but P={}", layout.visual.size(), patches));
    }
    if (with_query.size() != element_count() || without_query.size() != element_count()) {
        throw ValidationError(fmt::format("tensor sizes {}/{} do not match L*H*P={}", with_query.size(),
                                          without_query.size(), element_count()));
    }
    auto check = [&](const std::vector<float>& t, const char* cond) {
        for (int l = 0; l < layers; ++l) {
            for (int h = 0; h < heads; ++h) {
                const auto off = row_offset(l, h);
                double sum = 0.0;
                for (int p = 0; p < patches; ++p) {
                    const float w = t[off + p];
                    if (!std::isfinite(w) || w < 0.0f) {
                        throw ValidationError(fmt::format("{} weight at (layer {}, head {}, patch {}) is {}", cond, l,
                                                          h, p, w));
                    }
                    sum += w;
                }
                if (sum > 1.0 + kRowSumSlack) {
                    throw ValidationError(
                        fmt::format("{} visual attention at (layer {}, head {}) sums to {} > 1", cond, l, h, sum));
                }
            }
        }
    };
    check(with_query, "with_query");
    check(without_query, "without_query");
}

bool bit_equal(const AttentionTrace& a, const AttentionTrace& b) {
    auto same_bits = [](const std::vector<float>& x, const std::vector<float>& y) {
        return x.size() == y.size() && (x.empty() || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0);
    };
    return a.layers == b.layers && a.heads == b.heads && a.patches == b.patches && a.grid == b.grid &&
           a.layout == b.layout && a.source_id == b.source_id && same_bits(a.with_query, b.with_query) &&
           same_bits(a.without_query, b.without_query);
}

int PipelineConfig::resolved_k_head(int heads) const {
    return k_head ? *k_head : std::max(1, (heads + 3) / 4);
}

int PipelineConfig::resolved_k_patch(int patches) const {
    return k_patch ? *k_patch : std::max(1, (patches + 19) / 20);
}

void PipelineConfig::validate() const {
    if (k_head && *k_head <= 0) throw ConfigError(fmt::format("k_head must be positive, got {}", *k_head));
    if (k_patch && *k_patch <= 0) throw ConfigError(fmt::format("k_patch must be positive, got {}", *k_patch));
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError(fmt::format("alpha must be >= 0, got {}", alpha));
    if (min_crop <= 0) throw ConfigError(fmt::format("min_crop must be positive, got {}", min_crop));
    if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) {
        throw ConfigError(fmt::format("crop_fraction must lie in (0, 1], got {}", crop_fraction));
    }
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ConfigError(fmt::format("temperature must be positive, got {}", temperature));
    }
    if (fixed_layer && *fixed_layer < 0) throw ConfigError(fmt::format("fixed layer {} is negative", *fixed_layer));
}

void PipelineConfig::validate_for(const AttentionTrace& trace) const {
    validate();
    if (resolved_k_head(trace.heads) > trace.heads) {
        throw ConfigError(fmt::format("k_head {} exceeds head count {}", resolved_k_head(trace.heads), trace.heads));
    }
    if (fixed_layer && *fixed_layer >= trace.layers) {
        throw ConfigError(fmt::format("fixed layer {} outside trace with {} layers", *fixed_layer, trace.layers));
    }
}

const char* to_string(DecodeMode m) { return m == DecodeMode::greedy ? "greedy" : "sample"; }
const char* to_string(CropCenter c) { return c == CropCenter::peak ? "peak" : "centroid"; }
const char* to_string(MaskFill f) {
    switch (f) {
        case MaskFill::gray: return "gray";
        case MaskFill::black: return "black";
        case MaskFill::mean: return "mean";
    }
    return "gray";
}
const char* to_string(ImageRole r) {
    switch (r) {
        case ImageRole::original: return "original";
        case ImageRole::cropped_positive: return "cropped_positive";
        case ImageRole::masked: return "masked";
        case ImageRole::counterfactual: return "counterfactual";
    }
    return "original";
}

}  // namespace laser
