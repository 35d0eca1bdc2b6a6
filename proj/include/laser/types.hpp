// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace laser {

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    long long area() const { return static_cast<long long>(width()) * height(); }
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    bool operator==(const PixelRect&) const = default;
};

struct GridCell {
    int row = 0;
    int col = 0;
    bool operator==(const GridCell&) const = default;
};

// m x n visual patch grid laid over an image. Patches are indexed row-major;
// the last row and column absorb any remainder pixels.
struct GridGeometry {
    int rows = 0;
    int cols = 0;
    int image_width = 0;
    int image_height = 0;

    int patch_count() const { return rows * cols; }
    int patch_width() const { return cols > 0 ? image_width / cols : 0; }
    int patch_height() const { return rows > 0 ? image_height / rows : 0; }
    GridCell cell(int patch_index) const { return {patch_index / cols, patch_index % cols}; }
    int index(GridCell c) const { return c.row * cols + c.col; }

    // Throws ValidationError unless rows, cols > 0 and every patch is at least 1 px.
    void validate() const;
    bool operator==(const GridGeometry&) const = default;
};

// Pixel rectangle of one patch. Throws RangeError for an index outside [0, P).
PixelRect patch_rect(const GridGeometry& grid, int patch_index);

// Grid cell containing a pixel (inverse of patch_rect).
GridCell cell_of_pixel(const GridGeometry& grid, int x, int y);

// Half-open token index range.
struct TokenSpan {
    std::uint32_t start = 0;
    std::uint32_t end = 0;

    std::uint32_t size() const { return end - start; }
    bool empty() const { return end == start; }
    bool operator==(const TokenSpan&) const = default;
};

struct TokenLayout {
    TokenSpan system;
    TokenSpan visual;
    TokenSpan query;
    TokenSpan answer_prefix;

    // Spans must be well formed and ordered system < visual < query < answer.
    void validate() const;
    bool operator==(const TokenLayout&) const = default;
};

enum class ImageRole { original, cropped_positive, masked, counterfactual };

struct Rgb {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;
    bool operator==(const Rgb&) const = default;
};

// 8-bit RGB, row-major, interleaved.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    ImageRole role = ImageRole::original;
    std::vector<std::uint8_t> data;

    static constexpr int channels = 3;

    ImageBuffer() = default;
    ImageBuffer(int w, int h, Rgb fill = {}, ImageRole r = ImageRole::original);

    std::size_t offset(int x, int y) const {
        return (static_cast<std::size_t>(y) * width + x) * channels;
    }
    Rgb pixel(int x, int y) const {
        auto o = offset(x, y);
        return {data[o], data[o + 1], data[o + 2]};
    }
    void set_pixel(int x, int y, Rgb c) {
        auto o = offset(x, y);
        data[o] = c.r;
        data[o + 1] = c.g;
        data[o + 2] = c.b;
    }
    bool same_pixels(const ImageBuffer& other) const {
        return width == other.width && height == other.height && data == other.data;
    }
};

// Per-layer, per-head visual attention at the last prefill position under the
// with-query and without-query conditions. Tensors are stored flat in
// layer-major, head-major, patch-minor order.
struct AttentionTrace {
    int layers = 0;
    int heads = 0;
    int patches = 0;
    GridGeometry grid;
    TokenLayout layout;
    std::vector<float> with_query;
    std::vector<float> without_query;
    std::string source_id;

    static constexpr double kRowSumSlack = 1e-4;

    std::size_t row_offset(int layer, int head) const {
        return (static_cast<std::size_t>(layer) * heads + head) * patches;
    }
    std::span<const float> with_row(int layer, int head) const {
        return {with_query.data() + row_offset(layer, head), static_cast<std::size_t>(patches)};
    }
    std::span<const float> without_row(int layer, int head) const {
        return {without_query.data() + row_offset(layer, head), static_cast<std::size_t>(patches)};
    }
    std::size_t element_count() const {
        return static_cast<std::size_t>(layers) * heads * patches;
    }

    // Throws ValidationError on any broken invariant, naming the (layer, head)
    // row for weight problems.
    void validate() const;
};

// Field-for-field equality with bitwise float comparison.
bool bit_equal(const AttentionTrace& a, const AttentionTrace& b);

enum class DecodeMode { greedy, sample };
enum class CropCenter { peak, centroid };
enum class MaskFill { gray, black, mean };

struct PipelineConfig {
    std::optional<int> k_head;   // default ceil(H / 4)
    std::optional<int> k_patch;  // default ceil(P / 20)
    double alpha = 1.0;
    int min_crop = 224;
    double crop_fraction = 0.5;
    DecodeMode decode_mode = DecodeMode::greedy;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    bool vat_enabled = true;
    std::optional<int> fixed_layer;  // bypasses VAQ layer selection
    CropCenter crop_center = CropCenter::peak;
    MaskFill mask_fill = MaskFill::gray;
    // When set, VAT is skipped for instances whose VAQ spread (max - mean over
    // layers) falls below this threshold.
    std::optional<double> vat_gate_spread;

    int resolved_k_head(int heads) const;
    int resolved_k_patch(int patches) const;

    void validate() const;
    // Also checks the bounds that depend on the trace shape.
    void validate_for(const AttentionTrace& trace) const;
};

const char* to_string(DecodeMode m);
const char* to_string(CropCenter c);
const char* to_string(MaskFill f);
const char* to_string(ImageRole r);

}  // namespace laser
