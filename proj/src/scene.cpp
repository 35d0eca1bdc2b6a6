// SPDX-License-Identifier: Apache-2.0
#include "laser/scene.hpp"

#include <algorithm>
#include <cstdlib>

#include <fmt/format.h>

#include "laser/errors.hpp"
#include "laser/rng.hpp"
#include "laser/toy_vlm.hpp"

namespace laser {

void SceneSpec::validate() const {
    if (width <= 0 || height <= 0 || cell <= 0) throw ConfigError("scene dimensions must be positive");
    if (target_size <= 0 || target_size % cell != 0) {
        throw ConfigError(fmt::format("target size {} must be a positive multiple of the {}px cell", target_size, cell));
    }
    if (target_size > width || target_size > height) throw ConfigError("target does not fit the scene");
    const int lo = background_level - texture;
    const int hi = background_level + texture;
    if (lo < 0 || hi > 255) throw ConfigError("background level and texture leave the 0..255 range");
    // Distance from a channel value to the background interval [lo, hi].
    auto gap = [&](int c) { return c < lo ? lo - c : (c > hi ? c - hi : 0); };
    const int best = std::max({gap(target_color.r), gap(target_color.g), gap(target_color.b)});
    if (best < color_margin) {
        throw ConfigError(fmt::format("target color is within {} of the background (best channel gap {})",
                                      color_margin, best));
    }
}

Scene gen_synthetic_scene(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    Scene scene;
    scene.image = ImageBuffer(spec.width, spec.height);
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            const int jitter = spec.texture > 0 ? rng.below(2 * spec.texture + 1) - spec.texture : 0;
            const auto v = static_cast<std::uint8_t>(spec.background_level + jitter);
            scene.image.set_pixel(x, y, {v, v, v});
        }
    }

    const int cells_x = spec.width / spec.cell;
    const int cells_y = spec.height / spec.cell;
    const int span = spec.target_size / spec.cell;
    std::vector<PixelRect> taken;
    auto overlaps = [&](const PixelRect& r) {
        for (const auto& t : taken) {
            // keep one empty cell between shapes
            if (r.x0 < t.x1 + spec.cell && t.x0 < r.x1 + spec.cell && r.y0 < t.y1 + spec.cell &&
                t.y0 < r.y1 + spec.cell) {
                return true;
            }
        }
        return false;
    };
    auto place = [&](int size_cells) -> std::optional<PixelRect> {
        const int range_x = cells_x - size_cells + 1;
        const int range_y = cells_y - size_cells + 1;
        if (range_x <= 0 || range_y <= 0) return std::nullopt;
        for (int attempt = 0; attempt < 200; ++attempt) {
            const int cx = rng.below(range_x);
            const int cy = rng.below(range_y);
            PixelRect r{cx * spec.cell, cy * spec.cell, (cx + size_cells) * spec.cell, (cy + size_cells) * spec.cell};
            if (!overlaps(r)) {
                taken.push_back(r);
                return r;
            }
        }
        return std::nullopt;
    };
    auto paint = [&](const PixelRect& r, Rgb c) {
        for (int y = r.y0; y < r.y1; ++y) {
            for (int x = r.x0; x < r.x1; ++x) scene.image.set_pixel(x, y, c);
        }
    };

    const auto target = place(span);
    if (!target) throw ConfigError("scene too small to place the target");
    scene.target_box = *target;
    paint(*target, spec.target_color);
    if (spec.sink) {
        if (auto s = place(1)) {
            scene.sink_box = *s;
            paint(*s, spec.sink_color);
        }
    }
    for (int i = 0; i < spec.distractors && !spec.distractor_colors.empty(); ++i) {
        const auto r = place(span);
        if (!r) break;
        scene.distractor_boxes.push_back(*r);
        paint(*r, spec.distractor_colors[i % spec.distractor_colors.size()]);
    }
    scene.query_text = fmt::format("IS THERE A {} SQUARE?", spec.target_name);
    scene.query = vocab::encode_text(scene.query_text);
    return scene;
}

}  // namespace laser
