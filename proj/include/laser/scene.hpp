// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "laser/types.hpp"

namespace laser {

// Procedural scene: one colored target square among distractor squares on a
// neutral textured background. Shapes sit on a `cell`-pixel lattice.
struct SceneSpec {
    int width = 96;
    int height = 96;
    int cell = 8;
    int target_size = 16;
    Rgb target_color{230, 20, 20};
    std::string target_name = "RED";
    int distractors = 3;
    std::vector<Rgb> distractor_colors{{20, 190, 40}, {30, 60, 220}, {20, 190, 200}};
    int background_level = 60;
    int texture = 12;       // per-pixel gray jitter amplitude
    int color_margin = 80;  // min L-inf distance from target color to any background pixel
    bool sink = false;      // adds one bright cell that draws attention regardless of the query
    Rgb sink_color{255, 255, 255};

    void validate() const;
};

struct Scene {
    ImageBuffer image;
    PixelRect target_box;
    std::vector<PixelRect> distractor_boxes;
    std::optional<PixelRect> sink_box;
    std::string query_text;
    std::vector<int> query;
};

// Fully determined by (spec, seed).
Scene gen_synthetic_scene(const SceneSpec& spec, std::uint64_t seed);

}  // namespace laser
