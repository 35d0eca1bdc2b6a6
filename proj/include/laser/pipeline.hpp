// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "laser/contrastive.hpp"
#include "laser/decoding.hpp"
#include "laser/localization.hpp"
#include "laser/toy_vlm.hpp"

namespace laser {

// Stage-1 output: where to look and what to hide.
struct LocalizationPlan {
    VaqProfile profile;
    PatchMap map;
    GridCell peak;
    CropBox box;
    PatchSet patches;

    int selected_layer() const { return profile.selected_layer; }
};

LocalizationPlan localize(const AttentionTrace& trace, const PipelineConfig& config);

// JSON crop plan consumed by external two-stage drivers.
nlohmann::json plan_to_json(const LocalizationPlan& plan, const AttentionTrace& trace);

// Parses the fields written by plan_to_json that a driver needs: selected
// layer, peak, box and patch list. Throws ValidationError on missing fields.
struct CropPlan {
    int selected_layer = 0;
    std::vector<int> selected_heads;
    GridCell peak;
    CropBox box;
    std::vector<int> patches;
    GridGeometry grid;
};
CropPlan crop_plan_from_json(const nlohmann::json& j);

enum class Contrast { laser, vcd };
const char* to_string(Contrast c);

struct RunOptions {
    int max_new_tokens = 8;
    Contrast contrast = Contrast::laser;
    int noise_steps = 500;  // VCD only
};

struct StageTimings {
    double trace_ms = 0.0;
    double localize_ms = 0.0;
    double decode_ms = 0.0;
};

struct LaserRun {
    ImageBuffer image;  // the region the model actually sees
    AttentionTrace trace;
    LocalizationPlan plan;
    ImageBuffer positive;
    ImageBuffer negative;
    DecodeResult decode;
    bool vat_applied = false;
    StageTimings timings;
};

// Full two-stage pipeline on the toy model.
LaserRun run_laser(const ToyVlm& model, const ImageBuffer& image, std::span<const int> query,
                   const PipelineConfig& config, const RunOptions& options = {});

// VAQ spread used by the optional VAT gate: max minus mean of layer scores.
double vaq_spread(const VaqProfile& profile);

}  // namespace laser
