// SPDX-License-Identifier: Apache-2.0
#include "laser/pipeline.hpp"

#include <algorithm>
#include <chrono>

#include <fmt/format.h>

#include "laser/errors.hpp"

namespace laser {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

nlohmann::json box_json(const PixelRect& r) { return {{"x0", r.x0}, {"y0", r.y0}, {"x1", r.x1}, {"y1", r.y1}}; }

template <typename T>
T field(const nlohmann::json& j, const char* key) {
    if (!j.contains(key)) throw ValidationError(fmt::format("crop plan is missing '{}'", key));
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(fmt::format("crop plan field '{}': {}", key, e.what()));
    }
}

}  // namespace

const char* to_string(Contrast c) { return c == Contrast::laser ? "laser" : "vcd"; }

LocalizationPlan localize(const AttentionTrace& trace, const PipelineConfig& config) {
    config.validate_for(trace);
    LocalizationPlan plan;
    plan.profile = layer_vaq(trace, config);
    plan.map = aggregate_layer_map(trace, plan.profile);
    plan.peak = peak_patch(plan.map);
    plan.box = crop_box_for(plan.map, config);
    plan.patches = top_k_patches(plan.map, config);
    return plan;
}

nlohmann::json plan_to_json(const LocalizationPlan& plan, const AttentionTrace& trace) {
    const int layer = plan.selected_layer();
    const auto& sel = plan.profile.top_heads(layer);
    nlohmann::json rects = nlohmann::json::array();
    for (int p : plan.patches.indices) rects.push_back(box_json(patch_rect(trace.grid, p)));
    return {
        {"selected_layer", layer},
        {"selected_heads", sel.heads},
        {"layer_vaq", plan.profile.layer_scores},
        {"peak", {{"row", plan.peak.row}, {"col", plan.peak.col}}},
        {"crop_box", box_json(plan.box)},
        {"patches", plan.patches.indices},
        {"patch_rects", rects},
        {"grid",
         {{"rows", trace.grid.rows},
          {"cols", trace.grid.cols},
          {"image_width", trace.grid.image_width},
          {"image_height", trace.grid.image_height}}},
        {"source_id", trace.source_id},
    };
}

CropPlan crop_plan_from_json(const nlohmann::json& j) {
    CropPlan plan;
    plan.selected_layer = field<int>(j, "selected_layer");
    plan.selected_heads = field<std::vector<int>>(j, "selected_heads");
    const auto peak = field<nlohmann::json>(j, "peak");
    plan.peak = {field<int>(peak, "row"), field<int>(peak, "col")};
    const auto box = field<nlohmann::json>(j, "crop_box");
    plan.box = {field<int>(box, "x0"), field<int>(box, "y0"), field<int>(box, "x1"), field<int>(box, "y1")};
    plan.patches = field<std::vector<int>>(j, "patches");
    const auto grid = field<nlohmann::json>(j, "grid");
    plan.grid = {field<int>(grid, "rows"), field<int>(grid, "cols"), field<int>(grid, "image_width"),
                 field<int>(grid, "image_height")};
    plan.grid.validate();
    return plan;
}

double vaq_spread(const VaqProfile& profile) {
    if (profile.layer_scores.empty()) return 0.0;
    double sum = 0.0;
    for (double s : profile.layer_scores) sum += s;
    const double mean = sum / static_cast<double>(profile.layer_scores.size());
    return *std::max_element(profile.layer_scores.begin(), profile.layer_scores.end()) - mean;
}

LaserRun run_laser(const ToyVlm& model, const ImageBuffer& image, std::span<const int> query,
                   const PipelineConfig& config, const RunOptions& options) {
    config.validate();
    if (options.max_new_tokens <= 0) {
        throw ConfigError(fmt::format("max_new_tokens must be positive, got {}", options.max_new_tokens));
    }
    LaserRun run;
    auto t0 = Clock::now();
    run.image = model.fit_image(image);
    run.trace = model.make_paired_trace(run.image, query);
    run.timings.trace_ms = ms_since(t0);

    t0 = Clock::now();
    run.plan = localize(run.trace, config);
    run.positive = apply_crop(run.image, run.plan.box);
    if (options.contrast == Contrast::laser) {
        run.negative = build_counterfactual(run.image, run.plan.box, run.plan.patches, run.trace.grid,
                                            config.mask_fill);
    } else {
        run.negative = vcd_counterfactual(run.positive, options.noise_steps, config.seed);
        run.negative.role = ImageRole::counterfactual;
    }
    run.timings.localize_ms = ms_since(t0);

    t0 = Clock::now();
    PipelineConfig decode_config = config;
    if (config.vat_gate_spread && vaq_spread(run.plan.profile) < *config.vat_gate_spread) {
        decode_config.vat_enabled = false;
    }
    run.vat_applied = decode_config.vat_enabled;
    const ToyBackend backend(model);
    const std::vector<int> q(query.begin(), query.end());
    run.decode = decode_pair(backend, {run.positive, q}, {run.negative, q}, decode_config, options.max_new_tokens);
    run.timings.decode_ms = ms_since(t0);
    return run;
}

}  // namespace laser
