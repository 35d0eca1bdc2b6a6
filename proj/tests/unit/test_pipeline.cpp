// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "laser/errors.hpp"
#include "laser/eval.hpp"
#include "laser/image_io.hpp"
#include "laser/pipeline.hpp"
#include "oracles.hpp"

using namespace laser;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("laser_test_" + name);
}

SyntheticTrace planted(std::uint64_t seed) {
    SyntheticTraceSpec spec;
    spec.layers = 8;
    spec.heads = 4;
    spec.signal_layer = 5;
    spec.signal_patches = patch_block(spec.grid, 10, 3, 4);
    spec.seed = seed;
    return gen_synthetic_trace(spec);
}

}  // namespace

TEST_CASE("localize ties the stages together") {
    const auto s = planted(1);
    PipelineConfig c;
    const auto plan = localize(s.trace, c);
    CHECK(plan.selected_layer() == 5);
    CHECK(plan.peak == peak_patch(plan.map));
    CHECK(plan.box == crop_box(plan.peak, s.trace.grid, c));
    CHECK(plan.patches.size() == 29);
    CHECK(plan.box.width() == 224);
    c.k_head = 9;
    CHECK_THROWS_AS(localize(s.trace, c), ConfigError);
}

TEST_CASE("crop plan JSON round trip") {
    const auto s = planted(2);
    const auto plan = localize(s.trace, PipelineConfig{});
    const auto j = plan_to_json(plan, s.trace);
    CHECK(j["layer_vaq"].size() == 8);
    CHECK(j["patch_rects"].size() == plan.patches.size());
    CHECK(j["source_id"] == s.trace.source_id);
    const auto back = crop_plan_from_json(nlohmann::json::parse(j.dump()));
    CHECK(back.selected_layer == plan.selected_layer());
    CHECK(back.selected_heads == plan.profile.top_heads(5).heads);
    CHECK(back.peak == plan.peak);
    CHECK(back.box == plan.box);
    CHECK(back.patches == plan.patches.indices);
    CHECK(back.grid == s.trace.grid);

    auto broken = j;
    broken.erase("crop_box");
    CHECK_THROWS_AS(crop_plan_from_json(broken), ValidationError);
    broken = j;
    broken["peak"]["row"] = "x";
    CHECK_THROWS_AS(crop_plan_from_json(broken), ValidationError);
}

TEST_CASE("vaq spread") {
    VaqProfile p;
    p.layer_scores = {1.0, 2.0, 6.0};
    CHECK(vaq_spread(p) == doctest::Approx(3.0));
    CHECK(vaq_spread(VaqProfile{}) == 0.0);
}

TEST_CASE("run_laser stages and images") {
    const auto s = make_scripted_model("mid-layer-grounding");
    const auto scene = gen_synthetic_scene(scenario_scene_spec(s.truth), 4);
    PipelineConfig c;
    c.min_crop = 64;
    const auto run = run_laser(s.model, scene.image, scene.query, c, {2});
    CHECK(run.vat_applied);
    CHECK(run.decode.streams_opened == 2);
    CHECK(run.positive.same_pixels(apply_crop(run.image, run.plan.box)));
    CHECK(run.negative.same_pixels(
        build_counterfactual(run.image, run.plan.box, run.plan.patches, run.trace.grid)));
    CHECK(run.decode.tokens.size() <= 2);

    c.vat_enabled = false;
    const auto off = run_laser(s.model, scene.image, scene.query, c, {2});
    CHECK_FALSE(off.vat_applied);
    CHECK(off.decode.streams_opened == 1);

    // A gate above any reachable spread turns VAT off.
    c.vat_enabled = true;
    c.vat_gate_spread = 1e9;
    CHECK_FALSE(run_laser(s.model, scene.image, scene.query, c, {2}).vat_applied);

    RunOptions vcd{2, Contrast::vcd, 500};
    c.vat_gate_spread.reset();
    const auto v = run_laser(s.model, scene.image, scene.query, c, vcd);
    CHECK(v.negative.same_pixels(vcd_counterfactual(v.positive, 500, c.seed)));
    CHECK_THROWS_AS(run_laser(s.model, scene.image, scene.query, c, {0}), ConfigError);
}

TEST_CASE("heatmap rendering") {
    ImageBuffer img(40, 40, {10, 20, 30});
    const GridGeometry g{4, 4, 40, 40};
    PatchMap zero{0, g, std::vector<double>(16, 0.0)};
    CHECK(render_heatmap(zero, img).same_pixels(img));

    PatchMap hot = zero;
    hot.values[5] = 2.0;  // cell (1, 1), center (15, 15)
    const auto out = render_heatmap(hot, img);
    // Pixel 15 sits at grid coordinate 15.5 * 4 / 40 - 0.5 = 1.05, so the
    // bilinear weight of cell (1, 1) is 0.95^2 and the rest are zero.
    const double v = 0.95 * 0.95;
    const double a = 0.6 * v;
    const auto p = out.pixel(15, 15);
    CHECK(p.r == static_cast<int>(std::lround((1 - a) * 10 + a * 255)));
    CHECK(p.g == static_cast<int>(std::lround((1 - a) * 20 + a * 255)));
    CHECK(p.b == static_cast<int>(std::lround((1 - a) * 30 + a * 255 * (3 * v - 2))));
    // Far corner keeps the input.
    CHECK(out.pixel(39, 39) == img.pixel(39, 39));

    const auto boxed = render_heatmap(zero, img, CropBox{10, 10, 30, 30});
    CHECK(boxed.pixel(10, 20) == Rgb{0, 255, 0});
    CHECK(boxed.pixel(11, 20) == Rgb{0, 255, 0});
    CHECK(boxed.pixel(12, 20) == img.pixel(12, 20));
    CHECK(boxed.pixel(5, 5) == img.pixel(5, 5));

    PatchMap wrong{0, {4, 4, 80, 40}, std::vector<double>(16, 1.0)};
    CHECK_THROWS_AS(render_heatmap(wrong, img), GeometryError);
}

TEST_CASE("image file round trips") {
    Rng rng(3);
    ImageBuffer img(13, 7);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.below(256));
    const auto png = temp_file("img.png");
    const auto ppm = temp_file("img.ppm");
    write_image(img, png);
    write_image(img, ppm);
    CHECK(read_image(png).same_pixels(img));
    CHECK(read_image(ppm).same_pixels(img));
    std::ifstream probe(png, std::ios::binary);
    char sig[4] = {};
    probe.read(sig, 4);
    CHECK(std::string(sig + 1, 3) == "PNG");

    {
        std::ofstream junk(ppm, std::ios::binary);
        junk << "hello world";
    }
    CHECK_THROWS_AS(read_image(ppm), FormatError);
    {
        std::ofstream trunc(ppm, std::ios::binary);
        trunc << "P6\n4 4\n255\nabc";
    }
    CHECK_THROWS_AS(read_image(ppm), FormatError);
    std::filesystem::remove(png);
    std::filesystem::remove(ppm);
    CHECK_THROWS_AS(read_image(temp_file("missing.png")), IoError);
}
