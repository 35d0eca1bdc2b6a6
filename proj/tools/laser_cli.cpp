// SPDX-License-Identifier: Apache-2.0
// laser: command-line front end for the engine.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "laser/coprocess.hpp"
#include "laser/errors.hpp"
#include "laser/eval.hpp"
#include "laser/image_io.hpp"
#include "laser/pipeline.hpp"
#include "laser/scene.hpp"
#include "laser/toy_vlm.hpp"
#include "laser/trace_io.hpp"

namespace fs = std::filesystem;
using namespace laser;

namespace {

enum Exit : int { kOk = 0, kValidation = 1, kIo = 2, kProtocol = 3 };

const std::map<std::string, DecodeMode> kDecodeModes{{"greedy", DecodeMode::greedy}, {"sample", DecodeMode::sample}};
const std::map<std::string, CropCenter> kCropCenters{{"peak", CropCenter::peak}, {"centroid", CropCenter::centroid}};
const std::map<std::string, MaskFill> kMaskFills{
    {"gray", MaskFill::gray}, {"black", MaskFill::black}, {"mean", MaskFill::mean}};
const std::map<std::string, Contrast> kContrasts{{"laser", Contrast::laser}, {"vcd", Contrast::vcd}};

struct PipelineFlags {
    std::optional<int> k_head;
    std::optional<int> k_patch;
    double alpha = 1.0;
    int min_crop = 224;
    double crop_fraction = 0.5;
    std::optional<int> fixed_layer;
    std::string vat = "on";
    std::string decode = "greedy";
    double temperature = 1.0;
    std::uint64_t seed = 0;
    std::string crop_center = "peak";
    std::string mask_fill = "gray";
    std::optional<double> vat_gate_spread;

    PipelineConfig config() const {
        PipelineConfig c;
        c.k_head = k_head;
        c.k_patch = k_patch;
        c.alpha = alpha;
        c.min_crop = min_crop;
        c.crop_fraction = crop_fraction;
        c.fixed_layer = fixed_layer;
        c.vat_enabled = vat == "on";
        c.decode_mode = kDecodeModes.at(decode);
        c.temperature = temperature;
        c.seed = seed;
        c.crop_center = kCropCenters.at(crop_center);
        c.mask_fill = kMaskFills.at(mask_fill);
        c.vat_gate_spread = vat_gate_spread;
        c.validate();
        return c;
    }
};

// Flags shared by every subcommand that runs the pipeline.
void add_pipeline_flags(CLI::App* app, PipelineFlags& f, bool decoding) {
    app->add_option("--k-head", f.k_head, "Top heads per layer (default ceil(H/4))")->check(CLI::PositiveNumber);
    app->add_option("--k-patch", f.k_patch, "Masked patches (default ceil(P/20))")->check(CLI::PositiveNumber);
    app->add_option("--min-crop", f.min_crop, "Lower bound on crop side in pixels")->capture_default_str();
    app->add_option("--crop-fraction", f.crop_fraction, "Crop side as a fraction of the image side")
        ->capture_default_str();
    app->add_option("--fixed-layer", f.fixed_layer, "Use this layer instead of the VAQ argmax");
    app->add_option("--crop-center", f.crop_center, "Crop center: peak or centroid")
        ->check(CLI::IsMember({"peak", "centroid"}))
        ->capture_default_str();
    app->add_option("--mask-fill", f.mask_fill, "Masked patch fill: gray, black or mean")
        ->check(CLI::IsMember({"gray", "black", "mean"}))
        ->capture_default_str();
    if (!decoding) return;
    app->add_option("--alpha", f.alpha, "Contrast strength")->capture_default_str();
    app->add_option("--vat", f.vat, "Counterfactual stream: on or off")
        ->check(CLI::IsMember({"on", "off"}))
        ->capture_default_str();
    app->add_option("--decode", f.decode, "Token selection: greedy or sample")
        ->check(CLI::IsMember({"greedy", "sample"}))
        ->capture_default_str();
    app->add_option("--temperature", f.temperature, "Sampling temperature")->capture_default_str();
    app->add_option("--seed", f.seed, "Sampler and noise seed")->capture_default_str();
    app->add_option("--vat-gate-spread", f.vat_gate_spread,
                    "Skip the counterfactual stream when max-minus-mean layer VAQ is below this");
}

struct ToyFlags {
    std::string model = "evidence-flips-token";
    std::uint64_t model_seed = 0;
    std::string image;
    std::optional<std::uint64_t> scene_seed;
    std::string query;
};

void add_toy_flags(CLI::App* app, ToyFlags& t) {
    app->add_option("--toy-model", t.model, "Scripted scenario name, or 'random' for seeded random weights")
        ->capture_default_str();
    app->add_option("--model-seed", t.model_seed, "Toy model seed")->capture_default_str();
    app->add_option("--image", t.image, "Input image (PNG or PPM)");
    app->add_option("--scene-seed", t.scene_seed, "Generate a synthetic scene instead of reading --image");
    app->add_option("--query", t.query, "Question text (default: the scene's own question)");
}

struct ToyInputs {
    ToyVlm model;
    std::optional<ScenarioTruth> truth;
    ImageBuffer image;
    std::string query_text;
    std::optional<PixelRect> target;
};

ToyInputs load_toy_inputs(const ToyFlags& t) {
    std::optional<ScenarioTruth> truth;
    auto model = [&] {
        if (t.model == "random") {
            ToyVlmConfig c;
            c.seed = t.model_seed;
            return ToyVlm(c);
        }
        auto sm = make_scripted_model(t.model, t.model_seed);
        truth = sm.truth;
        return std::move(sm.model);
    }();
    if (t.image.empty() == !t.scene_seed) throw ConfigError("give exactly one of --image or --scene-seed");
    ToyInputs in{std::move(model), truth, {}, t.query, {}};
    if (t.scene_seed) {
        const auto spec = truth ? scenario_scene_spec(*truth) : SceneSpec{};
        auto scene = gen_synthetic_scene(spec, *t.scene_seed);
        in.image = std::move(scene.image);
        in.target = scene.target_box;
        if (in.query_text.empty()) in.query_text = scene.query_text;
    } else {
        in.image = read_image(t.image);
    }
    if (in.query_text.empty()) in.query_text = truth ? truth->query_text : "IS THERE A RED SQUARE?";
    return in;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot open '{}'", path.string()));
    out << text;
    if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

// Prints JSON to stdout for "-", writes it to a file otherwise.
void emit_json(const std::string& dest, const nlohmann::json& j) {
    if (dest == "-") {
        std::cout << j.dump(2) << '\n';
    } else {
        write_text(dest, j.dump(2) + "\n");
    }
}

nlohmann::json profile_json(const VaqProfile& p) {
    nlohmann::json layers = nlohmann::json::array();
    for (int l = 0; l < static_cast<int>(p.layer_scores.size()); ++l) {
        const auto& sel = p.top_heads(l);
        std::vector<double> heads;
        for (int h = 0; h < p.heads; ++h) heads.push_back(p.head_score(l, h));
        layers.push_back({{"layer", l},
                          {"vaq", p.layer_scores[l]},
                          {"head_vaq", heads},
                          {"top_heads", sel.heads},
                          {"top_head_vaq", sel.scores}});
    }
    return {{"selected_layer", p.selected_layer},
            {"selected_heads", p.top_heads(p.selected_layer).heads},
            {"k_head", p.top_heads(p.selected_layer).heads.size()},
            {"layers", layers}};
}

int cmd_vaq(const std::string& path, const PipelineFlags& flags, const std::string& json) {
    const auto trace = read_trace_file(path);
    const auto profile = layer_vaq(trace, flags.config());
    if (!json.empty()) {
        emit_json(json, profile_json(profile));
        if (json == "-") return kOk;
    }
    const auto& sel = profile.top_heads(profile.selected_layer);
    fmt::print("trace {} (L={} H={} P={})\n", trace.source_id, trace.layers, trace.heads, trace.patches);
    fmt::print("{:>5}  {:>12}  top heads\n", "layer", "vaq");
    for (int l = 0; l < trace.layers; ++l) {
        fmt::print("{:>5}  {:>12.6g}  {}{}\n", l, profile.layer_scores[l], fmt::join(profile.top_heads(l).heads, ","),
                   l == profile.selected_layer ? "  <- selected" : "");
    }
    fmt::print("selected layer {} heads {} (k_head={})\n", profile.selected_layer, fmt::join(sel.heads, ","),
               sel.heads.size());
    return kOk;
}

int cmd_localize(const std::string& trace_path, const std::string& image_path, bool trust_grid,
                 const std::string& heatmap, const PipelineFlags& flags, const std::string& json) {
    auto trace = read_trace_file(trace_path);
    std::optional<ImageBuffer> image;
    if (!image_path.empty()) {
        image = read_image(image_path);
        if (image->width != trace.grid.image_width || image->height != trace.grid.image_height) {
            if (!trust_grid) {
                throw GeometryError(fmt::format("trace grid covers {}x{} pixels but '{}' is {}x{}",
                                                trace.grid.image_width, trace.grid.image_height, image_path,
                                                image->width, image->height));
            }
            trace.grid.image_width = image->width;
            trace.grid.image_height = image->height;
            trace.grid.validate();
        }
    }
    if (!heatmap.empty() && !image) throw ConfigError("--heatmap needs --image");
    const auto plan = localize(trace, flags.config());
    if (image && !heatmap.empty()) {
        write_image(render_heatmap(plan.map, *image, plan.box), heatmap);
        spdlog::info("heatmap written to {}", heatmap);
    }
    emit_json(json.empty() ? "-" : json, plan_to_json(plan, trace));
    return kOk;
}

RunOptions run_options(int max_new_tokens, Contrast contrast, int noise_steps) {
    RunOptions o;
    o.max_new_tokens = max_new_tokens;
    o.contrast = contrast;
    o.noise_steps = noise_steps;
    return o;
}

nlohmann::json run_json(const LaserRun& run, const ToyInputs& in) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : run.decode.steps) steps.push_back({{"step", s.step}, {"token_id", s.chosen_token}});
    nlohmann::json j = {
        {"query", in.query_text},
        {"tokens", run.decode.tokens},
        {"answer", vocab::decode_tokens(run.decode.tokens)},
        {"streams_opened", run.decode.streams_opened},
        {"vat_applied", run.vat_applied},
        {"plan", plan_to_json(run.plan, run.trace)},
        {"steps", steps},
        {"timings_ms",
         {{"trace", run.timings.trace_ms}, {"localize", run.timings.localize_ms}, {"decode", run.timings.decode_ms}}},
    };
    if (in.target) {
        j["target_box"] = {{"x0", in.target->x0}, {"y0", in.target->y0}, {"x1", in.target->x1}, {"y1", in.target->y1}};
        j["aggregation"] = attention_aggregation(run.plan.map, GroundTruthBox{*in.target});
    }
    if (in.truth) j["expected_token"] = in.truth->evidence_token;
    return j;
}

int cmd_run(const ToyFlags& toy, const PipelineFlags& flags, const RunOptions& opts, const std::string& heatmap,
            const std::string& json) {
    const auto in = load_toy_inputs(toy);
    const auto query = vocab::encode_text(in.query_text);
    const auto run = run_laser(in.model, in.image, query, flags.config(), opts);
    if (!heatmap.empty()) write_image(render_heatmap(run.plan.map, run.image, run.plan.box), heatmap);
    if (!json.empty()) {
        emit_json(json, run_json(run, in));
        if (json == "-") return kOk;
    }
    fmt::print("layer {} peak ({}, {}) crop ({},{})-({},{}) masked {}\n", run.plan.selected_layer(),
               run.plan.peak.row, run.plan.peak.col, run.plan.box.x0, run.plan.box.y0, run.plan.box.x1,
               run.plan.box.y1, run.plan.patches.size());
    fmt::print("tokens {}\nanswer {}\n", fmt::join(run.decode.tokens, " "), vocab::decode_tokens(run.decode.tokens));
    return kOk;
}

int cmd_coprocess(const PipelineFlags& flags) {
    const auto summary = run_scoring_coprocess(std::cin, std::cout, flags.config());
    spdlog::info("co-process finished: {} steps, {} errors", summary.steps, summary.errors);
    if (!summary.ended) {
        spdlog::error("input closed before an end message");
        return kProtocol;
    }
    return kOk;
}

int cmd_bench(BenchConfig cfg, const PipelineFlags& flags, const std::string& out_dir, bool min_crop_given) {
    cfg.pipeline = flags.config();
    // The 224 px default would cover the whole 96 px toy scene.
    if (cfg.scenario == "toy-end-to-end" && !min_crop_given) cfg.pipeline.min_crop = 64;
    cfg.pipeline.fixed_layer.reset();
    if (flags.fixed_layer) cfg.fixed_layer = flags.fixed_layer;
    const auto report = run_benchmark(cfg);
    const auto table = report_table(report);
    if (out_dir.empty()) {
        std::cout << table;
        return kOk;
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError(fmt::format("cannot create '{}': {}", out_dir, ec.message()));
    const fs::path dir(out_dir);
    write_text(dir / "report.json", report_to_json(report).dump(2) + "\n");
    write_text(dir / "report.txt", table);
    write_text(dir / "timings.json", timings_to_json(report).dump(2) + "\n");
    std::cout << table;
    return kOk;
}

int cmd_make_trace(const ToyFlags& toy, const std::string& out, const std::string& save_image) {
    const auto in = load_toy_inputs(toy);
    const auto fitted = in.model.fit_image(in.image);
    const auto trace = in.model.make_paired_trace(fitted, vocab::encode_text(in.query_text));
    write_trace_file(trace, out);
    if (!save_image.empty()) write_image(fitted, save_image);
    fmt::print("wrote {} ({}x{} grid, L={} H={}) query \"{}\"\n", out, trace.grid.rows, trace.grid.cols, trace.layers,
               trace.heads, in.query_text);
    return kOk;
}

int cmd_scene(std::uint64_t seed, const std::string& out, bool sink) {
    SceneSpec spec;
    spec.sink = sink;
    const auto scene = gen_synthetic_scene(spec, seed);
    write_image(scene.image, out);
    const auto& b = scene.target_box;
    std::cout << nlohmann::json{{"image", out},
                                {"query", scene.query_text},
                                {"target_box", {{"x0", b.x0}, {"y0", b.y0}, {"x1", b.x1}, {"y1", b.y1}}}}
                     .dump()
              << '\n';
    return kOk;
}

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("laser");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::warn);
    if (const char* env = std::getenv("LASER_LOG")) {
        const auto level = spdlog::level::from_str(env);
        // from_str maps unknown names to off; only honour real names.
        if (level != spdlog::level::off || std::string_view(env) == "off") spdlog::set_level(level);
    }
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"LASER training-free inference engine"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    PipelineFlags flags;
    ToyFlags toy;
    std::string json, heatmap;

    std::string trace_path;
    auto* vaq = app.add_subcommand("vaq", "Layer-wise VAQ profile of a trace file");
    vaq->add_option("trace", trace_path, "Trace file")->required();
    vaq->add_option("--json", json, "Write the profile as JSON ('-' for stdout)")->expected(0, 1)->default_str("-");
    add_pipeline_flags(vaq, flags, false);

    std::string image_path;
    bool trust_grid = false;
    auto* loc = app.add_subcommand("localize", "Stage 1: crop plan from a trace");
    loc->add_option("trace", trace_path, "Trace file")->required();
    loc->add_option("--image", image_path, "Image the trace was captured on");
    loc->add_flag("--trust-trace-grid", trust_grid, "Lay the trace's patch grid over the image when sizes differ");
    loc->add_option("--heatmap", heatmap, "Write the attention overlay here (PNG, or PPM by extension)");
    loc->add_option("--json", json, "Write the plan here instead of stdout")->expected(0, 1)->default_str("-");
    add_pipeline_flags(loc, flags, false);

    std::string backend = "toy";
    int max_new_tokens = 8;
    std::string contrast = "laser";
    int noise_steps = 500;
    auto add_decode_extras = [&](CLI::App* app) {
        app->add_option("--max-new-tokens", max_new_tokens, "Decode length cap")
            ->capture_default_str()
            ->check(CLI::PositiveNumber);
        app->add_option("--contrast", contrast, "Counterfactual: laser (masked crop) or vcd (noised crop)")
            ->check(CLI::IsMember({"laser", "vcd"}))
            ->capture_default_str();
        app->add_option("--noise-steps", noise_steps, "VCD diffusion steps out of 1000")
            ->capture_default_str()
            ->check(CLI::Range(0, kVcdTotalSteps));
    };
    auto* dec = app.add_subcommand("decode", "Stage 2: two-stream decoding (toy model or co-process)");
    dec->add_option("--backend", backend, "toy or coprocess")
        ->check(CLI::IsMember({"toy", "coprocess"}))
        ->capture_default_str();
    dec->add_option("--heatmap", heatmap, "Write the attention overlay here (toy backend)");
    dec->add_option("--json", json, "Write the run as JSON ('-' for stdout)")->expected(0, 1)->default_str("-");
    add_pipeline_flags(dec, flags, true);
    add_toy_flags(dec, toy);
    add_decode_extras(dec);

    auto* run = app.add_subcommand("run", "One-shot toy pipeline: trace, VAQ, crop, mask, decode");
    run->add_option("--heatmap", heatmap, "Write the attention overlay here");
    run->add_option("--json", json, "Write the run as JSON ('-' for stdout)")->expected(0, 1)->default_str("-");
    add_pipeline_flags(run, flags, true);
    add_toy_flags(run, toy);
    add_decode_extras(run);

    BenchConfig bench_cfg;
    std::string out_dir;
    auto* bench = app.add_subcommand("bench", "Localization benchmark over generated instances");
    bench->add_option("--scenario", bench_cfg.scenario, "synthetic-trace, sink-dominant or toy-end-to-end")
        ->check(CLI::IsMember(bench_scenarios()))
        ->capture_default_str();
    bench->add_option("--n", bench_cfg.instances, "Instances")->capture_default_str()->check(CLI::NonNegativeNumber);
    bench->add_option("--snr", bench_cfg.snr, "Synthetic signal-to-noise ratio")->capture_default_str();
    bench->add_option("--sink-ratio", bench_cfg.sink_ratio, "Sink strength over signal strength (sink-dominant)")
        ->capture_default_str();
    bench->add_option("--max-new-tokens", bench_cfg.max_new_tokens, "Toy decode length cap")->capture_default_str();
    bench->add_option("--out", out_dir, "Directory for report.json, report.txt and timings.json");
    add_pipeline_flags(bench, flags, true);

    std::string trace_out, save_image;
    auto* make = app.add_subcommand("make-trace", "Capture a paired attention trace from the toy model");
    make->add_option("--out", trace_out, "Trace file to write")->required();
    make->add_option("--save-image", save_image, "Also write the image region the model saw");
    add_toy_flags(make, toy);

    std::uint64_t scene_seed = 0;
    bool scene_sink = false;
    std::string scene_out;
    auto* scene = app.add_subcommand("scene", "Write a synthetic scene image and print its question and box");
    scene->add_option("--seed", scene_seed, "Scene seed")->capture_default_str();
    scene->add_flag("--sink", scene_sink, "Add a bright attention-sink cell");
    scene->add_option("--out", scene_out, "Image file to write")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }

    try {
        if (*vaq) return cmd_vaq(trace_path, flags, json);
        if (*loc) return cmd_localize(trace_path, image_path, trust_grid, heatmap, flags, json);
        if (*dec && backend == "coprocess") return cmd_coprocess(flags);
        if (*dec || *run) return cmd_run(toy, flags, run_options(max_new_tokens, kContrasts.at(contrast), noise_steps), heatmap, json);
        if (*bench) {
            bench_cfg.seed = flags.seed;
            return cmd_bench(bench_cfg, flags, out_dir, bench->count("--min-crop") > 0);
        }
        if (*make) return cmd_make_trace(toy, trace_out, save_image);
        if (*scene) return cmd_scene(scene_seed, scene_out, scene_sink);
    } catch (const IoError& e) {
        spdlog::error("{}", e.what());
        return kIo;
    } catch (const ProtocolError& e) {
        spdlog::error("{}", e.what());
        return kProtocol;
    } catch (const BackendError& e) {
        spdlog::error("backend failure on stream {}: {}", e.stream(), e.what());
        return kValidation;
    } catch (const Error& e) {
        spdlog::error("{}", e.what());
        return kValidation;
    }
    return kValidation;
}
