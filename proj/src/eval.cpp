// SPDX-License-Identifier: Apache-2.0
#include "laser/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "laser/contrastive.hpp"
#include "laser/errors.hpp"
#include "laser/pipeline.hpp"
#include "laser/rng.hpp"
#include "laser/scene.hpp"
#include "laser/toy_vlm.hpp"

namespace laser {

void GroundTruthBox::validate(int image_width, int image_height) const {
    if (rect.width() <= 0 || rect.height() <= 0) throw GeometryError("ground-truth box is empty");
    if (rect.x0 < 0 || rect.y0 < 0 || rect.x1 > image_width || rect.y1 > image_height) {
        throw GeometryError(fmt::format("ground-truth box ({},{})-({},{}) leaves the {}x{} image", rect.x0, rect.y0,
                                        rect.x1, rect.y1, image_width, image_height));
    }
}

double attention_aggregation(const PatchMap& map, const GroundTruthBox& box) {
    if (map.values.size() != static_cast<std::size_t>(map.grid.patch_count())) {
        throw ShapeError(fmt::format("map has {} values for a {}-patch grid", map.values.size(), map.grid.patch_count()));
    }
    double inside = 0.0;
    double total = 0.0;
    for (int p = 0; p < map.grid.patch_count(); ++p) {
        const double v = map.values[p];
        if (v < 0.0) throw MetricError(fmt::format("negative map value at patch {}", p));
        total += v;
        const auto r = patch_rect(map.grid, p);
        // Compare doubled coordinates so the center stays integral.
        const int cx2 = r.x0 + r.x1;
        const int cy2 = r.y0 + r.y1;
        if (cx2 >= 2 * box.rect.x0 && cx2 < 2 * box.rect.x1 && cy2 >= 2 * box.rect.y0 && cy2 < 2 * box.rect.y1) {
            inside += v;
        }
    }
    if (!(total > 0.0)) throw MetricError("attention map sums to zero");
    return inside / total;
}

void SyntheticTraceSpec::validate() const {
    if (layers <= 0 || heads <= 0) throw ConfigError("synthetic trace needs positive layers and heads");
    grid.validate();
    const int P = grid.patch_count();
    if (signal_layer < 0 || signal_layer >= layers) {
        throw ConfigError(fmt::format("signal layer {} outside [0, {})", signal_layer, layers));
    }
    auto check = [&](const std::vector<int>& v, int bound, const char* what) {
        for (int i : v) {
            if (i < 0 || i >= bound) throw ConfigError(fmt::format("{} index {} outside [0, {})", what, i, bound));
        }
    };
    check(signal_patches, P, "signal patch");
    check(sink_patches, P, "sink patch");
    check(signal_heads, heads, "signal head");
    if (signal_strength < 0.0 || sink_strength < 0.0 || noise_scale < 0.0) {
        throw ConfigError("synthetic strengths must be non-negative");
    }
    if (!(visual_mass > 0.0) || visual_mass > 1.0) throw ConfigError("visual mass must lie in (0, 1]");
}

std::vector<int> patch_block(const GridGeometry& grid, int row, int col, int side) {
    if (row < 0 || col < 0 || side <= 0 || row + side > grid.rows || col + side > grid.cols) {
        throw RangeError(fmt::format("{}x{} block at ({}, {}) leaves the {}x{} grid", side, side, row, col, grid.rows,
                                     grid.cols));
    }
    std::vector<int> out;
    for (int r = row; r < row + side; ++r) {
        for (int c = col; c < col + side; ++c) out.push_back(grid.index({r, c}));
    }
    return out;
}

SyntheticTrace gen_synthetic_trace(const SyntheticTraceSpec& spec) {
    spec.validate();
    const int L = spec.layers;
    const int H = spec.heads;
    const int P = spec.grid.patch_count();
    Rng rng(spec.seed);

    SyntheticTrace out;
    auto& t = out.trace;
    t.layers = L;
    t.heads = H;
    t.patches = P;
    t.grid = spec.grid;
    t.layout.system = {0, 2};
    t.layout.visual = {2, static_cast<std::uint32_t>(2 + P)};
    t.layout.query = {t.layout.visual.end, t.layout.visual.end + 8};
    t.layout.answer_prefix = {t.layout.query.end, t.layout.query.end + 2};
    t.source_id = fmt::format("synthetic seed={} layer={} signal={} sink={} noise={}", spec.seed, spec.signal_layer,
                              spec.signal_strength, spec.sink_strength, spec.noise_scale);
    t.with_query.resize(static_cast<std::size_t>(L) * H * P);
    t.without_query.resize(t.with_query.size());

    std::vector<bool> is_signal_head(H, spec.signal_heads.empty());
    for (int h : spec.signal_heads) is_signal_head[h] = true;

    std::vector<double> with(P), without(P);
    for (int l = 0; l < L; ++l) {
        for (int h = 0; h < H; ++h) {
            for (int p = 0; p < P; ++p) {
                const double base = 1.0 + 0.5 * rng.uniform();
                with[p] = base + spec.noise_scale * std::abs(rng.normal());
                without[p] = base + spec.noise_scale * std::abs(rng.normal());
            }
            for (int p : spec.sink_patches) {
                with[p] += spec.sink_strength;
                without[p] += spec.sink_strength;
            }
            if (l == spec.signal_layer && is_signal_head[h]) {
                for (int p : spec.signal_patches) with[p] += spec.signal_strength;
            }
            const double sw = std::accumulate(with.begin(), with.end(), 0.0);
            const double sn = std::accumulate(without.begin(), without.end(), 0.0);
            const auto off = t.row_offset(l, h);
            for (int p = 0; p < P; ++p) {
                t.with_query[off + p] = static_cast<float>(spec.visual_mass * with[p] / sw);
                t.without_query[off + p] = static_cast<float>(spec.visual_mass * without[p] / sn);
            }
        }
    }
    t.validate();

    out.truth.signal_layer = spec.signal_layer;
    out.truth.signal_patches = spec.signal_patches;
    out.truth.signal_heads = spec.signal_heads;
    out.truth.sink_patches = spec.sink_patches;
    if (!spec.signal_patches.empty()) {
        PixelRect box = patch_rect(spec.grid, spec.signal_patches.front());
        for (int p : spec.signal_patches) {
            const auto r = patch_rect(spec.grid, p);
            box = {std::min(box.x0, r.x0), std::min(box.y0, r.y0), std::max(box.x1, r.x1), std::max(box.y1, r.y1)};
        }
        out.truth.box.rect = box;
    }
    return out;
}

void add_attention_sinks(AttentionTrace& trace, std::span<const int> patches, std::span<const double> strengths) {
    const std::size_t rows = static_cast<std::size_t>(trace.layers) * trace.heads;
    if (strengths.size() != rows) {
        throw ShapeError(fmt::format("{} sink strengths for {} attention rows", strengths.size(), rows));
    }
    for (int p : patches) {
        if (p < 0 || p >= trace.patches) throw RangeError(fmt::format("sink patch {} outside [0, {})", p, trace.patches));
    }
    for (std::size_t r = 0; r < rows; ++r) {
        const auto off = r * trace.patches;
        for (int p : patches) {
            trace.with_query[off + p] += static_cast<float>(strengths[r]);
            trace.without_query[off + p] += static_cast<float>(strengths[r]);
        }
    }
    trace.validate();
}

// ---- benchmark ----

std::vector<std::string> bench_methods() {
    return {kMethodRawFixed, kMethodContrastiveFixed, kMethodContrastiveVaq, kMethodLaserVat};
}

std::vector<std::string> bench_scenarios() { return {"synthetic-trace", "sink-dominant", "toy-end-to-end"}; }

void BenchConfig::validate() const {
    const auto names = bench_scenarios();
    if (std::find(names.begin(), names.end(), scenario) == names.end()) {
        throw ConfigError(fmt::format("unknown bench scenario '{}'", scenario));
    }
    if (instances < 0) throw ConfigError(fmt::format("instance count {} is negative", instances));
    if (fixed_layer && *fixed_layer < 0) throw ConfigError("fixed layer must be non-negative");
    if (!(snr >= 0.0)) throw ConfigError("snr must be non-negative");
    if (!(sink_ratio >= 0.0)) throw ConfigError("sink ratio must be non-negative");
    if (max_new_tokens <= 0) throw ConfigError("max_new_tokens must be positive");
    pipeline.validate();
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Instance seeds decorrelated from the run seed.
std::uint64_t instance_seed(std::uint64_t seed, int instance) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(instance + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// A map with no mass puts nothing in the box.
double safe_aggregation(const PatchMap& map, const GroundTruthBox& box) {
    double total = 0.0;
    for (double v : map.values) total += v;
    return total > 0.0 ? attention_aggregation(map, box) : 0.0;
}

struct Timed {
    BenchRecord& record;
    std::vector<BenchTiming>& timings;

    template <typename F>
    MethodRecord& run(const char* method, F&& f) {
        const auto t0 = Clock::now();
        MethodRecord m = f();
        m.method = method;
        timings.push_back({record.instance, method, ms_since(t0)});
        record.methods.push_back(std::move(m));
        return record.methods.back();
    }
};

void synthetic_instance(const BenchConfig& cfg, int instance, BenchReport& report) {
    const std::uint64_t seed = instance_seed(cfg.seed, instance);
    Rng rng(seed);
    SyntheticTraceSpec spec;
    const int fixed = cfg.fixed_layer.value_or(14);
    if (fixed >= spec.layers) throw ConfigError(fmt::format("fixed layer {} outside {} layers", fixed, spec.layers));
    const bool sinks = cfg.scenario == "sink-dominant";
    // With sinks the evidence sits at the fixed layer, so the raw baseline
    // only has the sinks to contend with.
    spec.signal_layer = sinks ? fixed : rng.below(spec.layers);
    constexpr int kSide = 4;
    const int row = rng.below(spec.grid.rows - kSide + 1);
    const int col = rng.below(spec.grid.cols - kSide + 1);
    spec.signal_patches = patch_block(spec.grid, row, col, kSide);
    spec.noise_scale = 1.0;
    spec.signal_strength = cfg.snr * spec.noise_scale;
    if (sinks) {
        spec.sink_strength = cfg.sink_ratio * spec.signal_strength;
        while (spec.sink_patches.size() < 4) {
            const int p = rng.below(spec.grid.patch_count());
            const auto c = spec.grid.cell(p);
            const bool in_block = c.row >= row && c.row < row + kSide && c.col >= col && c.col < col + kSide;
            if (!in_block && std::find(spec.sink_patches.begin(), spec.sink_patches.end(), p) == spec.sink_patches.end()) {
                spec.sink_patches.push_back(p);
            }
        }
    }
    spec.seed = rng.next();
    const auto synth = gen_synthetic_trace(spec);
    const auto& trace = synth.trace;
    const auto& box = synth.truth.box;

    BenchRecord rec;
    rec.instance = instance;
    rec.seed = seed;
    rec.planted_layer = spec.signal_layer;
    Timed timed{rec, report.timings};
    PipelineConfig pc = cfg.pipeline;
    pc.fixed_layer.reset();

    timed.run(kMethodRawFixed, [&] {
        return MethodRecord{{}, fixed, safe_aggregation(raw_layer_map(trace, fixed), box), {}, {}};
    });
    timed.run(kMethodContrastiveFixed, [&] {
        PipelineConfig fc = pc;
        fc.fixed_layer = fixed;
        const auto profile = layer_vaq(trace, fc);
        return MethodRecord{{}, fixed, safe_aggregation(aggregate_layer_map(trace, profile), box), {}, {}};
    });
    int selected = 0;
    auto vaq = [&] {
        const auto plan = localize(trace, pc);
        selected = plan.selected_layer();
        return MethodRecord{{}, selected, safe_aggregation(plan.map, box), {}, {}};
    };
    timed.run(kMethodContrastiveVaq, vaq);
    // No decoder behind a synthetic trace: the localization is the whole method.
    timed.run(kMethodLaserVat, vaq);
    rec.selected_layer = selected;
    report.records.push_back(std::move(rec));
}

void toy_instance(const BenchConfig& cfg, int instance, const std::vector<ScriptedModel>& models, BenchReport& report) {
    const std::uint64_t seed = instance_seed(cfg.seed, instance);
    const auto& sm = models[instance % models.size()];
    const int L = sm.model.config().layers;
    const int fixed = cfg.fixed_layer.value_or(L / 2);
    if (fixed >= L) throw ConfigError(fmt::format("fixed layer {} outside {} layers", fixed, L));
    const auto scene = gen_synthetic_scene(scenario_scene_spec(sm.truth), seed);
    const GroundTruthBox box{scene.target_box};

    BenchRecord rec;
    rec.instance = instance;
    rec.seed = seed;
    rec.planted_layer = sm.truth.signal_layer;
    Timed timed{rec, report.timings};
    PipelineConfig pc = cfg.pipeline;
    pc.fixed_layer.reset();

    const auto image = sm.model.fit_image(scene.image);
    const auto trace = sm.model.make_paired_trace(image, scene.query);
    timed.run(kMethodRawFixed, [&] {
        return MethodRecord{{}, fixed, safe_aggregation(raw_layer_map(trace, fixed), box), {}, {}};
    });
    timed.run(kMethodContrastiveFixed, [&] {
        PipelineConfig fc = pc;
        fc.fixed_layer = fixed;
        const auto profile = layer_vaq(trace, fc);
        return MethodRecord{{}, fixed, safe_aggregation(aggregate_layer_map(trace, profile), box), {}, {}};
    });
    timed.run(kMethodContrastiveVaq, [&] {
        const auto plan = localize(trace, pc);
        return MethodRecord{{}, plan.selected_layer(), safe_aggregation(plan.map, box), {}, {}};
    });
    auto& laser = timed.run(kMethodLaserVat, [&] {
        RunOptions opts;
        opts.max_new_tokens = cfg.max_new_tokens;
        const auto run = run_laser(sm.model, scene.image, scene.query, pc, opts);
        MethodRecord m{{}, run.plan.selected_layer(), safe_aggregation(run.plan.map, box), run.decode.tokens, {}};
        m.answer_correct = !run.decode.tokens.empty() && run.decode.tokens.front() == sm.truth.evidence_token;
        return m;
    });
    rec.selected_layer = laser.layer;
    report.records.push_back(std::move(rec));
}

}  // namespace

std::pair<double, double> mean_and_std_error(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n == 0) return {0.0, 0.0};
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(n);
    if (n < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    return {mean, sd / std::sqrt(static_cast<double>(n))};
}

std::vector<MethodAggregate> aggregate_records(std::span<const BenchRecord> records) {
    std::vector<MethodAggregate> out;
    for (const auto& method : bench_methods()) {
        std::vector<double> agg, correct;
        for (const auto& rec : records) {
            for (const auto& m : rec.methods) {
                if (m.method != method) continue;
                agg.push_back(m.aggregation);
                if (m.answer_correct) correct.push_back(*m.answer_correct ? 1.0 : 0.0);
            }
        }
        MethodAggregate a;
        a.method = method;
        a.count = static_cast<int>(agg.size());
        std::tie(a.mean, a.std_error) = mean_and_std_error(agg);
        if (!correct.empty()) {
            const auto [m, se] = mean_and_std_error(correct);
            a.accuracy = m;
            a.accuracy_std_error = se;
        }
        out.push_back(std::move(a));
    }
    return out;
}

BenchReport run_benchmark(const BenchConfig& config) {
    config.validate();
    BenchReport report;
    report.config = config;
    std::vector<ScriptedModel> models;
    if (config.scenario == "toy-end-to-end" && config.instances > 0) {
        for (const auto& name : scripted_scenarios()) models.push_back(make_scripted_model(name, config.seed));
    }
    for (int i = 0; i < config.instances; ++i) {
        if (config.scenario == "toy-end-to-end") {
            toy_instance(config, i, models, report);
        } else {
            synthetic_instance(config, i, report);
        }
    }
    report.aggregates = aggregate_records(report.records);
    int hits = 0;
    for (const auto& r : report.records) hits += r.selected_layer == r.planted_layer;
    report.layer_hit_rate = report.records.empty() ? 0.0 : static_cast<double>(hits) / report.records.size();
    return report;
}

nlohmann::json config_to_json(const PipelineConfig& c) {
    nlohmann::json j = {
        {"alpha", c.alpha},
        {"min_crop", c.min_crop},
        {"crop_fraction", c.crop_fraction},
        {"decode_mode", to_string(c.decode_mode)},
        {"temperature", c.temperature},
        {"seed", c.seed},
        {"vat_enabled", c.vat_enabled},
        {"crop_center", to_string(c.crop_center)},
        {"mask_fill", to_string(c.mask_fill)},
    };
    j["k_head"] = c.k_head ? nlohmann::json(*c.k_head) : nlohmann::json(nullptr);
    j["k_patch"] = c.k_patch ? nlohmann::json(*c.k_patch) : nlohmann::json(nullptr);
    j["fixed_layer"] = c.fixed_layer ? nlohmann::json(*c.fixed_layer) : nlohmann::json(nullptr);
    j["vat_gate_spread"] = c.vat_gate_spread ? nlohmann::json(*c.vat_gate_spread) : nlohmann::json(nullptr);
    return j;
}

nlohmann::json report_to_json(const BenchReport& report) {
    const auto& c = report.config;
    nlohmann::json config = {
        {"scenario", c.scenario},
        {"instances", c.instances},
        {"seed", c.seed},
        {"snr", c.snr},
        {"sink_ratio", c.sink_ratio},
        {"max_new_tokens", c.max_new_tokens},
        {"pipeline", config_to_json(c.pipeline)},
    };
    config["fixed_layer"] = c.fixed_layer ? nlohmann::json(*c.fixed_layer) : nlohmann::json(nullptr);
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : report.records) {
        nlohmann::json methods = nlohmann::json::array();
        for (const auto& m : r.methods) {
            nlohmann::json jm = {{"method", m.method}, {"layer", m.layer}, {"aggregation", m.aggregation}};
            if (!m.tokens.empty()) {
                jm["tokens"] = m.tokens;
                jm["answer"] = vocab::decode_tokens(m.tokens);
            }
            if (m.answer_correct) jm["answer_correct"] = *m.answer_correct;
            methods.push_back(std::move(jm));
        }
        records.push_back({{"instance", r.instance},
                           {"seed", r.seed},
                           {"planted_layer", r.planted_layer},
                           {"selected_layer", r.selected_layer},
                           {"methods", std::move(methods)}});
    }
    nlohmann::json aggregates = nlohmann::json::array();
    for (const auto& a : report.aggregates) {
        nlohmann::json ja = {{"method", a.method}, {"count", a.count}, {"mean", a.mean}, {"std_error", a.std_error}};
        if (a.accuracy) {
            ja["accuracy"] = *a.accuracy;
            ja["accuracy_std_error"] = *a.accuracy_std_error;
        }
        aggregates.push_back(std::move(ja));
    }
    return {{"config", std::move(config)},
            {"records", std::move(records)},
            {"aggregates", std::move(aggregates)},
            {"layer_hit_rate", report.layer_hit_rate}};
}

nlohmann::json timings_to_json(const BenchReport& report) {
    std::map<std::string, std::vector<double>> by_method;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& t : report.timings) {
        rows.push_back({{"instance", t.instance}, {"method", t.method}, {"ms", t.ms}});
        by_method[t.method].push_back(t.ms);
    }
    nlohmann::json summary = nlohmann::json::object();
    for (const auto& [method, ms] : by_method) {
        const auto [mean, se] = mean_and_std_error(ms);
        summary[method] = {{"mean_ms", mean}, {"std_error_ms", se}};
    }
    return {{"scenario", report.config.scenario}, {"summary", std::move(summary)}, {"timings", std::move(rows)}};
}

std::string report_table(const BenchReport& report) {
    std::string out = fmt::format("scenario {}  instances {}  seed {}  layer hit rate {:.3f}\n",
                                  report.config.scenario, report.config.instances, report.config.seed,
                                  report.layer_hit_rate);
    out += fmt::format("{:<24} {:>6} {:>12} {:>10} {:>10}\n", "method", "n", "aggregation%", "s.e.%", "accuracy");
    for (const auto& a : report.aggregates) {
        const std::string acc = a.accuracy ? fmt::format("{:.3f}", *a.accuracy) : "-";
        out += fmt::format("{:<24} {:>6} {:>12.2f} {:>10.2f} {:>10}\n", a.method, a.count, 100.0 * a.mean,
                           100.0 * a.std_error, acc);
    }
    return out;
}

}  // namespace laser
