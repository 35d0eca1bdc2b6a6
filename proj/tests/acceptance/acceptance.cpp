// SPDX-License-Identifier: Apache-2.0
// Acceptance gate: one PASS/FAIL line per criterion, exit 1 on any failure.
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <cstring>
#include <unistd.h>

#include <fmt/format.h>

#include "laser/contrastive.hpp"
#include "laser/decoding.hpp"
#include "laser/eval.hpp"
#include "laser/image_io.hpp"
#include "laser/localization.hpp"
#include "laser/pipeline.hpp"
#include "laser/toy_vlm.hpp"
#include "laser/trace_io.hpp"
#include "oracles.hpp"

using namespace laser;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
    std::vector<std::string> notes;

    void fail(const std::string& why) {
        if (pass) detail = why;
        pass = false;
    }
};

bool run_criterion(int id, const char* name, double limit_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o.fail(fmt::format("exception: {}", e.what()));
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (s > limit_s) o.fail(fmt::format("took {:.2f} s, limit {:.0f} s", s, limit_s));
    fmt::print("criterion {}: {} {} ({:.2f} s / {:.0f} s) {}\n", id, o.pass ? "PASS" : "FAIL", name, s, limit_s,
               o.detail);
    for (const auto& n : o.notes) fmt::print("  note: {}\n", n);
    std::fflush(stdout);
    return o.pass;
}

// ---- 1 ----

Outcome equation_oracles() {
    Outcome o;
    Rng rng(1001);
    double worst = 0.0;
    auto rel = [&](double a, double b) {
        const double r = std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
        worst = std::max(worst, r);
        return r <= 1e-6;
    };
    for (int i = 0; i < 1000 && o.pass; ++i) {
        const auto t = oracle::random_trace(rng);
        PipelineConfig c;
        c.k_head = 1 + rng.below(t.heads);
        c.k_patch = 1 + rng.below(t.patches);
        const auto p = layer_vaq(t, c);
        const auto op = oracle::layer_vaq(t, *c.k_head);
        if (p.selected_layer != op.selected) o.fail(fmt::format("input {}: selected layer differs", i));
        for (int l = 0; l < t.layers; ++l) {
            if (!rel(p.layer_scores[l], op.layer[l])) o.fail(fmt::format("input {}: layer VAQ {}", i, l));
            if (p.top_heads(l).heads != op.heads[l]) o.fail(fmt::format("input {}: top heads at layer {}", i, l));
            for (int h = 0; h < t.heads; ++h) {
                const auto m = contrastive_map(t, l, h);
                const auto om = oracle::head_map(t, l, h);
                for (int q = 0; q < t.patches; ++q) {
                    if (!rel(m.values[q], om[q])) o.fail(fmt::format("input {}: contrastive map", i));
                }
                if (!rel(head_vaq(m), oracle::l2(om))) o.fail(fmt::format("input {}: head VAQ", i));
            }
        }
        const auto map = aggregate_layer_map(t, p);
        const auto omap = oracle::aggregate(t, op.selected, op.heads[op.selected]);
        for (int q = 0; q < t.patches; ++q) {
            if (!rel(map.values[q], omap[q])) o.fail(fmt::format("input {}: aggregated map", i));
        }
        if (top_k_patches(map, c).indices != oracle::top_k(omap, *c.k_patch)) {
            o.fail(fmt::format("input {}: top-K patches", i));
        }
        const int V = 1 + rng.below(300);
        const LogitsPair pair{0, oracle::random_logits(rng, V), oracle::random_logits(rng, V)};
        const double alpha = rng.uniform(0.0, 3.0);
        const auto s = combine_scores(pair, alpha);
        const auto os = oracle::combine(pair.z_plus, pair.z_minus, alpha);
        const auto ov = oracle::vat(pair.z_plus, pair.z_minus);
        for (int k = 0; k < V; ++k) {
            if (!rel(s.vat[k], ov[k])) o.fail(fmt::format("input {}: VAT", i));
            // s and its rearranged form differ by cancellation; compare on the operand scale.
            const double scale = (1 + alpha) * std::abs(pair.z_plus[k]) + alpha * std::abs(pair.z_minus[k]);
            if (std::abs(s.s[k] - os[k]) > 1e-6 * std::max(scale, 1e-12)) o.fail(fmt::format("input {}: score", i));
        }
    }
    if (o.pass) o.detail = fmt::format("1000 inputs, worst relative error {:.2e}", worst);
    return o;
}

// ---- 2 ----

Outcome sink_cancellation() {
    Outcome o;
    Rng rng(2002);
    double worst_abs = 0.0, worst_rel = 0.0;
    for (int i = 0; i < 1000 && o.pass; ++i) {
        SyntheticTraceSpec spec;
        spec.signal_layer = rng.below(spec.layers);
        spec.signal_patches = patch_block(spec.grid, rng.below(21), rng.below(21), 4);
        spec.signal_strength = rng.uniform(1.0, 20.0);
        spec.seed = rng.next();
        auto s = gen_synthetic_trace(spec);
        const auto before = layer_vaq(s.trace, PipelineConfig{});
        std::vector<int> sinks;
        for (int k = 0; k < 1 + rng.below(4); ++k) sinks.push_back(rng.below(spec.grid.patch_count()));
        std::sort(sinks.begin(), sinks.end());
        sinks.erase(std::unique(sinks.begin(), sinks.end()), sinks.end());
        std::vector<double> strengths(static_cast<std::size_t>(spec.layers) * spec.heads);
        for (auto& v : strengths) v = rng.uniform(0.0, 0.45 / static_cast<double>(sinks.size()));
        add_attention_sinks(s.trace, sinks, strengths);
        const auto after = layer_vaq(s.trace, PipelineConfig{});
        if (after.selected_layer != before.selected_layer) {
            o.fail(fmt::format("trace {}: selected layer {} -> {}", i, before.selected_layer, after.selected_layer));
        }
        for (int l = 0; l < spec.layers; ++l) {
            const double d = std::abs(after.layer_scores[l] - before.layer_scores[l]);
            worst_abs = std::max(worst_abs, d);
            if (before.layer_scores[l] > 0) worst_rel = std::max(worst_rel, d / before.layer_scores[l]);
        }
    }
    if (worst_abs > 1e-6) o.fail(fmt::format("absolute VAQ drift {:.2e} > 1e-6", worst_abs));
    if (worst_rel > 1e-6) o.fail(fmt::format("relative VAQ drift {:.2e} > 1e-6", worst_rel));
    if (o.pass) {
        o.detail = fmt::format("1000 traces, layer unchanged, max VAQ drift {:.2e} absolute, {:.2e} relative",
                               worst_abs, worst_rel);
    }
    return o;
}

// ---- 3 ----

Outcome planted_layer() {
    Outcome o;
    std::vector<std::string> parts;
    for (const double snr : {3.0, 5.0, 10.0}) {
        Rng rng(3003);
        int hits = 0;
        for (int seed = 0; seed < 200; ++seed) {
            SyntheticTraceSpec spec;
            spec.signal_layer = rng.below(spec.layers);
            spec.signal_patches = patch_block(spec.grid, rng.below(21), rng.below(21), 4);
            spec.signal_strength = snr * spec.noise_scale;
            spec.seed = static_cast<std::uint64_t>(seed) * 7919 + 1;
            const auto s = gen_synthetic_trace(spec);
            hits += layer_vaq(s.trace, PipelineConfig{}).selected_layer == spec.signal_layer;
        }
        const double rate = hits / 200.0;
        parts.push_back(fmt::format("SNR {:g}: {:.1f}%", snr, 100 * rate));
        if (snr >= 10.0 && hits != 200) o.fail(fmt::format("SNR {:g} recovered {}/200", snr, hits));
        if (snr >= 3.0 && rate < 0.95) o.fail(fmt::format("SNR {:g} recovered {:.1f}% < 95%", snr, 100 * rate));
    }
    const std::string joined = fmt::format("{}", fmt::join(parts, ", "));
    o.detail = o.pass ? joined : o.detail + " (" + joined + ")";
    return o;
}

// ---- 4 ----

Outcome sink_dominant() {
    Outcome o;
    BenchConfig c;
    c.scenario = "sink-dominant";
    c.instances = 1000;
    c.seed = 4004;
    c.sink_ratio = 2.0;
    const auto r = run_benchmark(c);
    double raw = 0, con_fixed = 0, vaq = 0;
    for (const auto& a : r.aggregates) {
        if (a.method == kMethodRawFixed) raw = a.mean;
        if (a.method == kMethodContrastiveFixed) con_fixed = a.mean;
        if (a.method == kMethodContrastiveVaq) vaq = a.mean;
    }
    const auto summary = fmt::format("sink = 2x signal, 1000 instances: raw {:.1f}%, contrastive fixed {:.1f}%, "
                                     "contrastive VAQ {:.1f}%",
                                     100 * raw, 100 * con_fixed, 100 * vaq);
    if (!(con_fixed - raw > 0.10)) o.fail(fmt::format("fixed-layer gap {:.1f}pp <= 10pp", 100 * (con_fixed - raw)));
    if (!(vaq - raw > 0.10)) o.fail(fmt::format("VAQ gap {:.1f}pp <= 10pp", 100 * (vaq - raw)));
    o.detail = o.pass ? summary : o.detail + "; " + summary;
    return o;
}

// ---- 5 ----

Outcome crop_fuzz() {
    Outcome o;
    Rng rng(5005);
    for (int i = 0; i < 10000 && o.pass; ++i) {
        const int W = 64 + rng.below(4096 - 64 + 1);
        const int H = 64 + rng.below(4096 - 64 + 1);
        const int patch = 8 + rng.below(57);
        const GridGeometry g{std::max(1, H / patch), std::max(1, W / patch), W, H};
        PipelineConfig c;
        c.crop_fraction = rng.uniform() < 0.5 ? 0.5 : rng.uniform(0.01, 1.0);
        c.min_crop = rng.uniform() < 0.5 ? 224 : 1 + rng.below(1024);
        const GridCell peak{rng.below(g.rows), rng.below(g.cols)};
        const auto box = crop_box(peak, g, c);
        const auto [cx, cy] = patch_center(g, peak);
        const int ew = std::min(std::max(static_cast<int>(std::lround(c.crop_fraction * W)), c.min_crop), W);
        const int eh = std::min(std::max(static_cast<int>(std::lround(c.crop_fraction * H)), c.min_crop), H);
        if (box.x0 < 0 || box.y0 < 0 || box.x1 > W || box.y1 > H) o.fail(fmt::format("case {}: box leaves image", i));
        if (box.width() != ew || box.height() != eh) o.fail(fmt::format("case {}: box dims", i));
        if (cx < box.x0 || cx > box.x1 || cy < box.y0 || cy > box.y1) o.fail(fmt::format("case {}: peak outside", i));
    }
    // Reference constants: half of 336 is 168, lifted to the 224 floor.
    const GridGeometry g336{24, 24, 336, 336};
    const auto b = crop_box({12, 12}, g336, PipelineConfig{});
    if (b.width() != 224 || b.height() != 224) o.fail(fmt::format("336x336 gave {}x{}", b.width(), b.height()));
    const auto corner = crop_box({0, 0}, g336, PipelineConfig{});
    if (corner.x0 != 0 || corner.y0 != 0 || corner.x1 != 224) o.fail("336x336 corner box not translated");
    if (o.pass) o.detail = fmt::format("10000 cases; 336x336 -> {}x{} box", b.width(), b.height());
    o.notes.push_back("a 336x336 image gets a 224x224 box under the half-size rule with the 224 floor; "
                      "a full-image box there would contradict that rule");
    return o;
}

// ---- 6 ----

Outcome decoding_reductions() {
    Outcome o;
    const auto s = make_scripted_model("evidence-flips-token");
    const ToyBackend backend(s.model);
    const auto query = vocab::encode_text(s.truth.query_text);
    PipelineConfig c;
    c.min_crop = 64;
    int flips = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto scene = gen_synthetic_scene(scenario_scene_spec(s.truth), seed);
        const auto fitted = s.model.fit_image(scene.image);
        const auto plan = localize(s.model.make_paired_trace(fitted, query), c);
        const Prompt pos{apply_crop(fitted, plan.box), query};
        const Prompt neg{build_counterfactual(fitted, plan.box, plan.patches, plan.map.grid), query};

        PipelineConfig a0 = c;
        a0.alpha = 0.0;
        const auto pair0 = decode_pair(backend, pos, neg, a0, 4);
        const auto single = decode_single(backend, pos, a0, 4);
        if (pair0.tokens != single.tokens) o.fail(fmt::format("scene {}: alpha 0 differs from single stream", seed));
        for (std::size_t k = 0; k < pair0.steps.size() && k < single.steps.size(); ++k) {
            if (pair0.steps[k].s != single.steps[k].s) o.fail(fmt::format("scene {}: alpha 0 scores differ", seed));
        }

        std::vector<int> ref;
        for (const double alpha : {0.0, 0.5, 1.0, 2.0, 8.0}) {
            PipelineConfig ca = c;
            ca.alpha = alpha;
            const auto r = decode_pair(backend, pos, pos, ca, 4);
            if (ref.empty()) ref = r.tokens;
            if (r.tokens != ref) o.fail(fmt::format("scene {}: I- = I+ not alpha-invariant", seed));
            for (const auto& st : r.steps) {
                for (double v : st.vat) {
                    if (v != 0.0) o.fail(fmt::format("scene {}: nonzero VAT with I- = I+", seed));
                }
            }
        }

        PipelineConfig a1 = c;
        const auto laser = decode_pair(backend, pos, neg, a1, 1);
        const auto masked = decode_single(backend, {mask_patches(fitted, plan.patches, plan.map.grid), query}, a0, 1);
        const bool ok = pair0.tokens.front() == s.truth.prior_token && laser.tokens.front() == s.truth.evidence_token &&
                        masked.tokens.front() == s.truth.absence_token;
        flips += ok;
        if (!ok) o.fail(fmt::format("scene {}: tokens {}/{}/{} not prior/evidence/absence", seed,
                                    pair0.tokens.front(), laser.tokens.front(), masked.tokens.front()));
    }
    if (o.pass) o.detail = fmt::format("20 scenes; alpha 0 = single stream, I- = I+ invariant, {}/20 flips", flips);
    return o;
}

// ---- 7 ----

Outcome determinism() {
    Outcome o;
    Rng rng(7007);
    for (int i = 0; i < 100; ++i) {
        const auto t = oracle::random_trace(rng);
        std::stringstream ss;
        write_trace(t, ss);
        if (!bit_equal(read_trace(ss), t)) o.fail(fmt::format("random trace {} not bit exact", i));
    }
    const auto dir = fs::temp_directory_path() / fmt::format("laser_accept_{}", ::getpid());
    fs::create_directories(dir);
    const auto s = make_scripted_model("mid-layer-grounding");
    const auto scene = gen_synthetic_scene(scenario_scene_spec(s.truth), 3);
    const auto trace = s.model.make_paired_trace(scene.image, scene.query);
    write_trace_file(trace, dir / "t.lsr");
    if (!bit_equal(read_trace_file(dir / "t.lsr"), trace)) o.fail("toy trace file not bit exact");
    fs::remove_all(dir);

    for (const auto& scenario : {"synthetic-trace", "sink-dominant", "toy-end-to-end"}) {
        BenchConfig c;
        c.scenario = scenario;
        c.instances = std::string(scenario) == "toy-end-to-end" ? 8 : 50;
        c.seed = 77;
        c.pipeline.min_crop = std::string(scenario) == "toy-end-to-end" ? 64 : 224;
        if (report_to_json(run_benchmark(c)).dump() != report_to_json(run_benchmark(c)).dump()) {
            o.fail(fmt::format("{} bench reports differ", scenario));
        }
    }

    ToyVlmConfig rc;
    rc.seed = 42;
    const ToyVlm a(rc), b(rc);
    if (a.weight_digest() != b.weight_digest()) o.fail("random toy weights differ");
    const auto m1 = make_scripted_model("sink-dominant", 5);
    const auto m2 = make_scripted_model("sink-dominant", 5);
    if (m1.model.weight_digest() != m2.model.weight_digest()) o.fail("scripted toy weights differ");
    for (const ToyVlm* m : {&a, &m1.model}) {
        const ToyVlm& other = m == &a ? b : m2.model;
        const auto v1 = m->tokenize_image(m->fit_image(scene.image));
        const auto v2 = other.tokenize_image(other.fit_image(scene.image));
        const auto l1 = m->forward_prefill(toy_system_tokens(), v1, scene.query, toy_answer_prefix()).logits;
        const auto l2 = other.forward_prefill(toy_system_tokens(), v2, scene.query, toy_answer_prefix()).logits;
        if (std::memcmp(l1.data(), l2.data(), l1.size() * sizeof(float)) != 0) o.fail("toy logits differ");
    }
    if (o.pass) o.detail = "trace round trips bit exact, bench reports byte identical, toy weights and logits identical";
    return o;
}

// ---- 8 ----

Outcome toy_end_to_end() {
    Outcome o;
    const auto dir = fs::temp_directory_path() / fmt::format("laser_e2e_{}", ::getpid());
    fs::create_directories(dir);
    const auto scenarios = scripted_scenarios();
    PipelineConfig c;
    c.min_crop = 64;
    int correct = 0;
    nlohmann::json report = nlohmann::json::array();
    for (int i = 0; i < 20; ++i) {
        const auto s = make_scripted_model(scenarios[i % scenarios.size()]);
        const auto scene = gen_synthetic_scene(scenario_scene_spec(s.truth), 100 + i);
        const auto run = run_laser(s.model, scene.image, scene.query, c, {4});
        const auto& plan = run.plan;
        const auto& g = run.trace.grid;
        const auto [ew, eh] = crop_dimensions(run.image.width, run.image.height, c);
        if (plan.box.x0 < 0 || plan.box.y0 < 0 || plan.box.x1 > run.image.width || plan.box.y1 > run.image.height ||
            plan.box.width() != ew || plan.box.height() != eh) {
            o.fail(fmt::format("scene {}: crop box invariant", i));
        }
        if (plan.patches.size() != static_cast<std::size_t>(c.resolved_k_patch(g.patch_count()))) {
            o.fail(fmt::format("scene {}: patch set size", i));
        }
        if (!run.negative.same_pixels(build_counterfactual(run.image, plan.box, plan.patches, g))) {
            o.fail(fmt::format("scene {}: counterfactual composition", i));
        }
        if (run.decode.tokens.empty() || run.decode.streams_opened != 2) o.fail(fmt::format("scene {}: decode", i));
        const auto heat = render_heatmap(plan.map, run.image, plan.box);
        const auto heat_path = dir / fmt::format("heat_{:02}.png", i);
        write_png(heat, heat_path);
        if (!read_image(heat_path).same_pixels(heat)) o.fail(fmt::format("scene {}: heatmap round trip", i));
        correct += run.decode.tokens.front() == s.truth.evidence_token;
        report.push_back({{"scene", i},
                          {"scenario", s.truth.scenario},
                          {"layer", plan.selected_layer()},
                          {"answer", vocab::decode_tokens(run.decode.tokens)},
                          {"plan", plan_to_json(plan, run.trace)}});
    }
    std::ofstream(dir / "report.json") << report.dump(2);
    if (!fs::exists(dir / "report.json")) o.fail("report not written");
    fs::remove_all(dir);
    if (o.pass) o.detail = fmt::format("20 scenes, no invariant violations, evidence answer on {}/20", correct);
    return o;
}

}  // namespace

int main() {
    bool all = true;
    all &= run_criterion(1, "equation oracles", 10, equation_oracles);
    all &= run_criterion(2, "sink cancellation", 30, sink_cancellation);
    all &= run_criterion(3, "planted layer recovery", 30, planted_layer);
    all &= run_criterion(4, "sink-dominant localization", 60, sink_dominant);
    all &= run_criterion(5, "crop geometry fuzz", 10, crop_fuzz);
    all &= run_criterion(6, "decoding reductions", 30, decoding_reductions);
    all &= run_criterion(7, "determinism and round trips", 30, determinism);
    all &= run_criterion(8, "toy end-to-end", 60, toy_end_to_end);
    fmt::print("{}\n", all ? "ALL PASS" : "SOME CRITERIA FAILED");
    return all ? 0 : 1;
}
