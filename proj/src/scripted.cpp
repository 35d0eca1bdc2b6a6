// SPDX-License-Identifier: Apache-2.0
// Hand-planted toy models with known grounding behaviour.
//
// Residual stream channels used by the planted circuits:
//   0 bias     constant 1 on every token
//   1 visual   1 on visual tokens
//   2 query    1 on text tokens
//   3 answer   1 on the answer-prefix marker
//   4 red      mean of (R - (G + B) / 2) over a patch
//   5 bright   mean brightness - 0.5 over a patch
//   6 qcopy    written at the answer position by layer 0, head 0 (query present)
//   7 evidence written by the grounding head (red patch attended)
// All other weights are small seeded noise.
#include <cmath>

#include <fmt/format.h>

#include "laser/errors.hpp"
#include "laser/rng.hpp"
#include "laser/scene.hpp"
#include "laser/toy_vlm.hpp"

namespace laser {
namespace {

enum Channel : int { kBias = 0, kVisual, kQuery, kAnswer, kRed, kBright, kQcopy, kEvidence, kFirstFree };

struct Plan {
    int signal_layer = 0;
    bool sink = false;
    double ground_gain = 1.9;  // query x red coupling, per side
    double sink_gain = 0.0;    // bias x brightness coupling, per side
};

Plan plan_for(std::string_view scenario, const ToyVlmConfig& c) {
    Plan p;
    if (scenario == "mid-layer-grounding" || scenario == "evidence-flips-token") {
        p.signal_layer = c.layers / 2;
    } else if (scenario == "deep-layer-grounding") {
        p.signal_layer = c.layers - 1;
    } else if (scenario == "sink-dominant") {
        p.signal_layer = c.layers / 2;
        p.sink = true;
        p.ground_gain = 1.4;
        p.sink_gain = 2.1;
    } else {
        throw ConfigError(fmt::format("unknown scripted scenario '{}'", scenario));
    }
    return p;
}

void fill_noise(Rng& rng, std::vector<float>& v, double sd) {
    for (auto& x : v) x = static_cast<float>(rng.normal() * sd);
}

float& at(std::vector<float>& m, int cols, int row, int col) {
    return m[static_cast<std::size_t>(row) * cols + col];
}

ToyWeights planted_weights(const ToyVlmConfig& c, const Plan& plan, std::uint64_t seed) {
    const int d = c.model_dim;
    const int dh = c.head_dim();
    const int f = c.ffn_dim;
    const int pin = c.patch_inputs();
    const int npix = c.patch_px * c.patch_px;
    Rng rng(seed ^ 0x5eedf00dull);
    constexpr double kNoise = 0.01;

    ToyWeights w;
    w.token_embedding.assign(static_cast<std::size_t>(c.vocab_size) * d, 0.0f);
    for (int t = 0; t < c.vocab_size; ++t) {
        at(w.token_embedding, d, t, kBias) = 1.0f;
        if (t >= vocab::kFirstText) at(w.token_embedding, d, t, kQuery) = 1.0f;
        for (int i = kFirstFree; i < d; ++i) at(w.token_embedding, d, t, i) = static_cast<float>(rng.normal() * 0.1);
    }
    at(w.token_embedding, d, vocab::kAnswer, kAnswer) = 1.0f;

    w.patch_proj.assign(static_cast<std::size_t>(d) * pin, 0.0f);
    w.patch_bias.assign(d, 0.0f);
    w.patch_bias[kBias] = 1.0f;
    w.patch_bias[kVisual] = 1.0f;
    w.patch_bias[kBright] = -0.5f;
    for (int k = 0; k < npix; ++k) {
        at(w.patch_proj, pin, kRed, 3 * k + 0) = 1.0f / npix;
        at(w.patch_proj, pin, kRed, 3 * k + 1) = -0.5f / npix;
        at(w.patch_proj, pin, kRed, 3 * k + 2) = -0.5f / npix;
        for (int ch = 0; ch < 3; ++ch) at(w.patch_proj, pin, kBright, 3 * k + ch) = 1.0f / (3.0f * npix);
    }
    for (int i = kFirstFree; i < d; ++i) {
        for (int k = 0; k < pin; ++k) at(w.patch_proj, pin, i, k) = static_cast<float>(rng.normal() * 0.02);
    }

    for (int l = 0; l < c.layers; ++l) {
        ToyLayerWeights lw;
        lw.attn_norm.assign(d, 1.0f);
        lw.ffn_norm.assign(d, 1.0f);
        for (auto* m : {&lw.wq, &lw.wk, &lw.wv, &lw.wo}) {
            m->resize(static_cast<std::size_t>(d) * d);
            fill_noise(rng, *m, kNoise);
        }
        lw.w1.resize(static_cast<std::size_t>(f) * d);
        lw.w2.resize(static_cast<std::size_t>(d) * f);
        fill_noise(rng, lw.w1, kNoise);
        fill_noise(rng, lw.w2, kNoise);
        lw.b1.assign(f, 0.0f);
        lw.b2.assign(d, 0.0f);
        // Keep planted channels clear of the background noise.
        for (int i = 0; i < d; ++i) {
            for (int ch = 0; ch < kFirstFree; ++ch) {
                at(lw.wo, d, ch, i) = 0.0f;
            }
        }
        for (int i = 0; i < f; ++i) {
            for (int ch = 0; ch < kFirstFree; ++ch) at(lw.w2, f, ch, i) = 0.0f;
        }

        if (plan.sink) {
            for (int h = 0; h < c.heads; ++h) {
                if (l == 0 && h == 0) continue;  // the query-copy head stays sink free
                at(lw.wq, d, h * dh + 1, kBias) = static_cast<float>(plan.sink_gain);
                at(lw.wk, d, h * dh + 1, kBright) = static_cast<float>(plan.sink_gain);
            }
        }
        if (l == 0) {
            // Answer position gathers the query tokens and records their presence.
            at(lw.wq, d, 0, kAnswer) = 2.0f;
            at(lw.wk, d, 0, kQuery) = 2.0f;
            at(lw.wv, d, 0, kQuery) = 1.0f;
            at(lw.wo, d, kQcopy, 0) = 0.2f;
        }
        if (l == plan.signal_layer) {
            // Query presence turns head 0 towards red patches and copies redness out.
            at(lw.wq, d, 2, kQcopy) = static_cast<float>(plan.ground_gain);
            at(lw.wk, d, 2, kRed) = static_cast<float>(plan.ground_gain);
            at(lw.wv, d, 3, kRed) = 1.0f;
            at(lw.wo, d, kEvidence, 3) = 0.25f;
        }
        w.layers.push_back(std::move(lw));
    }
    w.final_norm.assign(d, 1.0f);
    w.output_head.assign(static_cast<std::size_t>(c.vocab_size) * d, 0.0f);
    for (int t = 0; t < c.vocab_size; ++t) {
        for (int i = kFirstFree; i < d; ++i) at(w.output_head, d, t, i) = static_cast<float>(rng.normal() * kNoise);
    }
    return w;
}

SceneSpec calibration_scene_spec(bool sink) {
    SceneSpec spec;
    spec.sink = sink;
    return spec;
}

}  // namespace

std::vector<std::string> scripted_scenarios() {
    return {"sink-dominant", "mid-layer-grounding", "deep-layer-grounding", "evidence-flips-token"};
}

SceneSpec scenario_scene_spec(const ScenarioTruth& truth) {
    SceneSpec spec;
    spec.target_color = truth.target_color;
    spec.sink = truth.has_sink;
    return spec;
}

ScriptedModel make_scripted_model(std::string_view scenario, std::uint64_t seed) {
    ToyVlmConfig config;
    config.seed = seed;
    config.position_scale = 0.0;
    const Plan plan = plan_for(scenario, config);
    ToyWeights weights = planted_weights(config, plan, seed);

    ScenarioTruth truth;
    truth.scenario = std::string(scenario);
    truth.signal_layer = plan.signal_layer;
    truth.target_color = SceneSpec{}.target_color;
    truth.has_sink = plan.sink;
    truth.prior_token = vocab::char_token('M');
    truth.evidence_token = vocab::char_token('Y');
    truth.absence_token = vocab::char_token('N');

    // Calibrate the answer head: read the normalized bias and evidence
    // channels off the answer position through unit probes.
    const int d = config.model_dim;
    {
        auto probe = weights;
        at(probe.output_head, d, truth.prior_token, kBias) = 1.0f;
        at(probe.output_head, d, truth.evidence_token, kEvidence) = 1.0f;
        const ToyVlm probe_model(config, probe);
        const auto scene = gen_synthetic_scene(calibration_scene_spec(plan.sink), 0);
        truth.query_text = scene.query_text;
        const auto visual = probe_model.tokenize_image(probe_model.fit_image(scene.image));
        const auto out = probe_model.forward_prefill(toy_system_tokens(), visual, scene.query, toy_answer_prefix());
        const double bias = out.logits[truth.prior_token];
        const double evidence = out.logits[truth.evidence_token];
        if (!(bias > 0.0) || !(evidence > 0.0)) {
            throw ConfigError(fmt::format("scripted model '{}' failed calibration (bias {}, evidence {})", scenario,
                                          bias, evidence));
        }
        const double ratio = evidence / bias;
        // With evidence: prior 1.0, evidence 0.75, absence 0.6 (x bias).
        // Without evidence: absence 1.2 beats prior 1.0.
        at(weights.output_head, d, truth.prior_token, kBias) = 1.0f;
        at(weights.output_head, d, truth.evidence_token, kEvidence) = static_cast<float>(0.75 / ratio);
        at(weights.output_head, d, truth.absence_token, kBias) = 1.2f;
        at(weights.output_head, d, truth.absence_token, kEvidence) = static_cast<float>(-0.6 / ratio);
        // End of answer right after the first generated token.
        at(weights.output_head, d, vocab::kEos, kBias) = 2.0f;
        at(weights.output_head, d, vocab::kEos, kAnswer) = -4.0f;
    }
    return {ToyVlm(config, std::move(weights)), std::move(truth)};
}

}  // namespace laser
