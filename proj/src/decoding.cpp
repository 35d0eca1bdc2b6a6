// SPDX-License-Identifier: Apache-2.0
#include "laser/decoding.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "laser/errors.hpp"

namespace laser {

void LogitsPair::validate() const {
    if (z_plus.size() != z_minus.size()) {
        throw ShapeError(fmt::format("step {}: z_plus has {} entries but z_minus has {}", step, z_plus.size(),
                                     z_minus.size()));
    }
    for (std::size_t i = 0; i < z_plus.size(); ++i) {
        if (!std::isfinite(z_plus[i]) || !std::isfinite(z_minus[i])) {
            throw ShapeError(fmt::format("step {}: non-finite logit at index {}", step, i));
        }
    }
}

std::vector<double> compute_vat(const LogitsPair& pair) {
    pair.validate();
    std::vector<double> vat(pair.z_plus.size());
    for (std::size_t i = 0; i < vat.size(); ++i) vat[i] = pair.z_plus[i] - pair.z_minus[i];
    return vat;
}

ScoredLogits combine_scores(const LogitsPair& pair, double alpha) {
    if (!(alpha >= 0.0)) throw ConfigError(fmt::format("alpha must be >= 0, got {}", alpha));
    ScoredLogits out;
    out.step = pair.step;
    out.vat = compute_vat(pair);
    out.s.resize(out.vat.size());
    for (std::size_t i = 0; i < out.s.size(); ++i) {
        out.s[i] = alpha == 0.0 ? pair.z_plus[i] : pair.z_plus[i] + alpha * out.vat[i];
    }
    return out;
}

int select_token(std::span<const double> scores, DecodeMode mode, double temperature, Rng& sampler) {
    if (scores.empty()) throw ShapeError("cannot select a token from an empty score vector");
    int best = 0;
    for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
        if (scores[i] > scores[best]) best = i;
    }
    if (mode == DecodeMode::greedy) return best;
    if (!(temperature > 0.0)) throw ConfigError(fmt::format("temperature must be positive, got {}", temperature));

    std::vector<double> weights(scores.size());
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        weights[i] = std::exp((scores[i] - scores[best]) / temperature);
        total += weights[i];
    }
    const double u = sampler.uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
}

int select_token(ScoredLogits& scored, DecodeMode mode, double temperature, Rng& sampler) {
    scored.chosen_token = select_token(scored.s, mode, temperature, sampler);
    return scored.chosen_token;
}

namespace {

template <typename F>
auto tagged(char stream, F&& f) {
    try {
        return f();
    } catch (const BackendError&) {
        throw;
    } catch (const std::exception& e) {
        throw BackendError(stream, e.what());
    }
}

}  // namespace

DecodeResult decode_single(const DecodingBackend& backend, const Prompt& prompt, const PipelineConfig& config,
                           int max_new_tokens) {
    Rng sampler(config.seed);
    DecodeResult result;
    auto stream = tagged('+', [&] { return backend.open(prompt); });
    result.streams_opened = 1;
    auto logits = tagged('+', [&] { return stream->prefill(); });
    for (int t = 0; t < max_new_tokens; ++t) {
        LogitsPair pair{t, logits, logits};
        ScoredLogits scored = combine_scores(pair, 0.0);
        const int token = select_token(scored, config.decode_mode, config.temperature, sampler);
        result.tokens.push_back(token);
        result.steps.push_back(std::move(scored));
        if (token == backend.end_token() || t + 1 == max_new_tokens) break;
        logits = tagged('+', [&] { return stream->step(token); });
    }
    return result;
}

DecodeResult decode_pair(const DecodingBackend& backend, const Prompt& positive, const Prompt& negative,
                         const PipelineConfig& config, int max_new_tokens) {
    if (!config.vat_enabled) return decode_single(backend, positive, config, max_new_tokens);
    Rng sampler(config.seed);
    DecodeResult result;
    auto plus = tagged('+', [&] { return backend.open(positive); });
    auto minus = tagged('-', [&] { return backend.open(negative); });
    result.streams_opened = 2;
    LogitsPair pair;
    pair.z_plus = tagged('+', [&] { return plus->prefill(); });
    pair.z_minus = tagged('-', [&] { return minus->prefill(); });
    for (int t = 0; t < max_new_tokens; ++t) {
        pair.step = t;
        ScoredLogits scored = combine_scores(pair, config.alpha);
        const int token = select_token(scored, config.decode_mode, config.temperature, sampler);
        result.tokens.push_back(token);
        result.steps.push_back(std::move(scored));
        if (token == backend.end_token() || t + 1 == max_new_tokens) break;
        pair.z_plus = tagged('+', [&] { return plus->step(token); });
        pair.z_minus = tagged('-', [&] { return minus->step(token); });
        const auto hp = plus->history();
        const auto hm = minus->history();
        if (!std::equal(hp.begin(), hp.end(), hm.begin(), hm.end())) {
            throw BackendError('-', fmt::format("stream prefixes diverged at step {}", t));
        }
    }
    return result;
}

double vcd_alpha_bar(int noise_steps) {
    if (noise_steps < 0 || noise_steps > kVcdTotalSteps) {
        throw ConfigError(fmt::format("noise steps {} outside [0, {}]", noise_steps, kVcdTotalSteps));
    }
    double abar = 1.0;
    for (int i = 0; i < noise_steps; ++i) {
        const double x = -6.0 + 12.0 * i / (kVcdTotalSteps - 1);
        const double beta = 1.0 / (1.0 + std::exp(-x)) * (0.5e-2 - 1e-5) + 1e-5;
        abar *= 1.0 - beta;
    }
    return abar;
}

ImageBuffer vcd_counterfactual(const ImageBuffer& image, int noise_steps, std::uint64_t seed) {
    const double abar = vcd_alpha_bar(noise_steps);
    ImageBuffer out = image;
    out.role = ImageRole::counterfactual;
    if (noise_steps == 0) return out;
    const double keep = std::sqrt(abar);
    const double noise = std::sqrt(1.0 - abar);
    Rng rng(seed);
    for (auto& v : out.data) {
        const double x = v / 127.5 - 1.0;
        const double noised = keep * x + noise * rng.normal();
        v = static_cast<std::uint8_t>(std::clamp(std::lround((noised + 1.0) * 127.5), 0L, 255L));
    }
    return out;
}

}  // namespace laser
