// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "laser/rng.hpp"
#include "laser/types.hpp"

namespace laser {

// Pre-softmax logits of the positive (cropped) and counterfactual streams.
struct LogitsPair {
    int step = 0;
    std::vector<double> z_plus;
    std::vector<double> z_minus;

    // Throws ShapeError on length mismatch or non-finite entries.
    void validate() const;
};

struct ScoredLogits {
    int step = 0;
    std::vector<double> vat;  // z_plus - z_minus
    std::vector<double> s;    // z_plus + alpha * vat
    int chosen_token = -1;
};

std::vector<double> compute_vat(const LogitsPair& pair);
ScoredLogits combine_scores(const LogitsPair& pair, double alpha);

// Greedy: argmax, lowest index on ties. Sample: draw from softmax(s / T).
int select_token(std::span<const double> scores, DecodeMode mode, double temperature, Rng& sampler);
int select_token(ScoredLogits& scored, DecodeMode mode, double temperature, Rng& sampler);

// Image plus tokenized question for one decoding stream.
struct Prompt {
    ImageBuffer image;
    std::vector<int> query;
};

// One autoregressive stream: prefill once, then feed chosen tokens.
class DecodingStream {
public:
    virtual ~DecodingStream() = default;
    virtual std::vector<double> prefill() = 0;
    virtual std::vector<double> step(int token) = 0;
    // Tokens fed through step() so far.
    virtual std::span<const int> history() const = 0;
};

class DecodingBackend {
public:
    virtual ~DecodingBackend() = default;
    virtual std::unique_ptr<DecodingStream> open(const Prompt& prompt) const = 0;
    virtual int end_token() const = 0;
};

struct DecodeResult {
    std::vector<int> tokens;
    std::vector<ScoredLogits> steps;
    int streams_opened = 0;
};

// Plain decoding of one prompt.
DecodeResult decode_single(const DecodingBackend& backend, const Prompt& prompt, const PipelineConfig& config,
                           int max_new_tokens);

// Two-stream contrastive decoding. Both streams are fed the token chosen from
// the combined score each step. Falls back to decode_single when VAT is off.
// Backend failures surface as BackendError tagged '+' or '-'.
DecodeResult decode_pair(const DecodingBackend& backend, const Prompt& positive, const Prompt& negative,
                         const PipelineConfig& config, int max_new_tokens);

// Diffusion-style noising for the VCD baseline: x_t = sqrt(abar_t) x0 +
// sqrt(1 - abar_t) eps on pixels scaled to [-1, 1], with the sigmoid beta
// schedule over kVcdTotalSteps. noise_steps = 0 returns the image unchanged.
inline constexpr int kVcdTotalSteps = 1000;
ImageBuffer vcd_counterfactual(const ImageBuffer& image, int noise_steps, std::uint64_t seed);

// Cumulative product of (1 - beta) after `noise_steps` steps.
double vcd_alpha_bar(int noise_steps);

}  // namespace laser
