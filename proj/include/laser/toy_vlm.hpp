// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "laser/decoding.hpp"
#include "laser/scene.hpp"
#include "laser/types.hpp"

namespace laser {

// Fixed byte-level vocabulary: four special ids followed by printable ASCII
// 32..91, with lowercase letters folded to uppercase.
namespace vocab {
inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kSep = 2;
inline constexpr int kAnswer = 3;
inline constexpr int kFirstText = 4;
inline constexpr int kTextChars = 60;
inline constexpr int kMinSize = kFirstText + kTextChars;

int char_token(char c);
std::vector<int> encode_text(std::string_view text);
std::string decode_tokens(std::span<const int> tokens);
}  // namespace vocab

struct ToyVlmConfig {
    int layers = 6;
    int heads = 4;
    int model_dim = 64;
    int vocab_size = 64;
    int patch_px = 8;
    int max_grid_rows = 12;
    int max_grid_cols = 12;
    int ffn_dim = 128;
    int max_seq = 256;
    double position_scale = 1.0;  // multiplier on the sinusoidal position table
    std::uint64_t seed = 0;

    int head_dim() const { return model_dim / heads; }
    int patch_inputs() const { return patch_px * patch_px * 3; }
    void validate() const;
};

// Row-major weights; a matrix of shape out x in maps x to W x.
struct ToyLayerWeights {
    std::vector<float> attn_norm;  // d
    std::vector<float> wq, wk, wv, wo;  // d x d
    std::vector<float> ffn_norm;   // d
    std::vector<float> w1, b1;     // f x d, f
    std::vector<float> w2, b2;     // d x f, d
};

struct ToyWeights {
    std::vector<float> token_embedding;  // V x d
    std::vector<float> patch_proj;       // d x (patch_px^2 * 3)
    std::vector<float> patch_bias;       // d
    std::vector<ToyLayerWeights> layers;
    std::vector<float> final_norm;       // d
    std::vector<float> output_head;      // V x d
};

struct TokenizedImage {
    std::vector<float> embeddings;  // P x d
    GridGeometry grid;              // over the tokenized region
    int offset_x = 0;               // region origin inside the source image
    int offset_y = 0;
};

// Per-layer key/value history of one decoding session.
struct KvCache {
    std::vector<std::vector<float>> keys;    // [layer] -> length x d
    std::vector<std::vector<float>> values;  // [layer] -> length x d
    int length = 0;
};

struct PrefillResult {
    std::vector<float> visual_attention;  // L x H x P, last position only
    std::vector<float> logits;            // next-token logits after the last position
    TokenLayout layout;
    int sequence_length = 0;
    // Filled on request: [layer][head] -> S x S causal attention matrix.
    std::vector<std::vector<float>> full_attention;
};

class ToyVlm {
public:
    explicit ToyVlm(ToyVlmConfig config);
    ToyVlm(ToyVlmConfig config, ToyWeights weights);

    const ToyVlmConfig& config() const { return config_; }
    const ToyWeights& weights() const { return weights_; }

    // Center crop to the largest region the tokenizer consumes.
    ImageBuffer fit_image(const ImageBuffer& image) const;

    // One embedding per patch, row-major. Throws SizeError when the image is
    // smaller than a single patch.
    TokenizedImage tokenize_image(const ImageBuffer& image) const;

    // Causal forward over system + visual + query + answer prefix. The query
    // may be empty. Throws CapacityError past max_seq.
    PrefillResult forward_prefill(std::span<const int> system, const TokenizedImage& visual,
                                  std::span<const int> query, std::span<const int> answer_prefix,
                                  KvCache* cache = nullptr, bool keep_full_attention = false) const;

    // Appends one token to the cache and returns the next-token logits.
    std::vector<float> decode_step(KvCache& cache, int token) const;

    // Prefill with and without the query under one prompt structure.
    AttentionTrace make_paired_trace(const ImageBuffer& image, std::span<const int> query) const;

    // FNV-1a over every weight byte.
    std::uint64_t weight_digest() const;

private:
    std::vector<float> embed_token(int token) const;
    void run_position(std::vector<float>& x, int position, KvCache& cache, std::vector<float>* attn_out) const;

    ToyVlmConfig config_;
    ToyWeights weights_;
    std::vector<float> positions_;  // max_seq x d
};

// Prompt pieces shared by every toy-model run.
std::vector<int> toy_system_tokens();
std::vector<int> toy_answer_prefix();

// Adapts ToyVlm to the decoding backend interface.
class ToyBackend : public DecodingBackend {
public:
    explicit ToyBackend(const ToyVlm& model) : model_(model) {}
    std::unique_ptr<DecodingStream> open(const Prompt& prompt) const override;
    int end_token() const override { return vocab::kEos; }

private:
    const ToyVlm& model_;
};

// Known ground truth for a scripted model.
struct ScenarioTruth {
    std::string scenario;
    int signal_layer = 0;
    Rgb target_color;
    bool has_sink = false;
    std::string query_text;
    int prior_token = -1;     // answer favoured without visual evidence
    int evidence_token = -1;  // answer supported by the target
    int absence_token = -1;   // answer once the target is masked
};

struct ScriptedModel {
    ToyVlm model;
    ScenarioTruth truth;
};

// Scenarios: sink-dominant, mid-layer-grounding, deep-layer-grounding,
// evidence-flips-token. Throws ConfigError otherwise.
ScriptedModel make_scripted_model(std::string_view scenario, std::uint64_t seed = 0);
std::vector<std::string> scripted_scenarios();

// Scene family the scripted model was built to answer about.
SceneSpec scenario_scene_spec(const ScenarioTruth& truth);

}  // namespace laser
