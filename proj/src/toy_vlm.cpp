// SPDX-License-Identifier: Apache-2.0
#include "laser/toy_vlm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <fmt/format.h>

#include "laser/errors.hpp"
#include "laser/rng.hpp"

namespace laser {

namespace vocab {

int char_token(char c) {
    unsigned char u = static_cast<unsigned char>(c);
    if (u >= 'a' && u <= 'z') u = static_cast<unsigned char>(u - 'a' + 'A');
    if (u < 32 || u >= 32 + kTextChars) u = '?';
    return kFirstText + (u - 32);
}

std::vector<int> encode_text(std::string_view text) {
    std::vector<int> out;
    out.reserve(text.size());
    for (char c : text) out.push_back(char_token(c));
    return out;
}

std::string decode_tokens(std::span<const int> tokens) {
    std::string out;
    for (int t : tokens) {
        if (t >= kFirstText && t < kFirstText + kTextChars) {
            out.push_back(static_cast<char>(32 + t - kFirstText));
        } else if (t == kEos) {
            break;
        } else if (t >= kFirstText + kTextChars) {
            out += fmt::format("<{}>", t);
        }
    }
    return out;
}

}  // namespace vocab

void ToyVlmConfig::validate() const {
    if (layers <= 0 || heads <= 0 || model_dim <= 0) {
        throw ConfigError(fmt::format("toy model needs positive layers/heads/dim, got {}/{}/{}", layers, heads,
                                      model_dim));
    }
    if (model_dim % heads != 0) {
        throw ConfigError(fmt::format("model_dim {} is not divisible by {} heads", model_dim, heads));
    }
    if (vocab_size < vocab::kMinSize) {
        throw ConfigError(fmt::format("vocab_size {} is below the byte vocabulary size {}", vocab_size,
                                      vocab::kMinSize));
    }
    if (patch_px <= 0 || max_grid_rows <= 0 || max_grid_cols <= 0 || ffn_dim <= 0 || max_seq <= 0) {
        throw ConfigError("toy model sizes must be positive");
    }
}

namespace {

std::vector<float> gaussian(Rng& rng, std::size_t n, double stddev) {
    std::vector<float> out(n);
    for (auto& v : out) v = static_cast<float>(rng.normal() * stddev);
    return out;
}

ToyWeights init_weights(const ToyVlmConfig& c) {
    Rng rng(c.seed);
    const std::size_t d = c.model_dim;
    const std::size_t f = c.ffn_dim;
    ToyWeights w;
    w.token_embedding = gaussian(rng, c.vocab_size * d, 1.0);
    w.patch_proj = gaussian(rng, d * c.patch_inputs(), 1.0 / std::sqrt(static_cast<double>(c.patch_inputs())));
    w.patch_bias = gaussian(rng, d, 0.1);
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    for (int l = 0; l < c.layers; ++l) {
        ToyLayerWeights lw;
        lw.attn_norm.assign(d, 1.0f);
        lw.wq = gaussian(rng, d * d, sd);
        lw.wk = gaussian(rng, d * d, sd);
        lw.wv = gaussian(rng, d * d, sd);
        lw.wo = gaussian(rng, d * d, sd);
        lw.ffn_norm.assign(d, 1.0f);
        lw.w1 = gaussian(rng, f * d, sd);
        lw.b1.assign(f, 0.0f);
        lw.w2 = gaussian(rng, d * f, 1.0 / std::sqrt(static_cast<double>(f)));
        lw.b2.assign(d, 0.0f);
        w.layers.push_back(std::move(lw));
    }
    w.final_norm.assign(d, 1.0f);
    w.output_head = gaussian(rng, c.vocab_size * d, sd);
    return w;
}

void check_weights(const ToyVlmConfig& c, const ToyWeights& w) {
    const std::size_t d = c.model_dim;
    const std::size_t f = c.ffn_dim;
    auto need = [](const std::vector<float>& v, std::size_t n, const char* what) {
        if (v.size() != n) throw ConfigError(fmt::format("weight '{}' has {} entries, expected {}", what, v.size(), n));
    };
    need(w.token_embedding, c.vocab_size * d, "token_embedding");
    need(w.patch_proj, d * c.patch_inputs(), "patch_proj");
    need(w.patch_bias, d, "patch_bias");
    need(w.final_norm, d, "final_norm");
    need(w.output_head, c.vocab_size * d, "output_head");
    if (w.layers.size() != static_cast<std::size_t>(c.layers)) throw ConfigError("layer count mismatch in weights");
    for (const auto& lw : w.layers) {
        need(lw.attn_norm, d, "attn_norm");
        need(lw.ffn_norm, d, "ffn_norm");
        for (const auto* m : {&lw.wq, &lw.wk, &lw.wv, &lw.wo}) need(*m, d * d, "attention projection");
        need(lw.w1, f * d, "w1");
        need(lw.b1, f, "b1");
        need(lw.w2, d * f, "w2");
        need(lw.b2, d, "b2");
    }
}

std::vector<float> sinusoidal_table(const ToyVlmConfig& c) {
    const int d = c.model_dim;
    std::vector<float> table(static_cast<std::size_t>(c.max_seq) * d);
    for (int pos = 0; pos < c.max_seq; ++pos) {
        for (int i = 0; i < d; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / d);
            table[static_cast<std::size_t>(pos) * d + i] = static_cast<float>(c.position_scale * std::sin(pos * freq));
            if (i + 1 < d) {
                table[static_cast<std::size_t>(pos) * d + i + 1] =
                    static_cast<float>(c.position_scale * std::cos(pos * freq));
            }
        }
    }
    return table;
}

void matvec(const std::vector<float>& w, std::span<const float> x, std::span<float> y) {
    const std::size_t in = x.size();
    for (std::size_t o = 0; o < y.size(); ++o) {
        const float* row = w.data() + o * in;
        float acc = 0.0f;
        for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
}

std::vector<float> rms_norm(std::span<const float> x, const std::vector<float>& gain) {
    double ss = 0.0;
    for (float v : x) ss += static_cast<double>(v) * v;
    const float inv = static_cast<float>(1.0 / std::sqrt(ss / x.size() + 1e-6));
    std::vector<float> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
    return out;
}

float gelu(float x) {
    constexpr float k = 0.7978845608f;  // sqrt(2 / pi)
    return 0.5f * x * (1.0f + std::tanh(k * (x + 0.044715f * x * x * x)));
}

}  // namespace

ToyVlm::ToyVlm(ToyVlmConfig config) : ToyVlm(config, (config.validate(), init_weights(config))) {}

ToyVlm::ToyVlm(ToyVlmConfig config, ToyWeights weights) : config_(config), weights_(std::move(weights)) {
    config_.validate();
    check_weights(config_, weights_);
    positions_ = sinusoidal_table(config_);
}

ImageBuffer ToyVlm::fit_image(const ImageBuffer& image) const {
    const int px = config_.patch_px;
    const int rows = std::min(image.height / px, config_.max_grid_rows);
    const int cols = std::min(image.width / px, config_.max_grid_cols);
    if (rows == 0 || cols == 0) {
        throw SizeError(fmt::format("image {}x{} is smaller than one {}px patch", image.width, image.height, px));
    }
    const int w = cols * px;
    const int h = rows * px;
    if (w == image.width && h == image.height) return image;
    const int ox = (image.width - w) / 2;
    const int oy = (image.height - h) / 2;
    ImageBuffer out(w, h, {}, image.role);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) out.set_pixel(x, y, image.pixel(ox + x, oy + y));
    }
    return out;
}

TokenizedImage ToyVlm::tokenize_image(const ImageBuffer& image) const {
    const int px = config_.patch_px;
    const int rows = std::min(image.height / px, config_.max_grid_rows);
    const int cols = std::min(image.width / px, config_.max_grid_cols);
    if (rows == 0 || cols == 0) {
        throw SizeError(fmt::format("image {}x{} is smaller than one {}px patch", image.width, image.height, px));
    }
    TokenizedImage out;
    out.grid = {rows, cols, cols * px, rows * px};
    out.offset_x = (image.width - cols * px) / 2;
    out.offset_y = (image.height - rows * px) / 2;
    const int d = config_.model_dim;
    out.embeddings.resize(static_cast<std::size_t>(rows) * cols * d);
    std::vector<float> pixels(config_.patch_inputs());
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            std::size_t k = 0;
            for (int y = 0; y < px; ++y) {
                for (int x = 0; x < px; ++x) {
                    const auto o = image.offset(out.offset_x + c * px + x, out.offset_y + r * px + y);
                    for (int ch = 0; ch < 3; ++ch) pixels[k++] = image.data[o + ch] / 255.0f;
                }
            }
            std::span<float> e(out.embeddings.data() + (static_cast<std::size_t>(r) * cols + c) * d, d);
            matvec(weights_.patch_proj, pixels, e);
            for (int i = 0; i < d; ++i) e[i] += weights_.patch_bias[i];
        }
    }
    return out;
}

std::vector<float> ToyVlm::embed_token(int token) const {
    if (token < 0 || token >= config_.vocab_size) {
        throw RangeError(fmt::format("token {} outside vocabulary of {}", token, config_.vocab_size));
    }
    const int d = config_.model_dim;
    std::vector<float> x(weights_.token_embedding.begin() + static_cast<std::ptrdiff_t>(token) * d,
                         weights_.token_embedding.begin() + static_cast<std::ptrdiff_t>(token + 1) * d);
    return x;
}

void ToyVlm::run_position(std::vector<float>& x, int position, KvCache& cache, std::vector<float>* attn_out) const {
    if (position >= config_.max_seq) {
        throw CapacityError(fmt::format("sequence position {} exceeds capacity {}", position, config_.max_seq));
    }
    const int d = config_.model_dim;
    const int H = config_.heads;
    const int dh = config_.head_dim();
    const int f = config_.ffn_dim;
    for (int i = 0; i < d; ++i) x[i] += positions_[static_cast<std::size_t>(position) * d + i];
    if (cache.keys.empty()) {
        cache.keys.resize(config_.layers);
        cache.values.resize(config_.layers);
    }
    const int n = position + 1;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    std::vector<float> q(d), k(d), v(d), mixed(d), proj(d), hidden(f);
    std::vector<double> probs(n);
    if (attn_out) attn_out->assign(static_cast<std::size_t>(config_.layers) * H * n, 0.0f);
    for (int l = 0; l < config_.layers; ++l) {
        const auto& lw = weights_.layers[l];
        const auto xn = rms_norm(x, lw.attn_norm);
        matvec(lw.wq, xn, q);
        matvec(lw.wk, xn, k);
        matvec(lw.wv, xn, v);
        auto& keys = cache.keys[l];
        auto& vals = cache.values[l];
        if (keys.size() != static_cast<std::size_t>(position) * d) {
            throw ShapeError(fmt::format("cache holds {} positions at layer {}, expected {}", keys.size() / d, l,
                                         position));
        }
        keys.insert(keys.end(), k.begin(), k.end());
        vals.insert(vals.end(), v.begin(), v.end());
        for (int h = 0; h < H; ++h) {
            double max_score = -1e300;
            for (int j = 0; j < n; ++j) {
                float s = 0.0f;
                const float* kj = keys.data() + static_cast<std::size_t>(j) * d + h * dh;
                for (int i = 0; i < dh; ++i) s += q[h * dh + i] * kj[i];
                probs[j] = s * scale;
                max_score = std::max(max_score, probs[j]);
            }
            double total = 0.0;
            for (int j = 0; j < n; ++j) {
                probs[j] = std::exp(probs[j] - max_score);
                total += probs[j];
            }
            for (int i = 0; i < dh; ++i) mixed[h * dh + i] = 0.0f;
            for (int j = 0; j < n; ++j) {
                const float p = static_cast<float>(probs[j] / total);
                if (attn_out) (*attn_out)[(static_cast<std::size_t>(l) * H + h) * n + j] = p;
                const float* vj = vals.data() + static_cast<std::size_t>(j) * d + h * dh;
                for (int i = 0; i < dh; ++i) mixed[h * dh + i] += p * vj[i];
            }
        }
        matvec(lw.wo, mixed, proj);
        for (int i = 0; i < d; ++i) x[i] += proj[i];

        const auto xf = rms_norm(x, lw.ffn_norm);
        matvec(lw.w1, xf, hidden);
        for (int i = 0; i < f; ++i) hidden[i] = gelu(hidden[i] + lw.b1[i]);
        matvec(lw.w2, hidden, proj);
        for (int i = 0; i < d; ++i) x[i] += proj[i] + lw.b2[i];
    }
    cache.length = n;
}

PrefillResult ToyVlm::forward_prefill(std::span<const int> system, const TokenizedImage& visual,
                                      std::span<const int> query, std::span<const int> answer_prefix, KvCache* cache,
                                      bool keep_full_attention) const {
    const int d = config_.model_dim;
    const int P = visual.grid.patch_count();
    const int S = static_cast<int>(system.size() + query.size() + answer_prefix.size()) + P;
    if (S > config_.max_seq) {
        throw CapacityError(fmt::format("prompt of {} tokens exceeds capacity {}", S, config_.max_seq));
    }
    if (answer_prefix.empty()) throw ShapeError("answer prefix must hold at least one token");

    PrefillResult result;
    auto span_at = [](int start, std::size_t len) {
        return TokenSpan{static_cast<std::uint32_t>(start), static_cast<std::uint32_t>(start + len)};
    };
    result.layout.system = span_at(0, system.size());
    result.layout.visual = span_at(static_cast<int>(system.size()), P);
    result.layout.query = span_at(static_cast<int>(result.layout.visual.end), query.size());
    result.layout.answer_prefix = span_at(static_cast<int>(result.layout.query.end), answer_prefix.size());
    result.sequence_length = S;

    KvCache local;
    KvCache& kv = cache ? *cache : local;
    kv = KvCache{};
    const int L = config_.layers;
    const int H = config_.heads;
    if (keep_full_attention) {
        result.full_attention.assign(static_cast<std::size_t>(L) * H, std::vector<float>(static_cast<std::size_t>(S) * S, 0.0f));
    }
    std::vector<float> attn;
    std::vector<float> x;
    int pos = 0;
    auto feed = [&](std::vector<float> input) {
        x = std::move(input);
        const bool last = pos == S - 1;
        const bool want = last || keep_full_attention;
        run_position(x, pos, kv, want ? &attn : nullptr);
        if (keep_full_attention) {
            const int n = pos + 1;
            for (int lh = 0; lh < L * H; ++lh) {
                std::copy(attn.begin() + static_cast<std::ptrdiff_t>(lh) * n,
                          attn.begin() + static_cast<std::ptrdiff_t>(lh + 1) * n,
                          result.full_attention[lh].begin() + static_cast<std::ptrdiff_t>(pos) * S);
            }
        }
        ++pos;
    };
    for (int t : system) feed(embed_token(t));
    for (int p = 0; p < P; ++p) {
        feed(std::vector<float>(visual.embeddings.begin() + static_cast<std::ptrdiff_t>(p) * d,
                                visual.embeddings.begin() + static_cast<std::ptrdiff_t>(p + 1) * d));
    }
    for (int t : query) feed(embed_token(t));
    for (int t : answer_prefix) feed(embed_token(t));

    result.visual_attention.resize(static_cast<std::size_t>(L) * H * P);
    const int vis0 = static_cast<int>(result.layout.visual.start);
    for (int lh = 0; lh < L * H; ++lh) {
        for (int p = 0; p < P; ++p) {
            result.visual_attention[static_cast<std::size_t>(lh) * P + p] = attn[static_cast<std::size_t>(lh) * S + vis0 + p];
        }
    }
    const auto xn = rms_norm(x, weights_.final_norm);
    result.logits.resize(config_.vocab_size);
    matvec(weights_.output_head, xn, result.logits);
    return result;
}

std::vector<float> ToyVlm::decode_step(KvCache& cache, int token) const {
    auto x = embed_token(token);
    run_position(x, cache.length, cache, nullptr);
    const auto xn = rms_norm(x, weights_.final_norm);
    std::vector<float> logits(config_.vocab_size);
    matvec(weights_.output_head, xn, logits);
    return logits;
}

std::vector<int> toy_system_tokens() { return {vocab::kBos, vocab::kSep}; }
std::vector<int> toy_answer_prefix() { return {vocab::kSep, vocab::kAnswer}; }

AttentionTrace ToyVlm::make_paired_trace(const ImageBuffer& image, std::span<const int> query) const {
    const auto fitted = fit_image(image);
    const auto visual = tokenize_image(fitted);
    const auto system = toy_system_tokens();
    const auto answer = toy_answer_prefix();
    const auto with = forward_prefill(system, visual, query, answer);
    const auto without = forward_prefill(system, visual, {}, answer);

    // Both conditions share everything outside the query span.
    const auto& a = with.layout;
    const auto& b = without.layout;
    if (a.system != b.system || a.visual != b.visual || a.answer_prefix.size() != b.answer_prefix.size() ||
        !b.query.empty() || a.query.size() != query.size()) {
        throw ValidationError("with/without-query prompts differ outside the query span");
    }

    AttentionTrace trace;
    trace.layers = config_.layers;
    trace.heads = config_.heads;
    trace.patches = visual.grid.patch_count();
    trace.grid = visual.grid;
    trace.layout = with.layout;
    trace.with_query = with.visual_attention;
    trace.without_query = without.visual_attention;
    trace.source_id = fmt::format("toy-vlm seed={} L={} H={} d={} grid={}x{}", config_.seed, config_.layers,
                                  config_.heads, config_.model_dim, visual.grid.rows, visual.grid.cols);
    trace.validate();
    return trace;
}

std::uint64_t ToyVlm::weight_digest() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const std::vector<float>& v) {
        const auto* b = reinterpret_cast<const unsigned char*>(v.data());
        for (std::size_t i = 0; i < v.size() * sizeof(float); ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    mix(weights_.token_embedding);
    mix(weights_.patch_proj);
    mix(weights_.patch_bias);
    for (const auto& lw : weights_.layers) {
        for (const auto* m : {&lw.attn_norm, &lw.wq, &lw.wk, &lw.wv, &lw.wo, &lw.ffn_norm, &lw.w1, &lw.b1, &lw.w2, &lw.b2}) {
            mix(*m);
        }
    }
    mix(weights_.final_norm);
    mix(weights_.output_head);
    return h;
}

namespace {

class ToyStream : public DecodingStream {
public:
    ToyStream(const ToyVlm& model, const Prompt& prompt) : model_(model), prompt_(prompt) {}

    std::vector<double> prefill() override {
        const auto visual = model_.tokenize_image(model_.fit_image(prompt_.image));
        const auto result =
            model_.forward_prefill(toy_system_tokens(), visual, prompt_.query, toy_answer_prefix(), &cache_);
        return {result.logits.begin(), result.logits.end()};
    }

    std::vector<double> step(int token) override {
        history_.push_back(token);
        const auto logits = model_.decode_step(cache_, token);
        return {logits.begin(), logits.end()};
    }

    std::span<const int> history() const override { return history_; }

private:
    const ToyVlm& model_;
    Prompt prompt_;
    KvCache cache_;
    std::vector<int> history_;
};

}  // namespace

std::unique_ptr<DecodingStream> ToyBackend::open(const Prompt& prompt) const {
    return std::make_unique<ToyStream>(model_, prompt);
}

}  // namespace laser
