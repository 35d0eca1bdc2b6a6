// SPDX-License-Identifier: Apache-2.0
#include "laser/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "laser/errors.hpp"

namespace laser {

std::vector<double> contrastive_values(std::span<const float> with_query, std::span<const float> without_query) {
    if (with_query.size() != without_query.size()) {
        throw ShapeError(fmt::format("attention rows differ in length: {} vs {}", with_query.size(),
                                     without_query.size()));
    }
    std::vector<double> out(with_query.size());
    for (std::size_t p = 0; p < out.size(); ++p) {
        const double d = static_cast<double>(with_query[p]) - static_cast<double>(without_query[p]);
        out[p] = d > 0.0 ? d : 0.0;
    }
    return out;
}

ContrastiveMap contrastive_map(const AttentionTrace& trace, int layer, int head) {
    if (layer < 0 || layer >= trace.layers) {
        throw RangeError(fmt::format("layer {} outside [0, {})", layer, trace.layers));
    }
    if (head < 0 || head >= trace.heads) {
        throw RangeError(fmt::format("head {} outside [0, {})", head, trace.heads));
    }
    return {layer, head, contrastive_values(trace.with_row(layer, head), trace.without_row(layer, head))};
}

double head_vaq(std::span<const double> values) {
    double ss = 0.0;
    for (double v : values) ss += v * v;
    return std::sqrt(ss);
}

HeadSelection select_top_heads(int layer, std::span<const double> head_scores, int k) {
    const int n = static_cast<int>(head_scores.size());
    if (k <= 0 || k > n) {
        throw ConfigError(fmt::format("k_head {} outside [1, {}]", k, n));
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return head_scores[a] > head_scores[b]; });
    HeadSelection sel;
    sel.layer = layer;
    sel.heads.assign(order.begin(), order.begin() + k);
    for (int h : sel.heads) sel.scores.push_back(head_scores[h]);
    return sel;
}

int argmax_lowest(std::span<const double> values) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(values.size()); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

VaqProfile layer_vaq(const AttentionTrace& trace, const PipelineConfig& config) {
    return layer_vaq(std::span<const AttentionTrace>(&trace, 1), config);
}

VaqProfile layer_vaq(std::span<const AttentionTrace> steps, const PipelineConfig& config) {
    if (steps.empty()) throw ShapeError("layer_vaq needs at least one step");
    const auto& first = steps.front();
    for (const auto& s : steps) {
        if (s.layers != first.layers || s.heads != first.heads || s.patches != first.patches) {
            throw ShapeError("all decoding steps must share one trace shape");
        }
    }
    config.validate_for(first);
    const int L = first.layers;
    const int H = first.heads;
    const int k = config.resolved_k_head(H);

    VaqProfile profile;
    profile.heads = H;
    profile.layer_scores.assign(L, 0.0);
    for (const auto& step : steps) {
        std::vector<double> scores(static_cast<std::size_t>(L) * H);
        std::vector<HeadSelection> selections;
        selections.reserve(L);
        for (int l = 0; l < L; ++l) {
            for (int h = 0; h < H; ++h) {
                scores[static_cast<std::size_t>(l) * H + h] =
                    head_vaq(contrastive_values(step.with_row(l, h), step.without_row(l, h)));
            }
            auto sel = select_top_heads(l, std::span<const double>(scores).subspan(static_cast<std::size_t>(l) * H, H), k);
            double sum = 0.0;
            for (double s : sel.scores) sum += s;
            profile.layer_scores[l] += sum / k;
            selections.push_back(std::move(sel));
        }
        profile.head_scores.push_back(std::move(scores));
        profile.selections.push_back(std::move(selections));
    }
    for (auto& s : profile.layer_scores) s /= static_cast<double>(steps.size());
    profile.selected_layer = config.fixed_layer ? *config.fixed_layer : argmax_lowest(profile.layer_scores);
    return profile;
}

}  // namespace laser
