// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "laser/types.hpp"

namespace laser {

// Query-induced part of one head's visual attention: max(0, with - without).
struct ContrastiveMap {
    int layer = 0;
    int head = 0;
    std::vector<double> values;
};

// Top heads of one layer, strongest first (ties: lower head index first).
struct HeadSelection {
    int layer = 0;
    std::vector<int> heads;
    std::vector<double> scores;
};

struct VaqProfile {
    std::vector<double> layer_scores;            // one per layer
    std::vector<std::vector<double>> head_scores;  // [step][layer * H + head]
    std::vector<std::vector<HeadSelection>> selections;  // [step][layer]
    int selected_layer = 0;
    int heads = 0;

    int steps() const { return static_cast<int>(selections.size()); }
    const HeadSelection& top_heads(int layer, int step = 0) const { return selections.at(step).at(layer); }
    double head_score(int layer, int head, int step = 0) const {
        return head_scores.at(step).at(static_cast<std::size_t>(layer) * heads + head);
    }
};

std::vector<double> contrastive_values(std::span<const float> with_query, std::span<const float> without_query);

// Throws RangeError for a layer or head outside the trace.
ContrastiveMap contrastive_map(const AttentionTrace& trace, int layer, int head);

// L2 norm of the map.
double head_vaq(std::span<const double> values);
inline double head_vaq(const ContrastiveMap& map) { return head_vaq(map.values); }

HeadSelection select_top_heads(int layer, std::span<const double> head_scores, int k);

// Index of the largest value; the lowest index wins ties.
int argmax_lowest(std::span<const double> values);

// Layer-wise VAQ from the prefill position alone. config.fixed_layer, when
// set, overrides the selected layer; scores are still reported. Throws
// ConfigError when k_head exceeds the head count.
VaqProfile layer_vaq(const AttentionTrace& trace, const PipelineConfig& config);

// Averages layer scores over several decoding steps, re-ranking heads at every
// step. All traces must share one shape.
VaqProfile layer_vaq(std::span<const AttentionTrace> steps, const PipelineConfig& config);

}  // namespace laser
