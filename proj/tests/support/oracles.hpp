// SPDX-License-Identifier: Apache-2.0
// Brute-force reference implementations and random input generators shared by
// the unit and acceptance suites. Written from the formulas, not from the
// library code.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "laser/rng.hpp"
#include "laser/types.hpp"

namespace oracle {

using laser::AttentionTrace;
using laser::Rng;

inline double contrastive(double with, double without) { return with > without ? with - without : 0.0; }

// Kahan-summed squares in long double.
inline double l2(const std::vector<double>& v) {
    long double sum = 0.0L;
    long double carry = 0.0L;
    for (double x : v) {
        const long double y = static_cast<long double>(x) * x - carry;
        const long double t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    return static_cast<double>(std::sqrt(sum));
}

inline std::vector<double> head_map(const AttentionTrace& t, int l, int h) {
    std::vector<double> out(t.patches);
    for (int p = 0; p < t.patches; ++p) {
        const std::size_t i = (static_cast<std::size_t>(l) * t.heads + h) * t.patches + p;
        out[p] = contrastive(t.with_query[i], t.without_query[i]);
    }
    return out;
}

// Indices of the k largest scores; full sort, ties by lower index.
inline std::vector<int> top_k(const std::vector<double>& scores, int k) {
    std::vector<std::pair<double, int>> order;
    for (int i = 0; i < static_cast<int>(scores.size()); ++i) order.push_back({-scores[i], i});
    std::sort(order.begin(), order.end());
    std::vector<int> out;
    for (int i = 0; i < std::min<int>(k, static_cast<int>(order.size())); ++i) out.push_back(order[i].second);
    return out;
}

struct Profile {
    std::vector<double> layer;
    std::vector<std::vector<int>> heads;  // [layer] top heads
    int selected = 0;
};

inline Profile layer_vaq(const AttentionTrace& t, int k) {
    Profile out;
    for (int l = 0; l < t.layers; ++l) {
        std::vector<double> scores;
        for (int h = 0; h < t.heads; ++h) scores.push_back(l2(head_map(t, l, h)));
        const auto top = top_k(scores, k);
        double sum = 0.0;
        for (int h : top) sum += scores[h];
        out.layer.push_back(sum / k);
        out.heads.push_back(top);
    }
    for (int l = 1; l < t.layers; ++l) {
        if (out.layer[l] > out.layer[out.selected]) out.selected = l;
    }
    return out;
}

inline std::vector<double> aggregate(const AttentionTrace& t, int layer, const std::vector<int>& heads) {
    std::vector<double> out(t.patches, 0.0);
    for (int p = 0; p < t.patches; ++p) {
        for (int h : heads) out[p] += head_map(t, layer, h)[p];
        out[p] /= static_cast<double>(heads.size());
    }
    return out;
}

inline std::vector<double> vat(const std::vector<double>& zp, const std::vector<double>& zm) {
    std::vector<double> out;
    for (std::size_t i = 0; i < zp.size(); ++i) out.push_back(zp[i] - zm[i]);
    return out;
}

inline std::vector<double> combine(const std::vector<double>& zp, const std::vector<double>& zm, double alpha) {
    std::vector<double> out;
    for (std::size_t i = 0; i < zp.size(); ++i) out.push_back((1.0 + alpha) * zp[i] - alpha * zm[i]);
    return out;
}

// Relative error with an absolute floor for values near zero.
inline bool close(double a, double b, double rel = 1e-6, double floor = 1e-12) {
    return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), floor});
}

// ---- generators ----

// Random attention trace: each row is a softmax slice, optionally sparse so
// that ReLU clipping and exact ties both occur.
inline AttentionTrace random_trace(Rng& rng, int L, int H, int rows, int cols, int width, int height) {
    AttentionTrace t;
    t.layers = L;
    t.heads = H;
    t.grid = {rows, cols, width, height};
    t.patches = rows * cols;
    const auto P = static_cast<std::uint32_t>(t.patches);
    t.layout.system = {0, 3};
    t.layout.visual = {3, 3 + P};
    t.layout.query = {3 + P, 3 + P + 5};
    t.layout.answer_prefix = {3 + P + 5, 3 + P + 7};
    t.source_id = "random";
    const std::size_t n = static_cast<std::size_t>(L) * H * t.patches;
    t.with_query.resize(n);
    t.without_query.resize(n);
    for (int r = 0; r < L * H; ++r) {
        const double mass_w = rng.uniform(0.05, 1.0);
        const double mass_n = rng.uniform(0.05, 1.0);
        std::vector<double> w(t.patches), wo(t.patches);
        for (int p = 0; p < t.patches; ++p) {
            w[p] = rng.uniform() < 0.2 ? 0.0 : std::exp(2.0 * rng.normal());
            wo[p] = rng.uniform() < 0.1 ? w[p] : std::exp(2.0 * rng.normal());
        }
        const double sw = std::accumulate(w.begin(), w.end(), 0.0) + 1e-300;
        const double sn = std::accumulate(wo.begin(), wo.end(), 0.0) + 1e-300;
        for (int p = 0; p < t.patches; ++p) {
            t.with_query[static_cast<std::size_t>(r) * t.patches + p] = static_cast<float>(mass_w * w[p] / sw);
            t.without_query[static_cast<std::size_t>(r) * t.patches + p] = static_cast<float>(mass_n * wo[p] / sn);
        }
    }
    return t;
}

inline AttentionTrace random_trace(Rng& rng) {
    const int L = 1 + rng.below(12);
    const int H = 1 + rng.below(8);
    const int rows = 1 + rng.below(10);
    const int cols = 1 + rng.below(10);
    const int width = cols + rng.below(400);
    const int height = rows + rng.below(400);
    return random_trace(rng, L, H, rows, cols, width, height);
}

inline std::vector<double> random_logits(Rng& rng, int n) {
    std::vector<double> out(n);
    for (auto& v : out) v = 10.0 * rng.normal();
    return out;
}

// Map with a few repeated values to exercise tie-breaking.
inline std::vector<double> random_map(Rng& rng, int n) {
    std::vector<double> out(n);
    for (auto& v : out) v = rng.uniform() < 0.3 ? static_cast<double>(rng.below(4)) / 4.0 : rng.uniform();
    return out;
}

}  // namespace oracle
