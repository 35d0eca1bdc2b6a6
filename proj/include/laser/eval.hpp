// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "laser/localization.hpp"
#include "laser/types.hpp"

namespace laser {

// Pixel box around the referenced object.
struct GroundTruthBox {
    PixelRect rect;

    // Throws GeometryError when empty or outside the image.
    void validate(int image_width, int image_height) const;
};

// Share of map mass on patches whose rect center lies inside the box.
// Throws MetricError when the map sums to zero.
double attention_aggregation(const PatchMap& map, const GroundTruthBox& box);

struct SyntheticTraceSpec {
    int layers = 32;
    int heads = 8;
    GridGeometry grid{24, 24, 336, 336};
    int signal_layer = 14;
    std::vector<int> signal_patches;
    std::vector<int> signal_heads;  // empty: every head of the signal layer
    double signal_strength = 10.0;
    std::vector<int> sink_patches;
    double sink_strength = 0.0;
    double noise_scale = 1.0;
    double visual_mass = 0.5;  // each normalized row sums to this
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticTruth {
    int signal_layer = 0;
    std::vector<int> signal_patches;
    std::vector<int> signal_heads;
    std::vector<int> sink_patches;
    GroundTruthBox box;  // bounding box of the signal patches
};

struct SyntheticTrace {
    AttentionTrace trace;
    SyntheticTruth truth;
};

// Per (layer, head): a shared base profile plus independent half-normal
// jitter of noise_scale in each condition, sink_strength on sink patches in
// both, and signal_strength on signal patches in the with-query condition at
// the signal layer. Each row is then scaled to visual_mass.
SyntheticTrace gen_synthetic_trace(const SyntheticTraceSpec& spec);

// Square block of side `side` patches with top-left cell (row, col).
std::vector<int> patch_block(const GridGeometry& grid, int row, int col, int side);

// Adds the same sink attention to both conditions after normalization:
// strengths[l * H + h] on every listed patch. Throws ValidationError when a
// row would exceed the slack.
void add_attention_sinks(AttentionTrace& trace, std::span<const int> patches, std::span<const double> strengths);

// ---- benchmark ----

inline constexpr const char* kMethodRawFixed = "raw-fixed-layer";
inline constexpr const char* kMethodContrastiveFixed = "contrastive-fixed-layer";
inline constexpr const char* kMethodContrastiveVaq = "contrastive-VAQ";
inline constexpr const char* kMethodLaserVat = "LASER+VAT";
std::vector<std::string> bench_methods();
std::vector<std::string> bench_scenarios();

struct BenchConfig {
    std::string scenario = "synthetic-trace";
    int instances = 100;
    std::uint64_t seed = 0;
    PipelineConfig pipeline;
    std::optional<int> fixed_layer;  // synthetic: 14, toy: L / 2
    double snr = 10.0;               // synthetic scenarios
    double sink_ratio = 3.0;         // sink-dominant: sink_strength / signal_strength
    int max_new_tokens = 4;          // toy decode cap

    void validate() const;
};

struct MethodRecord {
    std::string method;
    int layer = 0;
    double aggregation = 0.0;
    std::vector<int> tokens;            // decoded answer, toy LASER+VAT only
    std::optional<bool> answer_correct;  // first token against the scripted oracle
};

struct BenchRecord {
    int instance = 0;
    std::uint64_t seed = 0;
    int planted_layer = 0;
    int selected_layer = 0;
    std::vector<MethodRecord> methods;
};

struct MethodAggregate {
    std::string method;
    int count = 0;
    double mean = 0.0;
    double std_error = 0.0;
    std::optional<double> accuracy;
    std::optional<double> accuracy_std_error;
};

// Wall-clock per instance and method, kept out of the report so that reports
// stay byte-identical across runs.
struct BenchTiming {
    int instance = 0;
    std::string method;
    double ms = 0.0;
};

struct BenchReport {
    BenchConfig config;
    std::vector<BenchRecord> records;
    std::vector<MethodAggregate> aggregates;
    std::vector<BenchTiming> timings;
    double layer_hit_rate = 0.0;  // selected layer == planted layer
};

// Scenarios: synthetic-trace, sink-dominant, toy-end-to-end.
BenchReport run_benchmark(const BenchConfig& config);

// Mean and sample standard error (n - 1 denominator; 0 for n < 2).
std::pair<double, double> mean_and_std_error(std::span<const double> values);
std::vector<MethodAggregate> aggregate_records(std::span<const BenchRecord> records);

nlohmann::json report_to_json(const BenchReport& report);
nlohmann::json timings_to_json(const BenchReport& report);
nlohmann::json config_to_json(const PipelineConfig& config);
std::string report_table(const BenchReport& report);

}  // namespace laser
