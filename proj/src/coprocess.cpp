// SPDX-License-Identifier: Apache-2.0
#include "laser/coprocess.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "laser/decoding.hpp"
#include "laser/errors.hpp"

namespace laser {
namespace {

using nlohmann::json;

json config_json(const PipelineConfig& c) {
    json j;
    j["k_head"] = c.k_head ? json(*c.k_head) : json(nullptr);
    j["k_patch"] = c.k_patch ? json(*c.k_patch) : json(nullptr);
    j["alpha"] = c.alpha;
    j["decode"] = to_string(c.decode_mode);
    j["temperature"] = c.temperature;
    j["seed"] = c.seed;
    j["vat"] = c.vat_enabled;
    return j;
}

std::vector<double> read_logits(const json& msg, const char* key) {
    if (!msg.contains(key)) throw ProtocolError(fmt::format("missing field '{}'", key));
    const auto& arr = msg.at(key);
    if (!arr.is_array()) throw ProtocolError(fmt::format("field '{}' must be an array", key));
    std::vector<double> out;
    out.reserve(arr.size());
    for (const auto& v : arr) {
        if (!v.is_number()) throw ProtocolError(fmt::format("field '{}' holds a non-number", key));
        out.push_back(v.get<double>());
    }
    return out;
}

void emit_error(std::ostream& out, const std::string& message, int step = -1) {
    json j;
    j["type"] = "error";
    if (step >= 0) j["step"] = step;
    j["message"] = message;
    out << j.dump() << '\n';
    out.flush();
}

}  // namespace

std::string format_float32(double value) {
    const float f = static_cast<float>(value);
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), f);
    if (ec != std::errc()) throw ProtocolError("float formatting failed");
    return std::string(buf, end);
}

CoprocessSummary run_scoring_coprocess(std::istream& in, std::ostream& out, const PipelineConfig& config) {
    config.validate();
    CoprocessSummary summary;
    Rng sampler(config.seed);
    const double alpha = config.vat_enabled ? config.alpha : 0.0;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;

        json msg;
        try {
            msg = json::parse(line);
        } catch (const json::parse_error& e) {
            ++summary.errors;
            emit_error(out, fmt::format("malformed JSON: {}", e.what()));
            continue;
        }
        if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
            ++summary.errors;
            emit_error(out, "message must be an object with a string 'type'");
            continue;
        }
        const auto type = msg["type"].get<std::string>();
        if (type == "hello") {
            json j;
            j["type"] = "hello";
            j["protocol"] = kProtocolVersion;
            j["config"] = config_json(config);
            out << j.dump() << '\n';
            out.flush();
        } else if (type == "step") {
            const int step = summary.steps++;
            try {
                LogitsPair pair;
                pair.step = step;
                pair.z_plus = read_logits(msg, "z_plus");
                pair.z_minus = read_logits(msg, "z_minus");
                if (pair.z_plus.empty()) throw ProtocolError("logit arrays are empty");
                ScoredLogits scored = combine_scores(pair, alpha);
                std::string s_text;
                for (std::size_t i = 0; i < scored.s.size(); ++i) {
                    if (!std::isfinite(static_cast<float>(scored.s[i]))) {
                        throw ProtocolError(fmt::format("combined score at index {} overflows float32", i));
                    }
                    if (i) s_text += ',';
                    s_text += format_float32(scored.s[i]);
                }
                const int token = select_token(scored, config.decode_mode, config.temperature, sampler);
                out << fmt::format(R"({{"type":"step","step":{},"token_id":{},"s":[{}]}})", step, token, s_text)
                    << '\n';
                out.flush();
            } catch (const Error& e) {
                ++summary.errors;
                emit_error(out, e.what(), step);
            }
        } else if (type == "end") {
            json j;
            j["type"] = "end";
            j["steps"] = summary.steps;
            out << j.dump() << '\n';
            out.flush();
            summary.ended = true;
            return summary;
        } else {
            ++summary.errors;
            emit_error(out, fmt::format("unknown message type '{}'", type));
        }
    }
    return summary;
}

}  // namespace laser
