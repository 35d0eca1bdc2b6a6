// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>

#include "laser/types.hpp"

namespace laser {

inline constexpr int kProtocolVersion = 1;

// Scoring loop for external model harnesses, one JSON object per line:
//
//   -> {"type":"hello"}
//   <- {"type":"hello","protocol":1,"config":{...}}
//   -> {"type":"step","z_plus":[...],"z_minus":[...]}
//   <- {"type":"step","step":0,"token_id":k,"s":[...]}
//   -> {"type":"end"}
//   <- {"type":"end","steps":n}
//
// A bad line yields {"type":"error",...} and the loop keeps going. Floats go
// out in shortest float32 round-trip form.
struct CoprocessSummary {
    int steps = 0;   // step requests seen, including rejected ones
    int errors = 0;
    bool ended = false;  // saw "end" before end of input
};

CoprocessSummary run_scoring_coprocess(std::istream& in, std::ostream& out, const PipelineConfig& config);

// Shortest decimal that parses back to the same float32.
std::string format_float32(double value);

}  // namespace laser
