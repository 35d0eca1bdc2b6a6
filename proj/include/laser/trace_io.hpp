// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "laser/types.hpp"

namespace laser {

// On-disk trace container, all integers and floats little-endian:
//
//   "LASR"                         4 bytes
//   version                        u16 (= 1)
//   L, H, P, m, n, width, height   7 x u32
//   system, visual, query, answer  4 x (start u32, end u32)
//   source_id                      u32 byte length + UTF-8 bytes
//   with_query                     L*H*P float32, layer/head/patch order
//   without_query                  L*H*P float32
inline constexpr char kTraceMagic[4] = {'L', 'A', 'S', 'R'};
inline constexpr std::uint16_t kTraceVersion = 1;
inline constexpr std::size_t kTraceHeaderBytes = 4 + 2 + 7 * 4 + 8 * 4 + 4;

std::size_t encoded_trace_size(const AttentionTrace& trace);

// Validates the trace, then serializes it.
std::vector<std::uint8_t> encode_trace(const AttentionTrace& trace);
AttentionTrace decode_trace(std::span<const std::uint8_t> bytes);

void write_trace(const AttentionTrace& trace, std::ostream& out);
AttentionTrace read_trace(std::istream& in);

void write_trace_file(const AttentionTrace& trace, const std::filesystem::path& path);
AttentionTrace read_trace_file(const std::filesystem::path& path);

}  // namespace laser
