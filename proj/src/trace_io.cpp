// SPDX-License-Identifier: Apache-2.0
#include "laser/trace_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include <fmt/format.h>

#include "laser/errors.hpp"

namespace laser {
namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

class ByteWriter {
public:
    explicit ByteWriter(std::size_t reserve) { buf_.reserve(reserve); }

    void u16(std::uint16_t v) {
        buf_.push_back(static_cast<std::uint8_t>(v));
        buf_.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }

    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t remaining() const { return bytes_.size() - pos_; }

    void need(std::size_t n, const char* what) const {
        if (remaining() < n) {
            throw SizeError(fmt::format("truncated trace while reading {}: expected {} more bytes, have {}", what, n,
                                        remaining()));
        }
    }
    std::uint16_t u16() {
        std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::span<const std::uint8_t> take(std::size_t n) {
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::uint32_t to_u32(int v, const char* what) {
    if (v < 0) throw ValidationError(fmt::format("{} is negative ({})", what, v));
    return static_cast<std::uint32_t>(v);
}

int to_int(std::uint32_t v, const char* what) {
    if (v > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
        throw FormatError(fmt::format("{} value {} is out of range", what, v));
    }
    return static_cast<int>(v);
}

}  // namespace

std::size_t encoded_trace_size(const AttentionTrace& trace) {
    return kTraceHeaderBytes + trace.source_id.size() + 2 * trace.element_count() * sizeof(float);
}

std::vector<std::uint8_t> encode_trace(const AttentionTrace& trace) {
    trace.validate();
    ByteWriter w(encoded_trace_size(trace));
    w.bytes(kTraceMagic, 4);
    w.u16(kTraceVersion);
    w.u32(to_u32(trace.layers, "L"));
    w.u32(to_u32(trace.heads, "H"));
    w.u32(to_u32(trace.patches, "P"));
    w.u32(to_u32(trace.grid.rows, "m"));
    w.u32(to_u32(trace.grid.cols, "n"));
    w.u32(to_u32(trace.grid.image_width, "image_width"));
    w.u32(to_u32(trace.grid.image_height, "image_height"));
    for (const TokenSpan& s : {trace.layout.system, trace.layout.visual, trace.layout.query, trace.layout.answer_prefix}) {
        w.u32(s.start);
        w.u32(s.end);
    }
    if (trace.source_id.size() > std::numeric_limits<std::uint32_t>::max()) {
        throw ValidationError("source_id too long");
    }
    w.u32(static_cast<std::uint32_t>(trace.source_id.size()));
    w.bytes(trace.source_id.data(), trace.source_id.size());
    for (float v : trace.with_query) w.f32(v);
    for (float v : trace.without_query) w.f32(v);
    return w.take();
}

AttentionTrace decode_trace(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.need(6, "magic and version");
    auto magic = r.take(4);
    if (std::memcmp(magic.data(), kTraceMagic, 4) != 0) {
        throw FormatError(fmt::format("bad magic '{}', expected 'LASR'",
                                      std::string(reinterpret_cast<const char*>(magic.data()), 4)));
    }
    const auto version = r.u16();
    if (version != kTraceVersion) {
        throw FormatError(fmt::format("unsupported trace version {} (expected {})", version, kTraceVersion));
    }
    r.need(kTraceHeaderBytes - 6, "header");
    AttentionTrace t;
    t.layers = to_int(r.u32(), "L");
    t.heads = to_int(r.u32(), "H");
    t.patches = to_int(r.u32(), "P");
    t.grid.rows = to_int(r.u32(), "m");
    t.grid.cols = to_int(r.u32(), "n");
    t.grid.image_width = to_int(r.u32(), "image_width");
    t.grid.image_height = to_int(r.u32(), "image_height");
    for (TokenSpan* s : {&t.layout.system, &t.layout.visual, &t.layout.query, &t.layout.answer_prefix}) {
        s->start = r.u32();
        s->end = r.u32();
    }
    const std::uint32_t id_len = r.u32();
    r.need(id_len, "source_id");
    auto id = r.take(id_len);
    t.source_id.assign(reinterpret_cast<const char*>(id.data()), id.size());

    const std::size_t count = static_cast<std::size_t>(t.layers) * t.heads * t.patches;
    const std::size_t payload = 2 * count * sizeof(float);
    if (r.remaining() != payload) {
        throw SizeError(fmt::format("trace payload is {} bytes, expected {} (file {} bytes, expected {})", r.remaining(),
                                    payload, bytes.size(), kTraceHeaderBytes + id_len + payload));
    }
    t.with_query.resize(count);
    t.without_query.resize(count);
    for (auto& v : t.with_query) v = r.f32();
    for (auto& v : t.without_query) v = r.f32();
    t.validate();
    return t;
}

void write_trace(const AttentionTrace& trace, std::ostream& out) {
    const auto bytes = encode_trace(trace);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing trace bytes");
}

AttentionTrace read_trace(std::istream& in) {
    std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (in.bad()) throw IoError("failed reading trace bytes");
    return decode_trace(bytes);
}

void write_trace_file(const AttentionTrace& trace, const std::filesystem::path& path) {
    const auto bytes = encode_trace(trace);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) throw IoError(fmt::format("failed writing {}", path.string()));
}

AttentionTrace read_trace_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open trace file {}", path.string()));
    try {
        return read_trace(in);
    } catch (const IoError& e) {
        throw IoError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

}  // namespace laser
