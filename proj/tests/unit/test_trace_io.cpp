// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <sstream>

#include "laser/errors.hpp"
#include "laser/toy_vlm.hpp"
#include "laser/trace_io.hpp"
#include "oracles.hpp"

using namespace laser;

namespace {

std::uint32_t u32_at(const std::vector<std::uint8_t>& b, std::size_t off) {
    return static_cast<std::uint32_t>(b[off]) | static_cast<std::uint32_t>(b[off + 1]) << 8 |
           static_cast<std::uint32_t>(b[off + 2]) << 16 | static_cast<std::uint32_t>(b[off + 3]) << 24;
}

std::string error_text(const std::vector<std::uint8_t>& bytes) {
    try {
        decode_trace(bytes);
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("size formula for a 4x2x16 trace") {
    Rng rng(5);
    auto t = oracle::random_trace(rng, 4, 2, 4, 4, 32, 32);
    t.source_id = "abc";
    const auto bytes = encode_trace(t);
    CHECK(kTraceHeaderBytes == 70);
    CHECK(bytes.size() == 70 + 3 + 1024);
    CHECK(encoded_trace_size(t) == bytes.size());
}

TEST_CASE("byte layout is little-endian and field ordered") {
    Rng rng(6);
    auto t = oracle::random_trace(rng, 2, 3, 2, 5, 50, 20);
    t.source_id = "id";
    const auto b = encode_trace(t);
    CHECK(std::memcmp(b.data(), "LASR", 4) == 0);
    CHECK(b[4] == 1);
    CHECK(b[5] == 0);
    CHECK(u32_at(b, 6) == 2);
    CHECK(u32_at(b, 10) == 3);
    CHECK(u32_at(b, 14) == 10);
    CHECK(u32_at(b, 18) == 2);
    CHECK(u32_at(b, 22) == 5);
    CHECK(u32_at(b, 26) == 50);
    CHECK(u32_at(b, 30) == 20);
    CHECK(u32_at(b, 34) == t.layout.system.start);
    CHECK(u32_at(b, 42) == t.layout.visual.start);
    CHECK(u32_at(b, 62) == t.layout.answer_prefix.end);
    CHECK(u32_at(b, 66) == 2);
    CHECK(b[70] == 'i');
    // First payload float and first float of the second tensor.
    float f = 0;
    std::memcpy(&f, b.data() + 72, 4);
    CHECK(f == t.with_query[0]);
    std::memcpy(&f, b.data() + 72 + 4 * t.element_count(), 4);
    CHECK(f == t.without_query[0]);
}

TEST_CASE("round trip is bit exact for random traces") {
    Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        auto t = oracle::random_trace(rng);
        t.source_id = "trace #" + std::to_string(i) + " \xc3\xa9";
        std::stringstream ss;
        write_trace(t, ss);
        const auto back = read_trace(ss);
        REQUIRE(bit_equal(t, back));
        REQUIRE(encode_trace(back) == encode_trace(t));
    }
}

TEST_CASE("invalid trace is rejected before writing") {
    Rng rng(8);
    auto t = oracle::random_trace(rng, 2, 2, 2, 2, 8, 8);
    t.grid = {2, 3, 8, 8};
    std::stringstream ss;
    CHECK_THROWS_AS(write_trace(t, ss), ValidationError);
    CHECK(ss.str().empty());
}

TEST_CASE("decode errors") {
    Rng rng(9);
    const auto t = oracle::random_trace(rng, 2, 2, 3, 3, 9, 9);
    auto bytes = encode_trace(t);

    SUBCASE("bad magic") {
        std::memcpy(bytes.data(), "XXXX", 4);
        CHECK_THROWS_AS(decode_trace(bytes), FormatError);
    }
    SUBCASE("bad version") {
        bytes[4] = 2;
        CHECK_THROWS_AS(decode_trace(bytes), FormatError);
    }
    SUBCASE("truncated payload reports both sizes") {
        const std::size_t full = bytes.size();
        bytes.resize(full - 10);
        CHECK_THROWS_AS(decode_trace(bytes), SizeError);
        const auto msg = error_text(bytes);
        CHECK(msg.find(std::to_string(full)) != std::string::npos);
        CHECK(msg.find(std::to_string(full - 10)) != std::string::npos);
    }
    SUBCASE("truncated header") {
        bytes.resize(20);
        CHECK_THROWS_AS(decode_trace(bytes), SizeError);
    }
    SUBCASE("trailing bytes") {
        bytes.push_back(0);
        CHECK_THROWS_AS(decode_trace(bytes), SizeError);
    }
    SUBCASE("negative weight names layer and head") {
        const float neg = -1.0f;
        // with_query row (1, 0), patch 4
        const std::size_t off = kTraceHeaderBytes + t.source_id.size() + 4 * (t.row_offset(1, 0) + 4);
        std::memcpy(bytes.data() + off, &neg, 4);
        CHECK_THROWS_AS(decode_trace(bytes), ValidationError);
        const auto msg = error_text(bytes);
        CHECK(msg.find("layer 1, head 0") != std::string::npos);
    }
}

TEST_CASE("toy model dump reads back with the toy shape") {
    ToyVlmConfig c;
    c.layers = 3;
    c.heads = 2;
    c.model_dim = 16;
    c.ffn_dim = 32;
    c.seed = 4;
    const ToyVlm model(c);
    ImageBuffer img(32, 24, {90, 120, 30});
    const auto trace = model.make_paired_trace(img, vocab::encode_text("WHAT?"));
    const auto path = std::filesystem::temp_directory_path() / "laser_test_toy.lsr";
    write_trace_file(trace, path);
    const auto back = read_trace_file(path);
    std::filesystem::remove(path);
    CHECK(back.layers == 3);
    CHECK(back.heads == 2);
    CHECK(back.patches == 12);
    CHECK(back.grid.rows == 3);
    CHECK(back.grid.cols == 4);
    CHECK(bit_equal(back, trace));
}

TEST_CASE("missing file error names the path") {
    try {
        read_trace_file("/nonexistent/dir/trace.lsr");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("/nonexistent/dir/trace.lsr") != std::string::npos);
    }
}
