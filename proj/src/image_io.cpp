// SPDX-License-Identifier: Apache-2.0
#include "laser/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cctype>
#include <fstream>
#include <string>

#include <fmt/format.h>

#include "laser/errors.hpp"

namespace laser {
namespace {

ImageBuffer read_png(const std::filesystem::path& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        throw FormatError(fmt::format("'{}': {}", path.string(), png.message));
    }
    png.format = PNG_FORMAT_RGB;
    ImageBuffer img(static_cast<int>(png.width), static_cast<int>(png.height));
    if (!png_image_finish_read(&png, nullptr, img.data.data(), 0, nullptr)) {
        png_image_free(&png);
        throw FormatError(fmt::format("'{}': {}", path.string(), png.message));
    }
    return img;
}

// Next whitespace-separated header token, skipping '#' comments.
std::string ppm_token(std::istream& in) {
    std::string tok;
    while (in) {
        const int c = in.get();
        if (c == EOF) break;
        if (c == '#') {
            std::string skip;
            std::getline(in, skip);
            if (!tok.empty()) break;
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

ImageBuffer read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    const auto magic = ppm_token(in);
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(ppm_token(in));
        h = std::stoi(ppm_token(in));
        maxval = std::stoi(ppm_token(in));
    } catch (const std::exception&) {
        throw FormatError(fmt::format("'{}': malformed PPM header", path.string()));
    }
    if ((magic != "P6" && magic != "P5") || w <= 0 || h <= 0 || maxval != 255) {
        throw FormatError(fmt::format("'{}': only 8-bit binary P5/P6 is supported", path.string()));
    }
    const int channels = magic == "P6" ? 3 : 1;
    std::vector<char> raw(static_cast<std::size_t>(w) * h * channels);
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw FormatError(fmt::format("'{}': pixel data truncated", path.string()));
    }
    ImageBuffer img(w, h);
    for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
        for (int c = 0; c < 3; ++c) {
            img.data[i * 3 + c] = static_cast<std::uint8_t>(raw[i * channels + (channels == 3 ? c : 0)]);
        }
    }
    return img;
}

}  // namespace

ImageBuffer read_image(const std::filesystem::path& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError(fmt::format("cannot open '{}'", path.string()));
    unsigned char head[8] = {};
    probe.read(reinterpret_cast<char*>(head), 8);
    if (probe.gcount() == 8 && png_sig_cmp(head, 0, 8) == 0) return read_png(path);
    if (probe.gcount() >= 2 && head[0] == 'P' && (head[1] == '6' || head[1] == '5')) return read_ppm(path);
    throw FormatError(fmt::format("'{}' is neither PNG nor binary PPM", path.string()));
}

void write_png(const ImageBuffer& image, const std::filesystem::path& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, path.c_str(), 0, image.data.data(), 0, nullptr)) {
        throw IoError(fmt::format("cannot write '{}': {}", path.string(), png.message));
    }
}

void write_ppm(const ImageBuffer& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot open '{}'", path.string()));
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.data.data()), static_cast<std::streamsize>(image.data.size()));
    if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

void write_image(const ImageBuffer& image, const std::filesystem::path& path) {
    if (path.extension() == ".ppm") {
        write_ppm(image, path);
    } else {
        write_png(image, path);
    }
}

ImageBuffer render_heatmap(const PatchMap& map, const ImageBuffer& image, const std::optional<CropBox>& box) {
    const auto& g = map.grid;
    if (g.image_width != image.width || g.image_height != image.height) {
        throw GeometryError(fmt::format("map grid covers {}x{} but the image is {}x{}", g.image_width, g.image_height,
                                        image.width, image.height));
    }
    if (map.values.size() != static_cast<std::size_t>(g.patch_count())) {
        throw ShapeError(fmt::format("map has {} values for a {}-patch grid", map.values.size(), g.patch_count()));
    }
    const double peak = map.values.empty() ? 0.0 : *std::max_element(map.values.begin(), map.values.end());
    ImageBuffer out = image;
    if (peak > 0.0) {
        auto value = [&](int r, int c) { return map.values[static_cast<std::size_t>(r) * g.cols + c] / peak; };
        for (int y = 0; y < image.height; ++y) {
            const double gy = std::clamp((y + 0.5) * g.rows / image.height - 0.5, 0.0, g.rows - 1.0);
            const int r0 = static_cast<int>(gy);
            const int r1 = std::min(r0 + 1, g.rows - 1);
            const double fy = gy - r0;
            for (int x = 0; x < image.width; ++x) {
                const double gx = std::clamp((x + 0.5) * g.cols / image.width - 0.5, 0.0, g.cols - 1.0);
                const int c0 = static_cast<int>(gx);
                const int c1 = std::min(c0 + 1, g.cols - 1);
                const double fx = gx - c0;
                const double v = (1 - fy) * ((1 - fx) * value(r0, c0) + fx * value(r0, c1)) +
                                 fy * ((1 - fx) * value(r1, c0) + fx * value(r1, c1));
                const double a = kHeatmapMaxAlpha * v;
                const double heat[3] = {std::clamp(3 * v, 0.0, 1.0), std::clamp(3 * v - 1, 0.0, 1.0),
                                        std::clamp(3 * v - 2, 0.0, 1.0)};
                const auto o = out.offset(x, y);
                for (int c = 0; c < 3; ++c) {
                    const double blended = (1 - a) * image.data[o + c] + a * 255.0 * heat[c];
                    out.data[o + c] = static_cast<std::uint8_t>(std::lround(std::clamp(blended, 0.0, 255.0)));
                }
            }
        }
    }
    if (box) {
        constexpr int kStroke = 2;
        const Rgb green{0, 255, 0};
        for (int y = std::max(box->y0, 0); y < std::min(box->y1, image.height); ++y) {
            for (int x = std::max(box->x0, 0); x < std::min(box->x1, image.width); ++x) {
                const bool edge = x < box->x0 + kStroke || x >= box->x1 - kStroke || y < box->y0 + kStroke ||
                                  y >= box->y1 - kStroke;
                if (edge) out.set_pixel(x, y, green);
            }
        }
    }
    return out;
}

}  // namespace laser
