#pragma once

// Portable float map: "Pf" (1 channel) or "PF" (3 channels), f32 samples,
// rows stored bottom to top. Written little-endian (negative scale).

#include "panogs/core/image.hpp"
#include "panogs/io/binary.hpp"

#include <bit>
#include <cmath>
#include <sstream>

namespace panogs::io {

inline void write_pfm(const std::string& path, const Image& img) {
    require(img.channels() == 1 || img.channels() == 3, "write_pfm: image must have 1 or 3 channels");
    require(!img.empty(), "write_pfm: empty image");
    std::string out = (img.channels() == 1 ? "Pf\n" : "PF\n") + std::to_string(img.width()) + " " +
                      std::to_string(img.height()) + "\n-1.0\n";
    out.reserve(out.size() + img.size() * 4);
    for (int y = img.height() - 1; y >= 0; --y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < img.channels(); ++c) put_le(out, static_cast<float>(img.at(x, y, c)));
    write_file(path, out);
}

inline Image read_pfm(const std::string& path) {
    const std::vector<char> bytes = read_file(path);
    // The header is three whitespace-separated tokens followed by one whitespace byte.
    std::size_t pos = 0;
    auto token = [&] {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        return std::string(bytes.data() + start, pos - start);
    };
    const std::string magic = token();
    if (magic != "Pf" && magic != "PF") throw IoError(path + ": not a PFM file");
    int w = 0, h = 0;
    double scale = 0.0;
    try {
        w = std::stoi(token());
        h = std::stoi(token());
        scale = std::stod(token());
    } catch (const std::exception&) {
        throw IoError(path + ": malformed PFM header");
    }
    if (w <= 0 || h <= 0 || scale == 0.0 || pos >= bytes.size()) throw IoError(path + ": malformed PFM header");
    ++pos;
    const int c = magic == "PF" ? 3 : 1;
    const std::size_t n = static_cast<std::size_t>(w) * h * c;
    if (bytes.size() - pos != n * 4) throw IoError(path + ": PFM payload length does not match its header");
    const bool little = scale < 0.0;
    Image img(w, h, c);
    const char* p = bytes.data() + pos;
    for (int y = h - 1; y >= 0; --y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < c; ++k, p += 4) {
                char b[4];
                std::memcpy(b, p, 4);
                if (little != (std::endian::native == std::endian::little)) {
                    std::swap(b[0], b[3]);
                    std::swap(b[1], b[2]);
                }
                float v;
                std::memcpy(&v, b, 4);
                img.at(x, y, k) = v;
            }
    return img;
}

} // namespace panogs::io
