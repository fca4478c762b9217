#pragma once

#include "panogs/core/error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace panogs::io {

inline std::vector<char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

/// Appends `v` little-endian.
template <typename T>
void put_le(std::string& out, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    out.append(b, sizeof(T));
}

/// Sequential little-endian reader over a byte buffer.
class Reader {
public:
    Reader(const std::vector<char>& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    template <typename T>
    T get() {
        if (bytes_.size() - pos_ < sizeof(T)) throw IoError(what_ + ": unexpected end of file");
        char b[sizeof(T)];
        std::memcpy(b, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big)
            for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, b, sizeof(T));
        return v;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    const std::vector<char>& bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

} // namespace panogs::io
