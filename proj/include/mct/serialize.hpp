#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "mct/common.hpp"

namespace mct {

// Little-endian byte packing, explicit so files are identical on any host.

struct ByteWriter {
    std::vector<uint8_t> buf;

    void u8(uint8_t v) { buf.push_back(v); }

    void u32(uint32_t v) {
        buf.push_back(static_cast<uint8_t>(v));
        buf.push_back(static_cast<uint8_t>(v >> 8));
        buf.push_back(static_cast<uint8_t>(v >> 16));
        buf.push_back(static_cast<uint8_t>(v >> 24));
    }

    void u64(uint64_t v) {
        u32(static_cast<uint32_t>(v));
        u32(static_cast<uint32_t>(v >> 32));
    }

    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }

    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }

    void magic(const char m[4]) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>(m[i]));
    }
};

class ByteReader {
public:
    ByteReader(std::vector<uint8_t> data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}

    uint8_t u8() {
        need(1);
        return data_[pos_++];
    }

    uint32_t u32() {
        need(4);
        uint32_t v = uint32_t(data_[pos_]) | (uint32_t(data_[pos_ + 1]) << 8) | (uint32_t(data_[pos_ + 2]) << 16) |
                     (uint32_t(data_[pos_ + 3]) << 24);
        pos_ += 4;
        return v;
    }

    uint64_t u64() {
        uint64_t lo = u32();
        uint64_t hi = u32();
        return lo | (hi << 32);
    }

    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    double f64() {
        uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    void expect_magic(const char m[4]) {
        need(4);
        if (std::memcmp(data_.data() + pos_, m, 4) != 0)
            throw FormatError(strfmt("%s: bad magic, want \"%.4s\"", name_.c_str(), m));
        pos_ += 4;
    }

    void expect_end() const {
        if (pos_ != data_.size())
            throw FormatError(strfmt("%s: %zu trailing bytes", name_.c_str(), data_.size() - pos_));
    }

    size_t remaining() const { return data_.size() - pos_; }

private:
    void need(size_t n) const {
        if (pos_ + n > data_.size())
            throw FormatError(strfmt("%s: truncated at offset %zu, expected %zu more bytes, file has %zu",
                                     name_.c_str(), pos_, n, data_.size()));
    }

    std::vector<uint8_t> data_;
    std::string name_;
    size_t pos_ = 0;
};

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw FormatError(strfmt("cannot open %s for writing", path.c_str()));
    const size_t wrote = bytes.empty() ? 0 : std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (wrote != bytes.size()) throw FormatError(strfmt("short write on %s", path.c_str()));
}

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw FormatError(strfmt("cannot open %s", path.c_str()));
    std::fseek(f, 0, SEEK_END);
    long n = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<uint8_t> buf(static_cast<size_t>(n));
    const size_t got = buf.empty() ? 0 : std::fread(buf.data(), 1, buf.size(), f);
    std::fclose(f);
    if (got != buf.size()) throw FormatError(strfmt("short read on %s", path.c_str()));
    return buf;
}

}  // namespace mct
