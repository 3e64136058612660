#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "nsdf/common.hpp"

namespace nsdf {

// Little-endian encoder for the NSDS / NSDG / NSDF containers.
class ByteWriter {
public:
    void magic(std::string_view tag) { buf_.append(tag); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }

    const std::string& bytes() const { return buf_; }
    std::string take() { return std::move(buf_); }

private:
    template <class T>
    void put(T v) {
        for (unsigned i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }

    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    bool has_magic(std::string_view tag) const {
        return data_.size() >= tag.size() && data_.substr(0, tag.size()) == tag;
    }
    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }
    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

    std::size_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) fail(ErrorCode::TruncatedFile, "unexpected end of data");
    }
    template <class T>
    T get() {
        need(sizeof(T));
        T v = 0;
        for (unsigned i = 0; i < sizeof(T); ++i)
            v |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += sizeof(T);
        return v;
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

}  // namespace nsdf
