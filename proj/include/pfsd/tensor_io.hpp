#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>

#include "pfsd/tensor.hpp"

namespace pfsd {

// Binary tensor container. Layout, all little-endian:
//   magic "PFST" | version u8 (1) | dtype u8 (0=f32,1=f64,2=u8) | ndim u8
//   | ndim x u32 dims | payload scalars, row-major
inline constexpr char kTensorMagic[4] = {'P', 'F', 'S', 'T'};
inline constexpr uint8_t kTensorVersion = 1;

namespace detail {

inline void put_u32_le(std::ostream& os, uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

inline uint32_t get_u32_le(std::istream& is, const std::string& where) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated file: " + where);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void put_u16_le(std::ostream& os, uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    os.write(b, 2);
}

inline uint16_t get_u16_le(std::istream& is, const std::string& where) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2)) throw FormatError("truncated file: " + where);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

template <typename T>
void put_scalar_le(std::ostream& os, T v) {
    if constexpr (sizeof(T) == 1) {
        os.put(static_cast<char>(v));
    } else {
        uint64_t bits = 0;
        static_assert(sizeof(T) <= 8);
        std::memcpy(&bits, &v, sizeof(T));
        char b[8];
        for (size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
        os.write(b, sizeof(T));
    }
}

template <typename T>
T get_scalar_le(std::istream& is, const std::string& where) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), sizeof(T)))
        throw FormatError("truncated payload: " + where);
    if constexpr (sizeof(T) == 1) {
        return static_cast<T>(b[0]);
    } else {
        uint64_t bits = 0;
        for (size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
        T v;
        std::memcpy(&v, &bits, sizeof(T));
        return v;
    }
}

}  // namespace detail

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t, const std::string& where) {
    os.write(kTensorMagic, 4);
    os.put(static_cast<char>(kTensorVersion));
    os.put(static_cast<char>(dtype_traits<T>::code));
    if (t.rank() > 255) throw ShapeError("rank > 255 unsupported");
    os.put(static_cast<char>(t.rank()));
    for (size_t d = 0; d < t.rank(); ++d) {
        if (t.dim(d) > 0xffffffffULL) throw ShapeError("extent too large for file format");
        detail::put_u32_le(os, static_cast<uint32_t>(t.dim(d)));
    }
    for (size_t i = 0; i < t.numel(); ++i) detail::put_scalar_le(os, t[i]);
    if (!os) throw IoError("write failed: " + where);
}

template <typename T>
Tensor<T> read_tensor(std::istream& is, const std::string& where) {
    char magic[4];
    if (!is.read(magic, 4)) throw FormatError("truncated header: " + where);
    if (std::memcmp(magic, kTensorMagic, 4) != 0)
        throw FormatError("bad magic in " + where + " (expected PFST)");
    const int version = is.get();
    if (version != kTensorVersion)
        throw FormatError("unsupported tensor version " + std::to_string(version) + " in " + where);
    const int code = is.get();
    if (code < 0 || code > 2)
        throw FormatError("unsupported dtype code " + std::to_string(code) + " in " + where);
    if (code != dtype_traits<T>::code)
        throw FormatError("dtype mismatch in " + where + ": file has code " + std::to_string(code) +
                          ", caller wants " + dtype_traits<T>::name);
    const int ndim = is.get();
    if (ndim < 0) throw FormatError("truncated header: " + where);
    Shape shape(static_cast<size_t>(ndim));
    for (auto& d : shape) d = detail::get_u32_le(is, where);
    Tensor<T> t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = detail::get_scalar_le<T>(is, where);
    return t;
}

template <typename T>
void save_tensor(const Tensor<T>& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    write_tensor(os, t, path);
    os.flush();
    if (!os) throw IoError("write failed: " + path);
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for read: " + path);
    return read_tensor<T>(is, path);
}

// Dtype code stored in a tensor file, without reading the payload.
inline uint8_t peek_tensor_dtype(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for read: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0)
        throw FormatError("bad magic in " + path + " (expected PFST)");
    is.get();
    const int code = is.get();
    if (code < 0) throw FormatError("truncated header: " + path);
    return static_cast<uint8_t>(code);
}

}  // namespace pfsd
