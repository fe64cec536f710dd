#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gah/diffcore/array.hpp"

namespace gah {

/// Malformed or unreadable on-disk data.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace io {

// Little-endian encoders, independent of host byte order.

template <class U>
void put_le(std::ostream& out, U v)
{
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    }
    out.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(std::istream& in, std::string_view what)
{
    std::array<unsigned char, sizeof(U)> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (!in) {
        throw FormatError("truncated input while reading " + std::string(what));
    }
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        v |= static_cast<U>(bytes[i]) << (8 * i);
    }
    return v;
}

inline void put_u16(std::ostream& out, std::uint16_t v) { put_le(out, v); }
inline void put_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
inline void put_u64(std::ostream& out, std::uint64_t v) { put_le(out, v); }
inline void put_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint16_t get_u16(std::istream& in, std::string_view what) { return get_le<std::uint16_t>(in, what); }
inline std::uint32_t get_u32(std::istream& in, std::string_view what) { return get_le<std::uint32_t>(in, what); }
inline std::uint64_t get_u64(std::istream& in, std::string_view what) { return get_le<std::uint64_t>(in, what); }
inline double get_f64(std::istream& in, std::string_view what)
{
    return std::bit_cast<double>(get_le<std::uint64_t>(in, what));
}

inline void put_magic(std::ostream& out, std::string_view magic) { out.write(magic.data(), 4); }

inline void expect_magic(std::istream& in, std::string_view magic)
{
    std::array<char, 4> got{};
    in.read(got.data(), 4);
    if (!in || std::string_view(got.data(), 4) != magic) {
        throw FormatError("bad magic: expected \"" + std::string(magic) + "\"");
    }
}

inline void expect_eof(std::istream& in, std::string_view what)
{
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after " + std::string(what));
    }
}

inline std::ofstream open_out(const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    return out;
}

inline std::ifstream open_in(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    return in;
}

inline std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in = open_in(path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_text(const std::filesystem::path& path, std::string_view text)
{
    std::ofstream out = open_out(path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

} // namespace io

// Dense array files: magic "GAHA", version u16, rank u16, rank x u32 extents, then f64 payload.
// Used for synthetic feature maps and externally produced per-object feature tensors.

inline constexpr std::uint16_t kArrayFileVersion = 1;

inline void write_array(std::ostream& out, const Shape& shape, std::span<const double> data)
{
    io::put_magic(out, "GAHA");
    io::put_u16(out, kArrayFileVersion);
    io::put_u16(out, static_cast<std::uint16_t>(shape.size()));
    for (std::size_t d : shape) {
        io::put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (double v : data) {
        io::put_f64(out, v);
    }
}

inline void write_array(const std::filesystem::path& path, const Shape& shape, std::span<const double> data)
{
    std::ofstream out = io::open_out(path);
    write_array(out, shape, data);
}

struct ArrayFile {
    Shape shape;
    std::vector<double> data;
};

inline ArrayFile read_array(std::istream& in)
{
    io::expect_magic(in, "GAHA");
    const auto version = io::get_u16(in, "array version");
    if (version != kArrayFileVersion) {
        throw FormatError("unsupported array file version " + std::to_string(version));
    }
    const auto rank = io::get_u16(in, "array rank");
    ArrayFile f;
    for (std::uint16_t i = 0; i < rank; ++i) {
        f.shape.push_back(io::get_u32(in, "array extent"));
    }
    f.data.resize(numel(f.shape));
    for (double& v : f.data) {
        v = io::get_f64(in, "array payload");
    }
    io::expect_eof(in, "array payload");
    return f;
}

inline ArrayFile read_array(const std::filesystem::path& path)
{
    std::ifstream in = io::open_in(path);
    return read_array(in);
}

} // namespace gah
