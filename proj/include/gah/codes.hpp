#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gah/diffcore.hpp"
#include "gah/io.hpp"

namespace gah {

/// M codes of Y layers of K bits each, held as +1/-1 signs in [code][layer][bit] order.
class CodeBook {
public:
    CodeBook() = default;
    CodeBook(std::size_t count, std::size_t layers, std::size_t bits)
        : count_(count), layers_(layers), bits_(bits), signs_(count * layers * bits, 1)
    {
        if (layers == 0 || bits == 0) {
            throw std::invalid_argument("code book needs at least one layer and one bit");
        }
    }

    /// One [M, K] sign array per layer.
    static CodeBook from_layers(const std::vector<Array>& layers)
    {
        if (layers.empty() || layers[0].rank() != 2) {
            throw ShapeError("code layers must be non-empty rank-2 arrays");
        }
        CodeBook book(layers[0].dim(0), layers.size(), layers[0].dim(1));
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (layers[l].shape() != layers[0].shape()) {
                throw ShapeError("code layer " + std::to_string(l) + " has shape " + to_string(layers[l].shape()) +
                                 ", expected " + to_string(layers[0].shape()));
            }
            for (std::size_t m = 0; m < book.count_; ++m) {
                for (std::size_t j = 0; j < book.bits_; ++j) {
                    book.set(m, l, j, layers[l].at(m * book.bits_ + j) >= 0.0 ? 1 : -1);
                }
            }
        }
        return book;
    }

    [[nodiscard]] std::size_t count() const { return count_; }
    [[nodiscard]] std::size_t layers() const { return layers_; }
    [[nodiscard]] std::size_t bits() const { return bits_; }

    [[nodiscard]] std::span<const std::int8_t> code(std::size_t m, std::size_t layer) const
    {
        return std::span(signs_).subspan((m * layers_ + layer) * bits_, bits_);
    }

    [[nodiscard]] std::span<std::int8_t> code(std::size_t m, std::size_t layer)
    {
        return std::span(signs_).subspan((m * layers_ + layer) * bits_, bits_);
    }

    void set(std::size_t m, std::size_t layer, std::size_t bit, std::int8_t sign)
    {
        signs_[(m * layers_ + layer) * bits_ + bit] = sign;
    }

    /// A single-layer book holding one layer of this one.
    [[nodiscard]] CodeBook layer(std::size_t l) const
    {
        if (l >= layers_) {
            throw std::out_of_range("layer " + std::to_string(l) + " of " + std::to_string(layers_));
        }
        CodeBook out(count_, 1, bits_);
        for (std::size_t m = 0; m < count_; ++m) {
            std::ranges::copy(code(m, l), out.code(m, 0).begin());
        }
        return out;
    }

    bool operator==(const CodeBook&) const = default;

private:
    std::size_t count_ = 0;
    std::size_t layers_ = 0;
    std::size_t bits_ = 0;
    std::vector<std::int8_t> signs_;
};

inline std::size_t code_bytes(std::size_t bits) { return (bits + 7) / 8; }

/// Packs signs into 64-bit words, bit j in word j/64 at position j%64, +1 stored as a set bit.
inline std::vector<std::uint64_t> pack_words(std::span<const std::int8_t> signs)
{
    std::vector<std::uint64_t> words((signs.size() + 63) / 64, 0);
    for (std::size_t j = 0; j < signs.size(); ++j) {
        if (signs[j] > 0) {
            words[j / 64] |= std::uint64_t{1} << (j % 64);
        }
    }
    return words;
}

inline std::vector<std::int8_t> unpack_words(std::span<const std::uint64_t> words, std::size_t bits)
{
    std::vector<std::int8_t> signs(bits);
    for (std::size_t j = 0; j < bits; ++j) {
        signs[j] = ((words[j / 64] >> (j % 64)) & 1U) != 0 ? 1 : -1;
    }
    return signs;
}

// Code file: "GAHC", K u16, layers u16, M u64, then M x layers x ceil(K/8) bytes.
// Bit j of a code lives in byte j/8 at position j%8 (least significant first); +1 is a set bit.

inline void write_codes(std::ostream& out, const CodeBook& book)
{
    if (book.bits() > std::numeric_limits<std::uint16_t>::max() ||
        book.layers() > std::numeric_limits<std::uint16_t>::max()) {
        throw std::invalid_argument("code book dimensions exceed the file header range");
    }
    io::put_magic(out, "GAHC");
    io::put_u16(out, static_cast<std::uint16_t>(book.bits()));
    io::put_u16(out, static_cast<std::uint16_t>(book.layers()));
    io::put_u64(out, book.count());
    std::vector<char> bytes(code_bytes(book.bits()));
    for (std::size_t m = 0; m < book.count(); ++m) {
        for (std::size_t l = 0; l < book.layers(); ++l) {
            std::ranges::fill(bytes, 0);
            const auto c = book.code(m, l);
            for (std::size_t j = 0; j < c.size(); ++j) {
                if (c[j] > 0) {
                    bytes[j / 8] = static_cast<char>(bytes[j / 8] | (1 << (j % 8)));
                }
            }
            out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        }
    }
}

inline void write_codes(const std::filesystem::path& path, const CodeBook& book)
{
    std::ofstream out = io::open_out(path);
    write_codes(out, book);
    if (!out) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

inline CodeBook read_codes(std::istream& in)
{
    io::expect_magic(in, "GAHC");
    const std::size_t bits = io::get_u16(in, "code bits");
    const std::size_t layers = io::get_u16(in, "code layers");
    const std::uint64_t count = io::get_u64(in, "code count");
    if (bits == 0 || layers == 0) {
        throw FormatError("code file declares zero bits or layers");
    }
    CodeBook book(count, layers, bits);
    std::vector<unsigned char> bytes(code_bytes(bits));
    for (std::size_t m = 0; m < count; ++m) {
        for (std::size_t l = 0; l < layers; ++l) {
            in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
            if (!in) {
                throw FormatError("truncated code file at code " + std::to_string(m));
            }
            for (std::size_t j = 0; j < bits; ++j) {
                book.set(m, l, j, ((bytes[j / 8] >> (j % 8)) & 1U) != 0 ? 1 : -1);
            }
        }
    }
    io::expect_eof(in, "code file");
    return book;
}

inline CodeBook read_codes(const std::filesystem::path& path)
{
    std::ifstream in = io::open_in(path);
    return read_codes(in);
}

} // namespace gah
