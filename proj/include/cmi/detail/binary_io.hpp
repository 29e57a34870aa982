#pragma once

// Little-endian primitive readers/writers shared by the file formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "cmi/error.hpp"

namespace cmi::detail {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

template <class T>
inline T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
            std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
        }
        return std::bit_cast<T>(bytes);
    } else {
        return v;
    }
}

class BinaryWriter {
  public:
    explicit BinaryWriter(std::ostream& out) : out_(out) {}

    template <class T>
        requires std::is_arithmetic_v<T>
    void put(T v) {
        const T le = to_little(v);
        out_.write(reinterpret_cast<const char*>(&le), sizeof(T));
    }

    void put_magic(std::string_view magic) { out_.write(magic.data(), static_cast<std::streamsize>(magic.size())); }

    void check(const std::string& what) const {
        if (!out_) {
            throw FormatError("write failed: " + what);
        }
    }

  private:
    std::ostream& out_;
};

class BinaryReader {
  public:
    BinaryReader(std::istream& in, std::string context) : in_(in), context_(std::move(context)) {}

    template <class T>
        requires std::is_arithmetic_v<T>
    T get() {
        T v{};
        in_.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (in_.gcount() != static_cast<std::streamsize>(sizeof(T))) {
            throw FormatError(context_ + ": truncated file");
        }
        return to_little(v);
    }

    void expect_magic(std::string_view magic) {
        std::string got(magic.size(), '\0');
        in_.read(got.data(), static_cast<std::streamsize>(got.size()));
        if (in_.gcount() != static_cast<std::streamsize>(got.size()) || got != magic) {
            throw FormatError(context_ + ": bad magic, expected \"" + std::string(magic) + "\"");
        }
    }

    // Trailing garbage is treated as corruption.
    void expect_eof() {
        if (in_.peek() != std::char_traits<char>::eof()) {
            throw FormatError(context_ + ": unexpected trailing bytes");
        }
    }

    [[noreturn]] void fail(const std::string& msg) const { throw FormatError(context_ + ": " + msg); }

  private:
    std::istream& in_;
    std::string context_;
};

}  // namespace cmi::detail
