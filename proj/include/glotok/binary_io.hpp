#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "glotok/error.hpp"

namespace glotok::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

// Append-only little-endian byte buffer.
class ByteWriter {
public:
    void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

    template <class T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }

    void put_string(std::string_view s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }

    void put_bytes(const std::vector<std::uint8_t>& b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }

    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

    void save(const std::filesystem::path& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot open '" + path.string() + "' for writing");
        f.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
        if (!f) throw Error("write failed for '" + path.string() + "'");
    }

private:
    std::vector<std::uint8_t> bytes_;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Bounds-checked little-endian reader; every short read throws FormatError
// naming the expected and available byte counts.
class ByteReader {
public:
    ByteReader(std::vector<std::uint8_t> bytes, std::string label)
        : bytes_(std::move(bytes)), label_(std::move(label)) {}

    static ByteReader from_file(const std::filesystem::path& path) { return {read_file(path), path.string()}; }

    void expect_magic(std::string_view m) {
        need(m.size(), "magic");
        if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0)
            throw FormatError(label_ + ": bad magic (expected \"" + std::string(m) + "\")");
        pos_ += m.size();
    }

    template <class T>
    T get(const char* what = "field") {
        static_assert(std::is_trivially_copyable_v<T>);
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string get_string(const char* what = "string") {
        const auto n = get<std::uint32_t>(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    // Reads `count` values of T, checking the full payload is present first.
    template <class T>
    std::vector<T> get_array(std::uint64_t count, const char* what = "payload") {
        const std::uint64_t nbytes = count * sizeof(T);
        need(nbytes, what);
        std::vector<T> out(count);
        if (count) std::memcpy(out.data(), bytes_.data() + pos_, nbytes);
        pos_ += nbytes;
        return out;
    }

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    const std::string& label() const noexcept { return label_; }

    void expect_end() const {
        if (remaining() != 0)
            throw FormatError(label_ + ": " + std::to_string(remaining()) + " trailing bytes");
    }

private:
    void need(std::uint64_t n, const char* what) const {
        if (n > remaining())
            throw FormatError(label_ + ": truncated " + what + ": expected " + std::to_string(n) +
                              " bytes at offset " + std::to_string(pos_) + ", got " +
                              std::to_string(remaining()));
    }

    std::vector<std::uint8_t> bytes_;
    std::string label_;
    std::size_t pos_ = 0;
};

} // namespace glotok::io
