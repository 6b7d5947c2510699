#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ttpf/core.hpp"

namespace ttpf {

/// One named float32 tensor inside a TTPT1 archive.
struct Tensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
    friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// TTPT1 container: magic "TTPT", version 0x01, then records of
/// u16 name length, name, u8 rank, u32 dims, f32 payload; all little-endian.
class Archive {
public:
    static constexpr char kMagic[4] = {'T', 'T', 'P', 'T'};
    static constexpr std::uint8_t kVersion = 0x01;

    void put(std::string name, std::vector<std::uint32_t> dims, std::vector<float> values) {
        Tensor t{std::move(name), std::move(dims), std::move(values)};
        require(!t.name.empty() && t.name.size() <= 0xFFFF, ErrorKind::Io, "archive: invalid record name");
        require(t.dims.size() <= 0xFF, ErrorKind::Io, "archive: rank too large");
        require(t.element_count() == t.values.size(), ErrorKind::Shape, "archive: payload does not match dims for " + t.name);
        if (auto* existing = find(t.name)) {
            *existing = std::move(t);
        } else {
            records_.push_back(std::move(t));
        }
    }

    void put_matrix(const std::string& name, const Matrix& m) {
        std::vector<float> v(m.data().begin(), m.data().end());
        put(name, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, std::move(v));
    }

    void put_vector(const std::string& name, std::span<const double> v) {
        put(name, {static_cast<std::uint32_t>(v.size())}, std::vector<float>(v.begin(), v.end()));
    }

    void put_scalar(const std::string& name, double x) { put(name, {}, {static_cast<float>(x)}); }

    /// Strings travel as a rank-1 tensor of byte values.
    void put_string(const std::string& name, std::string_view s) {
        std::vector<float> v;
        v.reserve(s.size());
        for (unsigned char c : s) v.push_back(static_cast<float>(c));
        const auto n = static_cast<std::uint32_t>(v.size());
        put(name, {n}, std::move(v));
    }

    /// Exact numbers (seeds, hyperparameters) are stored as their decimal text
    /// so they survive the float32 payload without rounding.
    template <typename T>
    void put_number(const std::string& name, T x) {
        char buf[64];
        const auto res = std::to_chars(buf, buf + sizeof buf, x);
        put_string(name, std::string_view(buf, res.ptr));
    }

    template <typename T>
    T get_number(std::string_view name) const {
        const std::string s = get_string(name);
        T x{};
        const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
        require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorKind::Data,
                "archive: record " + std::string(name) + " is not a number");
        return x;
    }

    bool contains(std::string_view name) const { return find(name) != nullptr; }

    const Tensor& get(std::string_view name) const {
        const Tensor* t = find(name);
        require(t != nullptr, ErrorKind::Data, "archive: missing record " + std::string(name));
        return *t;
    }

    Matrix get_matrix(std::string_view name) const {
        const Tensor& t = get(name);
        require(t.dims.size() == 2, ErrorKind::Shape, "archive: " + t.name + " is not a matrix");
        return Matrix(t.dims[0], t.dims[1], std::vector<double>(t.values.begin(), t.values.end()));
    }

    Vec get_vector(std::string_view name) const {
        const Tensor& t = get(name);
        require(t.dims.size() == 1, ErrorKind::Shape, "archive: " + t.name + " is not a vector");
        return Vec(t.values.begin(), t.values.end());
    }

    double get_scalar(std::string_view name) const {
        const Tensor& t = get(name);
        require(t.dims.empty() && t.values.size() == 1, ErrorKind::Shape, "archive: " + t.name + " is not a scalar");
        return t.values[0];
    }

    std::string get_string(std::string_view name) const {
        const Tensor& t = get(name);
        std::string s;
        s.reserve(t.values.size());
        for (float f : t.values) s.push_back(static_cast<char>(static_cast<unsigned char>(f)));
        return s;
    }

    const std::vector<Tensor>& records() const noexcept { return records_; }

    std::vector<unsigned char> to_bytes() const {
        std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
        out.push_back(kVersion);
        for (const Tensor& t : records_) {
            append_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
            out.insert(out.end(), t.name.begin(), t.name.end());
            out.push_back(static_cast<unsigned char>(t.dims.size()));
            for (auto d : t.dims) append_le<std::uint32_t>(out, d);
            for (float f : t.values) append_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
        }
        return out;
    }

    static Archive from_bytes(std::span<const unsigned char> bytes) {
        require(bytes.size() >= 5 && std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin(),
                                                [](char a, unsigned char b) { return static_cast<unsigned char>(a) == b; }),
                ErrorKind::Data, "archive: bad magic");
        require(bytes[4] == kVersion, ErrorKind::Data, "archive: unsupported version");
        Archive a;
        std::size_t pos = 5;
        while (pos < bytes.size()) {
            const auto name_len = read_le<std::uint16_t>(bytes, pos);
            require(pos + name_len <= bytes.size(), ErrorKind::Data, "archive: truncated name");
            std::string name(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
            pos += name_len;
            require(pos < bytes.size(), ErrorKind::Data, "archive: truncated rank");
            const std::uint8_t rank = bytes[pos++];
            std::vector<std::uint32_t> dims(rank);
            for (auto& d : dims) d = read_le<std::uint32_t>(bytes, pos);
            Tensor t{std::move(name), std::move(dims), {}};
            const std::size_t count = t.element_count();
            require(count <= (bytes.size() - pos) / 4, ErrorKind::Data, "archive: truncated payload");
            t.values.resize(count);
            for (auto& f : t.values) f = std::bit_cast<float>(read_le<std::uint32_t>(bytes, pos));
            a.records_.push_back(std::move(t));
        }
        return a;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        require(out.good(), ErrorKind::Io, "cannot open " + path + " for writing");
        const auto bytes = to_bytes();
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        require(out.good(), ErrorKind::Io, "write failed for " + path);
    }

    static Archive load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        require(in.good(), ErrorKind::Io, "cannot open " + path);
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return from_bytes(bytes);
    }

private:
    template <typename T>
    static void append_le(std::vector<unsigned char>& out, T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }

    template <typename T>
    static T read_le(std::span<const unsigned char> bytes, std::size_t& pos) {
        require(pos + sizeof(T) <= bytes.size(), ErrorKind::Data, "archive: truncated record");
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes[pos + i]) << (8 * i));
        pos += sizeof(T);
        return v;
    }

    Tensor* find(std::string_view name) {
        auto it = std::find_if(records_.begin(), records_.end(), [&](const Tensor& t) { return t.name == name; });
        return it == records_.end() ? nullptr : &*it;
    }
    const Tensor* find(std::string_view name) const {
        auto it = std::find_if(records_.begin(), records_.end(), [&](const Tensor& t) { return t.name == name; });
        return it == records_.end() ? nullptr : &*it;
    }

    std::vector<Tensor> records_;
};

} // namespace ttpf
