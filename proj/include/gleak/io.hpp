#ifndef GLEAK_IO_HPP
#define GLEAK_IO_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "gleak/errors.hpp"
#include "gleak/tensor.hpp"

// Checkpoint byte convention, shared by every model file in the project:
// length-prefixed names, little-endian u64 sizes, IEEE-754 binary64 values
// regardless of the run precision. Writers emit parameters in canonical
// (lexicographic) order.

namespace gleak::io {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (unsigned char)(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("checkpoint: truncated integer field");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= (std::uint64_t)b[i] << (8 * i);
    return v;
}

inline void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
}

inline double get_f64(std::istream& is) {
    std::uint64_t bits = get_u64(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), (std::streamsize)s.size());
}

inline std::string get_string(std::istream& is) {
    std::uint64_t n = get_u64(is);
    if (n > (1u << 20)) throw IoError("checkpoint: implausible string length");
    std::string s(n, '\0');
    is.read(s.data(), (std::streamsize)n);
    if (!is) throw IoError("checkpoint: truncated string field");
    return s;
}

template <class T>
void put_weight_map(std::ostream& os, const std::map<std::string, Tensor<T>>& w) {
    put_u64(os, w.size());
    for (const auto& [name, t] : w) {
        put_string(os, name);
        put_u64(os, t.shape.size());
        for (std::size_t d : t.shape) put_u64(os, d);
        for (const T& v : t.data) put_f64(os, double(v));
    }
}

template <class T>
std::map<std::string, Tensor<T>> get_weight_map(std::istream& is) {
    std::map<std::string, Tensor<T>> w;
    const std::uint64_t count = get_u64(is);
    if (count > (1u << 20)) throw IoError("checkpoint: implausible parameter count");
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = get_string(is);
        const std::uint64_t nd = get_u64(is);
        if (nd > 8) throw IoError("checkpoint: implausible rank for '" + name + "'");
        std::vector<std::size_t> shape(nd);
        for (auto& d : shape) d = (std::size_t)get_u64(is);
        Tensor<T> t(shape);
        for (auto& v : t.data) v = T(get_f64(is));
        w.emplace(std::move(name), std::move(t));
    }
    return w;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    return is;
}

} // namespace gleak::io

#endif
