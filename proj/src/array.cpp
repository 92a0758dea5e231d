#include "skdt/array.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace skdt {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Array::Array(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
        throw ShapeError("Array: shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " elements");
    }
}

Array Array::vector(std::vector<double> data) {
    Shape s{data.size()};
    return Array(std::move(s), std::move(data));
}

double Array::item() const {
    if (data_.size() != 1) throw ShapeError("item: array of shape " + shape_str(shape_) + " is not a scalar");
    return data_[0];
}

Array Array::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
    }
    return Array(std::move(shape), data_);
}

bool Array::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Array& Array::operator+=(const Array& o) {
    if (o.size() != size()) throw ShapeError("+=: " + shape_str(shape_) + " vs " + shape_str(o.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Array& Array::operator-=(const Array& o) {
    if (o.size() != size()) throw ShapeError("-=: " + shape_str(shape_) + " vs " + shape_str(o.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Array& Array::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Array operator+(Array a, const Array& b) { return a += b; }
Array operator-(Array a, const Array& b) { return a -= b; }
Array operator*(Array a, double s) { return a *= s; }
Array operator*(double s, Array a) { return a *= s; }

double dot(const Array& a, const Array& b) {
    if (a.size() != b.size()) throw ShapeError("dot: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(const Array& a) { return std::sqrt(dot(a, a)); }

double max_abs_diff(const Array& a, const Array& b) {
    if (a.size() != b.size()) throw ShapeError("max_abs_diff: size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::ostream& operator<<(std::ostream& os, const Array& a) {
    os << "Array" << shape_str(a.shape()) << '{';
    for (std::size_t i = 0; i < a.size() && i < 16; ++i) os << (i ? ", " : "") << a[i];
    if (a.size() > 16) os << ", ...";
    return os << '}';
}

void ParamSet::add(const std::string& name, Array value) {
    if (!entries_.emplace(name, std::move(value)).second) {
        throw std::invalid_argument("ParamSet: duplicate parameter '" + name + "'");
    }
}

void ParamSet::set(const std::string& name, Array value) { entries_[name] = std::move(value); }

const Array& ParamSet::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamSet: no parameter '" + name + "'");
    return it->second;
}

Array& ParamSet::get(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamSet: no parameter '" + name + "'");
    return it->second;
}

std::vector<std::string> ParamSet::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, _] : entries_) out.push_back(k);
    return out;
}

std::size_t ParamSet::total_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : entries_) n += v.size();
    return n;
}

double ParamSet::global_norm() const {
    double s = 0.0;
    for (const auto& [_, v] : entries_) s += dot(v, v);
    return std::sqrt(s);
}

bool ParamSet::same_layout(const ParamSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    auto it = other.entries_.begin();
    for (const auto& [k, v] : entries_) {
        if (k != it->first || v.shape() != it->second.shape()) return false;
        ++it;
    }
    return true;
}

namespace {

constexpr char kMagic[5] = {'S', 'K', 'D', 'T', '1'};

template <typename T>
void put_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
bool get_le(std::istream& is, T& v) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    std::memcpy(&v, buf, sizeof(T));
    return true;
}

}  // namespace

void write_archive(std::ostream& os, const ParamSet& params) {
    os.write(kMagic, sizeof(kMagic));
    for (const auto& [name, arr] : params) {
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(arr.rank()));
        for (std::size_t e : arr.shape()) put_le<std::uint64_t>(os, e);
        for (double v : arr.values()) put_le<double>(os, v);
    }
    if (!os) throw std::runtime_error("SKDT1: write failed");
}

ParamSet read_archive(std::istream& is) {
    char magic[5];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("SKDT1: bad magic");
    }
    ParamSet out;
    std::uint32_t name_len = 0;
    while (get_le(is, name_len)) {
        std::string name(name_len, '\0');
        std::uint32_t rank = 0;
        if (!is.read(name.data(), name_len) || !get_le(is, rank)) throw std::runtime_error("SKDT1: truncated entry header");
        Shape shape(rank);
        for (auto& e : shape) {
            std::uint64_t v = 0;
            if (!get_le(is, v)) throw std::runtime_error("SKDT1: truncated extents for '" + name + "'");
            e = static_cast<std::size_t>(v);
        }
        std::vector<double> data(shape_numel(shape));
        for (auto& d : data)
            if (!get_le(is, d)) throw std::runtime_error("SKDT1: truncated data for '" + name + "'");
        out.add(name, Array(std::move(shape), std::move(data)));
    }
    return out;
}

void save_archive(const std::string& path, const ParamSet& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("SKDT1: cannot open '" + path + "' for writing");
    write_archive(os, params);
}

ParamSet load_archive(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("SKDT1: cannot open '" + path + "'");
    return read_archive(is);
}

std::uint64_t params_hash(const ParamSet& params) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, arr] : params) {
        mix(name.data(), name.size());
        for (std::size_t e : arr.shape()) mix(&e, sizeof(e));
        mix(arr.data(), arr.size() * sizeof(double));
    }
    return h;
}

}  // namespace skdt
