#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace skdt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thrown when operands do not conform to an operation's shape rule.
class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major array of doubles.
class Array {
   public:
    Array() : shape_{0} {}
    explicit Array(Shape shape, double fill = 0.0);
    Array(Shape shape, std::vector<double> data);

    static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }
    static Array vector(std::vector<double> data);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    /// Extent of the last axis (1 for rank-0).
    std::size_t last_dim() const { return shape_.empty() ? 1 : shape_.back(); }
    /// Product of all extents but the last.
    std::size_t rows() const { return last_dim() == 0 ? 0 : size() / last_dim(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }
    double item() const;

    Array reshaped(Shape shape) const;
    bool all_finite() const;

    Array& operator+=(const Array& o);
    Array& operator-=(const Array& o);
    Array& operator*=(double s);

    friend bool operator==(const Array& a, const Array& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

   private:
    Shape shape_;
    std::vector<double> data_;
};

Array operator+(Array a, const Array& b);
Array operator-(Array a, const Array& b);
Array operator*(Array a, double s);
Array operator*(double s, Array a);

double dot(const Array& a, const Array& b);
double l2_norm(const Array& a);
double max_abs_diff(const Array& a, const Array& b);

std::ostream& operator<<(std::ostream& os, const Array& a);

/// Named parameter arrays, iterated in name order.
class ParamSet {
   public:
    using Map = std::map<std::string, Array>;

    void add(const std::string& name, Array value);
    void set(const std::string& name, Array value);
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    const Array& get(const std::string& name) const;
    Array& get(const std::string& name);
    void erase(const std::string& name) { entries_.erase(name); }

    std::vector<std::string> names() const;
    std::size_t size() const { return entries_.size(); }
    std::size_t total_count() const;
    double global_norm() const;

    Map::const_iterator begin() const { return entries_.begin(); }
    Map::const_iterator end() const { return entries_.end(); }
    Map::iterator begin() { return entries_.begin(); }
    Map::iterator end() { return entries_.end(); }

    /// True when both sets hold the same names and shapes.
    bool same_layout(const ParamSet& other) const;

    friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

   private:
    Map entries_;
};

// SKDT1 archive:
//   "SKDT1" magic (5 bytes), then repeated until EOF:
//   u32 name length | name bytes | u32 rank | u64 extent * rank | f64 * numel
// All integers and doubles little-endian.
void write_archive(std::ostream& os, const ParamSet& params);
ParamSet read_archive(std::istream& is);
void save_archive(const std::string& path, const ParamSet& params);
ParamSet load_archive(const std::string& path);

/// FNV-1a over names, shapes and raw bytes; used to compare snapshots.
std::uint64_t params_hash(const ParamSet& params);

}  // namespace skdt
