#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstddef>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gelato/errors.hpp"

namespace gelato {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

// Dense row-major array of doubles. Every dimension is positive; scalars use
// shape {1}. Anything of rank >= 2 can be viewed as rows x cols where cols is
// the last dimension.
class Tensor {
public:
    Tensor() : shape_{1}, data_(1, 0.0) {}

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        check_shape();
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (shape_size(shape_) != data_.size()) {
            throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                                 std::to_string(data_.size()) + " values");
        }
    }

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
    static Tensor vec(std::vector<double> values) {
        const std::size_t n = values.size();
        return Tensor({n}, std::move(values));
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
        return Tensor({rows, cols}, std::move(values));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t cols() const noexcept { return shape_.back(); }
    std::size_t rows() const noexcept { return data_.size() / shape_.back(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }
    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(data_).subspan(r * cols(), cols());
    }

    double item() const {
        if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != data_.size()) {
            throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    // Bitwise comparison of shape and values.
    friend bool operator==(const Tensor& a, const Tensor& b) {
        if (a.shape_ != b.shape_) return false;
        return std::equal(a.data_.begin(), a.data_.end(), b.data_.begin(), [](double x, double y) {
            return std::memcmp(&x, &y, sizeof(double)) == 0;
        });
    }

private:
    void check_shape() const {
        if (shape_.empty()) throw DimensionError("tensor shape must have at least one dimension");
        for (auto d : shape_) {
            if (d == 0) throw DimensionError("tensor shape " + shape_str(shape_) + " has a zero dimension");
        }
    }

    Shape shape_;
    std::vector<double> data_;
};

inline double squared_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

// Named parameters with a frozen/trainable flag. Values are held through
// shared pointers: copying a ParamSet shares storage, and mutation goes
// through copy-on-write so copies never observe each other's updates.
class ParamSet {
public:
    struct Entry {
        std::shared_ptr<Tensor> value;
        bool trainable = false;
    };

    void add(const std::string& name, Tensor value, bool trainable = false) {
        add_shared(name, std::make_shared<Tensor>(std::move(value)), trainable);
    }

    void add_shared(const std::string& name, std::shared_ptr<Tensor> value, bool trainable = false) {
        if (entries_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
        entries_.emplace(name, Entry{std::move(value), trainable});
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    const Tensor& get(const std::string& name) const { return *entry(name).value; }
    std::shared_ptr<const Tensor> share(const std::string& name) const { return entry(name).value; }
    std::shared_ptr<Tensor> storage(const std::string& name) const { return entry(name).value; }

    bool trainable(const std::string& name) const { return entry(name).trainable; }
    void set_trainable(const std::string& name, bool on) { entry(name).trainable = on; }
    void freeze_all() {
        for (auto& [_, e] : entries_) e.trainable = false;
    }

    void set_value(const std::string& name, Tensor value) {
        auto& e = entry(name);
        if (value.shape() != e.value->shape()) {
            throw DimensionError("parameter '" + name + "' has shape " + shape_str(e.value->shape()) +
                                 ", got " + shape_str(value.shape()));
        }
        e.value = std::make_shared<Tensor>(std::move(value));
    }

    // Mutable access; clones first when the storage is shared.
    Tensor& mutate(const std::string& name) {
        auto& e = entry(name);
        if (e.value.use_count() > 1) e.value = std::make_shared<Tensor>(*e.value);
        return *e.value;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [n, _] : entries_) out.push_back(n);
        return out;
    }

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    void merge_from(const ParamSet& other) {
        for (const auto& [n, e] : other.entries_) add_shared(n, e.value, e.trainable);
    }

private:
    Entry& entry(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }
    const Entry& entry(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }

    std::map<std::string, Entry> entries_;
};

// Gradients keyed by parameter name. Only trainable parameters ever appear.
using GradStore = std::map<std::string, Tensor>;

} // namespace gelato
