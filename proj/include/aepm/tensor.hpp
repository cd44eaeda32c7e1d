#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace aepm {

/// Dense row-major tensor of doubles, rank 1..5. Value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape) { resize(std::move(shape)); zero(); }
    Tensor(std::initializer_list<int64_t> shape)
        : Tensor(std::vector<int64_t>(shape)) {}

    /// Resize storage to match `shape`. Element values are unspecified
    /// afterwards unless the total size is unchanged.
    void resize(std::vector<int64_t> shape) {
        int64_t total = 1;
        for (int64_t d : shape) {
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
            total *= d;
        }
        shape_ = std::move(shape);
        data_.resize(static_cast<size_t>(total));
    }

    void zero() { std::fill(data_.begin(), data_.end(), 0.0); }
    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    const std::vector<int64_t>& shape() const { return shape_; }
    bool empty() const { return data_.empty(); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return data_[static_cast<size_t>(i)]; }
    double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    double& at(int64_t i, int64_t j, int64_t k) {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    double at(int64_t i, int64_t j, int64_t k) const {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    double& at(int64_t i, int64_t j, int64_t k, int64_t l) {
        return data_[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
    }
    double at(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return data_[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
    }
    double& at(int64_t i, int64_t j, int64_t k, int64_t l, int64_t m) {
        return data_[static_cast<size_t>((((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l) * shape_[4] + m)];
    }
    double at(int64_t i, int64_t j, int64_t k, int64_t l, int64_t m) const {
        return data_[static_cast<size_t>((((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l) * shape_[4] + m)];
    }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(shape_[i]);
        }
        return s + ")";
    }

    bool all_finite() const;

    static Tensor zeros_like(const Tensor& t) {
        Tensor r;
        r.resize(t.shape());
        r.zero();
        return r;
    }

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

} // namespace aepm
