#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpdense {

/// Dense row-major array. Activations are [batch, channels, length];
/// fully connected layers use [rows, cols].
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims, T fill = T{})
        : dims_(std::move(dims)), data_(element_count(dims_), fill) {}

    [[nodiscard]] const std::vector<std::size_t>& dims() const { return dims_; }
    [[nodiscard]] std::size_t dim(std::size_t i) const { return dims_.at(i); }
    [[nodiscard]] std::size_t rank() const { return dims_.size(); }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t b, std::size_t c, std::size_t l) {
        assert(rank() == 3);
        return data_[(b * dims_[1] + c) * dims_[2] + l];
    }
    const T& at(std::size_t b, std::size_t c, std::size_t l) const {
        assert(rank() == 3);
        return data_[(b * dims_[1] + c) * dims_[2] + l];
    }
    T& at(std::size_t r, std::size_t c) {
        assert(rank() == 2);
        return data_[r * dims_[1] + c];
    }
    const T& at(std::size_t r, std::size_t c) const {
        assert(rank() == 2);
        return data_[r * dims_[1] + c];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    /// Same storage, new dims; element count must match.
    void reshape(std::vector<std::size_t> dims) {
        if (element_count(dims) != data_.size()) throw std::invalid_argument("reshape changes element count");
        dims_ = std::move(dims);
    }

    Tensor& operator+=(const Tensor& other) {
        check_same_shape(*this, other, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    friend void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
        if (a.dims_ != b.dims_) throw std::invalid_argument(std::string("shape mismatch in ") + where);
    }

    bool operator==(const Tensor&) const = default;

private:
    static std::size_t element_count(const std::vector<std::size_t>& dims) {
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
    }

    std::vector<std::size_t> dims_;
    std::vector<T> data_;
};

/// A trainable tensor with its gradient and SGD momentum buffer.
template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> velocity;

    Param() = default;
    Param(std::string n, std::vector<std::size_t> dims)
        : name(std::move(n)), value(dims), grad(dims), velocity(std::move(dims)) {}

    void zero_grad() { grad.fill(T{}); }
};

/// Character indices of a batch, [batch, length] row-major.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t length = 0;
    std::vector<std::uint8_t> ids;
    std::vector<int> labels;
};

}  // namespace gpdense
