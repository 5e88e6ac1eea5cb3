#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace coin {

/// NCHW extent. Dense vectors are stored as (N, F, 1, 1).
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    [[nodiscard]] std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    [[nodiscard]] std::size_t sample() const { return static_cast<std::size_t>(c) * h * w; }

    friend bool operator==(const Shape&, const Shape&) = default;

    [[nodiscard]] std::string str() const {
        std::ostringstream os;
        os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
        return os.str();
    }
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.numel()) {
            throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                             " does not match shape " + shape_.str());
        }
    }

    static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

    [[nodiscard]] std::size_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    T* sample_ptr(int n) { return data_.data() + static_cast<std::size_t>(n) * shape_.sample(); }
    const T* sample_ptr(int n) const {
        return data_.data() + static_cast<std::size_t>(n) * shape_.sample();
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    /// Same data, new extent with equal element count.
    [[nodiscard]] Tensor reshaped(Shape s) const {
        if (s.numel() != shape_.numel()) {
            throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
        }
        return Tensor(s, data_);
    }

    template <typename U>
    [[nodiscard]] Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    [[nodiscard]] T sum() const { return std::accumulate(data_.begin(), data_.end(), T(0)); }

    Tensor& operator+=(const Tensor& o) {
        require_same(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    void require_same(const Tensor& o, const char* what) const {
        if (!(shape_ == o.shape_)) {
            throw ShapeError(std::string(what) + ": shape mismatch " + shape_.str() + " vs " +
                             o.shape_.str());
        }
    }

private:
    Shape shape_{0, 0, 0, 0};
    std::vector<T> data_;
};

}  // namespace coin
