#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <ostream>
#include <string>

#include "ivfuse/core/errors.hpp"

namespace ivfuse {

// Dense shape of up to 4 dims. Network activations use NCHW, fully connected
// activations N x F, loss values are scalars (ndim 0).
struct Shape {
    std::array<std::int64_t, 4> d{1, 1, 1, 1};
    int ndim = 0;

    Shape() = default;
    Shape(std::initializer_list<std::int64_t> dims) {
        ndim = static_cast<int>(dims.size());
        if (ndim > 4) throw ValidationError("Shape: more than 4 dims");
        int i = 0;
        for (auto v : dims) d[static_cast<std::size_t>(i++)] = v;
    }

    static Shape scalar() { return Shape{}; }
    static Shape nchw(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        return Shape{n, c, h, w};
    }

    std::int64_t count() const {
        std::int64_t n = 1;
        for (int i = 0; i < ndim; ++i) n *= d[static_cast<std::size_t>(i)];
        return n;
    }
    std::int64_t operator[](int i) const { return d[static_cast<std::size_t>(i)]; }

    bool operator==(const Shape& o) const { return ndim == o.ndim && d == o.d; }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::string s = "(";
        for (int i = 0; i < ndim; ++i) {
            if (i) s += ",";
            s += std::to_string(d[static_cast<std::size_t>(i)]);
        }
        return s + ")";
    }
};

inline std::ostream& operator<<(std::ostream& os, const Shape& s) { return os << s.str(); }

// Flat dense tensor over a scalar type. Storage is row-major with respect to
// the shape: (n,c,h,w) lives at ((n*C + c)*H + h)*W + w.
template <typename S>
class Tensor {
  public:
    using Array = Eigen::Array<S, Eigen::Dynamic, 1>;
    using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(shape), data_(Array::Zero(shape.count())) {}
    Tensor(Shape shape, Array values) : shape_(shape), data_(std::move(values)) {
        if (data_.size() != shape_.count())
            throw ValidationError("Tensor: value count does not match shape " + shape_.str());
    }

    static Tensor zeros(Shape shape) { return Tensor(shape); }
    static Tensor constant(Shape shape, S value) {
        Tensor t(shape);
        t.data_.setConstant(value);
        return t;
    }
    static Tensor scalar(S value) {
        Tensor t(Shape::scalar());
        t.data_.setConstant(value);
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::int64_t size() const { return data_.size(); }
    Array& array() { return data_; }
    const Array& array() const { return data_; }
    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }

    S& operator[](std::int64_t i) { return data_(i); }
    S operator[](std::int64_t i) const { return data_(i); }

    S& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        return data_(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w);
    }
    S at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return data_(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w);
    }
    S& at(std::int64_t r, std::int64_t c) { return data_(r * shape_[1] + c); }
    S at(std::int64_t r, std::int64_t c) const { return data_(r * shape_[1] + c); }

    S value() const {
        if (data_.size() != 1) throw ValidationError("Tensor::value on non-scalar");
        return data_(0);
    }

    // 2-D row-major view for matrix algebra. rows*cols must equal size().
    Eigen::Map<MatrixRM> mat(std::int64_t rows, std::int64_t cols) {
        return Eigen::Map<MatrixRM>(data_.data(), rows, cols);
    }
    Eigen::Map<const MatrixRM> mat(std::int64_t rows, std::int64_t cols) const {
        return Eigen::Map<const MatrixRM>(data_.data(), rows, cols);
    }

    bool allFinite() const { return data_.isFinite().all(); }

    template <typename T>
    Tensor<T> cast() const {
        Tensor<T> out(shape_);
        out.array() = data_.template cast<T>();
        return out;
    }

  private:
    Shape shape_;
    Array data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace ivfuse
