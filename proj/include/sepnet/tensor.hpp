#ifndef SEPNET_TENSOR_HPP
#define SEPNET_TENSOR_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sepnet {

using Index = std::int64_t;
using Shape = std::vector<Index>;

std::string shape_to_string(const Shape& shape);

inline Index shape_size(const Shape& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major array. Activations are NHWC, conv weights [kh,kw,cin,cout],
/// depthwise weights [kh,kw,c], dense weights [k,m].
///
/// A default-constructed tensor is empty (no shape, no data). Any other tensor
/// has strictly positive dimensions and exactly shape_size(shape) elements.
template <typename Scalar>
class BasicTensor {
public:
    using value_type = Scalar;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
        : shape_(std::move(shape)) {
        check_shape(shape_);
        data_.assign(static_cast<std::size_t>(shape_size(shape_)), fill);
    }

    BasicTensor(Shape shape, std::vector<Scalar> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape(shape_);
        if (static_cast<Index>(data_.size()) != shape_size(shape_)) {
            throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_to_string(shape_));
        }
    }

    static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
    static BasicTensor zeros_like(const BasicTensor& other) { return BasicTensor(other.shape()); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    Index dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
    Index size() const { return static_cast<Index>(data_.size()); }
    bool empty() const { return data_.empty(); }

    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }
    std::span<Scalar> values() { return data_; }
    std::span<const Scalar> values() const { return data_; }

    Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
    const Scalar& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

    /// NHWC element access for rank-4 tensors.
    Scalar& at(Index n, Index h, Index w, Index c) { return data_[offset4(n, h, w, c)]; }
    const Scalar& at(Index n, Index h, Index w, Index c) const { return data_[offset4(n, h, w, c)]; }

    /// Same elements under a new shape with identical element count.
    BasicTensor reshaped(Shape shape) const& {
        check_reshape(shape);
        return BasicTensor(std::move(shape), data_);
    }
    BasicTensor reshaped(Shape shape) && {
        check_reshape(shape);
        return BasicTensor(std::move(shape), std::move(data_));
    }

    void fill(Scalar value) { std::fill(data_.begin(), data_.end(), value); }

    auto array() { return Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(data_.data(), size()); }
    auto array() const {
        return Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(data_.data(), size());
    }

    /// Row-major matrix view with `cols` columns over the whole buffer.
    auto matrix(Index cols) {
        return Eigen::Map<RowMatrix<Scalar>>(data_.data(), size() / cols, cols);
    }
    auto matrix(Index cols) const {
        return Eigen::Map<const RowMatrix<Scalar>>(data_.data(), size() / cols, cols);
    }

    friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    static void check_shape(const Shape& shape) {
        if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one dimension");
        for (Index d : shape) {
            if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_to_string(shape));
        }
    }

    void check_reshape(const Shape& shape) const {
        check_shape(shape);
        if (shape_size(shape) != size()) {
            throw std::invalid_argument("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
        }
    }

    std::size_t offset4(Index n, Index h, Index w, Index c) const {
        return static_cast<std::size_t>(((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c);
    }

    Shape shape_;
    std::vector<Scalar> data_;
};

using Tensor = BasicTensor<float>;

inline std::string shape_to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace sepnet

#endif  // SEPNET_TENSOR_HPP
