#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace densefix {

/// Dense multi-dimensional real array, 64-bit values, value semantics.
///
/// The buffer is shared between copies (copy-on-write through builders only),
/// so passing tensors around and capturing them in backward closures is cheap.
/// A tensor may be attached to a gradient tape, in which case node() names its
/// tape node; detached tensors are plain constants.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor from(std::vector<int> shape, std::vector<double> values);
    static Tensor scalar(double value);

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::int64_t size() const;

    std::span<const double> values() const;
    /// Scalar value; throws unless size() == 1.
    double value() const;
    double at(std::initializer_list<int> index) const;

    bool defined() const { return data_ != nullptr; }
    /// True when the tensor participates in gradient flow on some tape.
    bool requires_grad() const { return node_ >= 0; }
    int node() const { return node_; }

    /// Detached copy sharing the same buffer (drops any tape attachment).
    Tensor detached() const;

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    friend class Tape;

    std::vector<int> shape_;
    std::shared_ptr<const std::vector<double>> data_;
    int node_ = -1;
};

std::int64_t shape_size(const std::vector<int>& shape);

}  // namespace densefix
