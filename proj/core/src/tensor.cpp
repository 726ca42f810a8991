#include "densefix/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace densefix {

std::int64_t shape_size(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e < 0) throw std::invalid_argument("Tensor: negative extent");
        n *= e;
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int> shape) {
    return from(std::move(shape), {});
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    const auto n = shape_size(shape);
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<const std::vector<double>>(static_cast<std::size_t>(n), value);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
    const auto n = shape_size(shape);
    if (values.empty()) values.resize(static_cast<std::size_t>(n), 0.0);
    if (static_cast<std::int64_t>(values.size()) != n)
        throw std::invalid_argument("Tensor: data length does not match shape product");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<const std::vector<double>>(std::move(values));
    return t;
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

std::int64_t Tensor::size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

std::span<const double> Tensor::values() const {
    if (!data_) return {};
    return {data_->data(), data_->size()};
}

double Tensor::value() const {
    if (size() != 1) throw std::logic_error("Tensor::value: tensor is not a scalar");
    return (*data_)[0];
}

double Tensor::at(std::initializer_list<int> index) const {
    if (static_cast<int>(index.size()) != ndim())
        throw std::invalid_argument("Tensor::at: wrong number of indices");
    std::int64_t flat = 0;
    int axis = 0;
    for (int i : index) {
        if (i < 0 || i >= shape_[static_cast<std::size_t>(axis)])
            throw std::out_of_range("Tensor::at: index out of bounds");
        flat = flat * shape_[static_cast<std::size_t>(axis)] + i;
        ++axis;
    }
    return (*data_)[static_cast<std::size_t>(flat)];
}

Tensor Tensor::detached() const {
    Tensor t = *this;
    t.node_ = -1;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : values())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace densefix
