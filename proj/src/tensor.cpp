#include "uad/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace uad {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    if (shape.size() == 1) os << ',';
    os << ')';
    return os.str();
}

namespace {
void check_shape(const Shape& shape) {
    for (auto d : shape)
        if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
}
} // namespace

template <class T>
TensorT<T>::TensorT(Shape shape, T fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(static_cast<std::size_t>(numel(shape_)), fill);
}

template <class T>
TensorT<T>::TensorT(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (numel(shape_) != static_cast<std::int64_t>(data_.size()))
        throw ShapeError("shape " + to_string(shape_) + " does not match " + std::to_string(data_.size()) +
                         " values");
}

template <class T>
TensorT<T>::TensorT(Shape shape, std::initializer_list<T> data)
    : TensorT(std::move(shape), std::vector<T>(data)) {}

template <class T>
std::int64_t TensorT<T>::dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
    return shape_[static_cast<std::size_t>(axis)];
}

template <class T>
TensorT<T> TensorT<T>::reshaped(Shape shape) const {
    if (numel(shape) != size())
        throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    return TensorT(std::move(shape), data_);
}

template <class T>
void TensorT<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template <class T>
bool TensorT<T>::all_finite() const {
    for (const T v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

template <class T>
std::int64_t TensorT<T>::offset(std::initializer_list<std::int64_t> idx) const {
    if (static_cast<int>(idx.size()) != rank())
        throw ShapeError("index rank " + std::to_string(idx.size()) + " does not match shape " + to_string(shape_));
    std::int64_t off = 0;
    std::size_t a = 0;
    for (auto i : idx) {
        off = off * shape_[a] + i;
        ++a;
    }
    return off;
}

template <class T>
void require_finite(const TensorT<T>& t, const std::string& where) {
    if (!t.all_finite()) throw NumericError("non-finite value in " + where);
}

template class TensorT<float>;
template class TensorT<double>;
template void require_finite(const TensorT<float>&, const std::string&);
template void require_finite(const TensorT<double>&, const std::string&);

} // namespace uad
