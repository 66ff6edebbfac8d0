#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "uad/error.hpp"

namespace uad {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major n-dimensional array.
///
/// Value type: copies are deep. The engine is instantiated for float (the
/// working precision) and double (used by finite-difference verification).
template <class T>
class TensorT {
public:
    using value_type = T;

    TensorT() = default;
    explicit TensorT(Shape shape, T fill = T(0));
    TensorT(Shape shape, std::vector<T> data);
    TensorT(Shape shape, std::initializer_list<T> data);

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }
    static TensorT full(Shape shape, T value) { return TensorT(std::move(shape), value); }
    static TensorT scalar(T value) { return TensorT(Shape{1}, value); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    /// Size of axis `axis`; negative values count from the back.
    std::int64_t dim(int axis) const;
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }
    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    template <class... I>
    T& at(I... idx) { return data_[static_cast<std::size_t>(offset({static_cast<std::int64_t>(idx)...}))]; }
    template <class... I>
    const T& at(I... idx) const { return data_[static_cast<std::size_t>(offset({static_cast<std::int64_t>(idx)...}))]; }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool v) { requires_grad_ = v; }

    /// Same data viewed under a new shape with the same element count.
    TensorT reshaped(Shape shape) const;
    void fill(T value);
    bool all_finite() const;

    template <class U>
    TensorT<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return TensorT<U>(shape_, std::move(out));
    }

    friend bool operator==(const TensorT& a, const TensorT& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    std::int64_t offset(std::initializer_list<std::int64_t> idx) const;

    Shape shape_;
    std::vector<T> data_;
    bool requires_grad_ = false;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

/// Throws NumericError naming `where` when `t` holds a NaN or Inf.
template <class T>
void require_finite(const TensorT<T>& t, const std::string& where);

extern template class TensorT<float>;
extern template class TensorT<double>;

} // namespace uad
