#pragma once

#include <cstdint>
#include <vector>

#include "uad/autograd.hpp"

namespace uad {

struct AdamOptions {
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// First/second moment estimates aligned with a ParameterStore's order.
template <class T>
struct AdamState {
    AdamOptions options;
    std::vector<TensorT<T>> first_moment;
    std::vector<TensorT<T>> second_moment;
    std::int64_t step = 0;

    AdamState() = default;
    AdamState(const ParameterStore<T>& params, AdamOptions opts);
};

/// One bias-corrected ADAM update of every parameter in `params`.
/// Parameters without a gradient are treated as having a zero gradient.
template <class T>
void adam_step(ParameterStore<T>& params, const Gradients<T>& grads, AdamState<T>& state);

extern template struct AdamState<float>;
extern template struct AdamState<double>;

} // namespace uad
