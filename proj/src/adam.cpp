#include "uad/adam.hpp"

#include <cmath>

namespace uad {

template <class T>
AdamState<T>::AdamState(const ParameterStore<T>& params, AdamOptions opts) : options(opts) {
    if (!(opts.learning_rate > 0)) throw ConfigError("ADAM learning rate must be positive");
    first_moment.reserve(params.size());
    second_moment.reserve(params.size());
    for (const auto& p : params) {
        first_moment.emplace_back(p.value().shape());
        second_moment.emplace_back(p.value().shape());
    }
}

template <class T>
void adam_step(ParameterStore<T>& params, const Gradients<T>& grads, AdamState<T>& state) {
    if (state.first_moment.size() != params.size())
        throw ShapeError("ADAM state holds " + std::to_string(state.first_moment.size()) + " moments for " +
                         std::to_string(params.size()) + " parameters");
    if (!(state.options.learning_rate > 0)) throw ConfigError("ADAM learning rate must be positive");
    ++state.step;
    const auto& o = state.options;
    const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
    const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
    const T lr = static_cast<T>(o.learning_rate), eps = static_cast<T>(o.epsilon);
    const T c1 = static_cast<T>(1.0 / bc1), c2 = static_cast<T>(1.0 / bc2);

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        if (m.shape() != p.value().shape())
            throw ShapeError("ADAM moment shape " + to_string(m.shape()) + " does not match parameter '" + p.name() +
                             "' " + to_string(p.value().shape()));
        const TensorT<T>* g = grads.find(p);
        if (g && g->shape() != m.shape())
            throw ShapeError("gradient shape " + to_string(g->shape()) + " does not match parameter '" + p.name() +
                             "'");
        auto& w = p.mutable_value();
        for (std::int64_t j = 0; j < w.size(); ++j) {
            const T gj = g ? (*g)[j] : T(0);
            m[j] = b1 * m[j] + (T(1) - b1) * gj;
            v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
            const T mhat = m[j] * c1;
            const T vhat = v[j] * c2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(ParameterStore<float>&, const Gradients<float>&, AdamState<float>&);
template void adam_step(ParameterStore<double>&, const Gradients<double>&, AdamState<double>&);

} // namespace uad
