#pragma once

// Differentiable tensor operations. Every model in the library is written
// only in terms of these.

#include <vector>

#include "uad/autograd.hpp"
#include "uad/kernels.hpp"

namespace uad {

using kernels::Padding;

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> scale(const Var<T>& x, T s);
/// x + b where b's shape equals the trailing dims of x (biases, positional embeddings).
template <class T>
Var<T> add_broadcast(const Var<T>& x, const Var<T>& b);

/// Plain 2-D matrix product.
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// x[..., K] @ w[K, N] -> [..., N].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w);
/// Batched product over identical leading dims: a[..., M, K] @ b[..., K, N],
/// or b[..., N, K] transposed when `trans_b`.
template <class T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_b = false);

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape);
template <class T>
Var<T> permute(const Var<T>& x, const std::vector<int>& axes);
template <class T>
Var<T> slice(const Var<T>& x, int axis, std::int64_t start, std::int64_t length);
template <class T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis);

template <class T>
Var<T> softmax(const Var<T>& x, int axis = -1);
/// Normalizes over the last axis. Variance is floored by eps, so constant
/// rows map to beta.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));
/// tanh approximation.
template <class T>
Var<T> gelu(const Var<T>& x);
template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope = T(0.2));
template <class T>
Var<T> sigmoid(const Var<T>& x);

/// While alive, collects the sign of every leaky_relu input evaluated on this
/// thread, in evaluation order. Used by finite-difference checks to detect a
/// stencil that straddles the kink at zero.
class KinkRecorder {
public:
    KinkRecorder();
    ~KinkRecorder();
    KinkRecorder(const KinkRecorder&) = delete;
    KinkRecorder& operator=(const KinkRecorder&) = delete;

    const std::vector<bool>& signs() const { return signs_; }
    static KinkRecorder* active();
    void record(bool positive) { signs_.push_back(positive); }

private:
    std::vector<bool> signs_;
    KinkRecorder* previous_;
};

/// Cross-correlation, x[B, H, W, Cin] with w[k, k, Cin, Cout].
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int stride, Padding padding);
/// Adjoint of a `same` conv2d: x[B, h, w, Cin] with w[k, k, Cout, Cin] gives
/// [B, h*stride, w*stride, Cout].
template <class T>
Var<T> conv2d_transpose(const Var<T>& x, const Var<T>& w, int stride);

template <class T>
Var<T> sum(const Var<T>& x);
template <class T>
Var<T> mean(const Var<T>& x);
/// Mean absolute error; the L1 reconstruction objective.
template <class T>
Var<T> l1_loss(const Var<T>& prediction, const Var<T>& target);

} // namespace uad
