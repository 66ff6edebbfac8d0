#include "uad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace uad {

namespace {

constexpr std::int64_t kParallelElems = 1 << 16;

template <class T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

int normalize_axis(int axis, int rank, const char* op) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError(std::string(op) + ": axis out of range");
    return axis;
}

template <class T>
bool wants(const Node<T>& n, std::size_t i) {
    return n.inputs[i]->requires_grad;
}

template <class T, class F>
TensorT<T> map(const TensorT<T>& x, F f) {
    TensorT<T> y(x.shape());
    const T* px = x.ptr();
    T* py = y.ptr();
    const std::int64_t n = x.size();
#pragma omp parallel for simd schedule(static) if (n > kParallelElems)
    for (std::int64_t i = 0; i < n; ++i) py[i] = f(px[i]);
    return y;
}

// Row-major strides.
Shape strides_of(const Shape& s) {
    Shape st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

template <class T>
TensorT<T> permute_tensor(const TensorT<T>& x, const std::vector<int>& axes) {
    const Shape& in = x.shape();
    const int r = x.rank();
    Shape out_shape(r);
    for (int i = 0; i < r; ++i) out_shape[i] = in[axes[i]];
    const Shape in_st = strides_of(in);
    // Stride in the input for each output axis.
    Shape st(r);
    for (int i = 0; i < r; ++i) st[i] = in_st[axes[i]];
    TensorT<T> y(out_shape);
    const T* px = x.ptr();
    T* py = y.ptr();
    const std::int64_t inner = out_shape[r - 1];
    const std::int64_t inner_stride = st[r - 1];
    const std::int64_t rows = y.size() / inner;
#pragma omp parallel for schedule(static) if (y.size() > kParallelElems)
    for (std::int64_t row = 0; row < rows; ++row) {
        std::int64_t rem = row;
        std::int64_t src = 0;
        for (int a = r - 2; a >= 0; --a) {
            src += (rem % out_shape[a]) * st[a];
            rem /= out_shape[a];
        }
        T* dst = py + row * inner;
        for (std::int64_t j = 0; j < inner; ++j) dst[j] = px[src + j * inner_stride];
    }
    return y;
}

} // namespace

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape("add", a, b);
    TensorT<T> y(a.shape());
    const T* pa = a.value().ptr();
    const T* pb = b.value().ptr();
    T* py = y.ptr();
    const std::int64_t n = y.size();
#pragma omp parallel for simd schedule(static) if (n > kParallelElems)
    for (std::int64_t i = 0; i < n; ++i) py[i] = pa[i] + pb[i];
    return make_var<T>("add", std::move(y), {a, b}, [](Node<T>& self) {
        accumulate_grad(*self.inputs[0], self.grad);
        accumulate_grad(*self.inputs[1], self.grad);
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape("sub", a, b);
    TensorT<T> y(a.shape());
    const T* pa = a.value().ptr();
    const T* pb = b.value().ptr();
    T* py = y.ptr();
    const std::int64_t n = y.size();
#pragma omp parallel for simd schedule(static) if (n > kParallelElems)
    for (std::int64_t i = 0; i < n; ++i) py[i] = pa[i] - pb[i];
    return make_var<T>("sub", std::move(y), {a, b}, [](Node<T>& self) {
        accumulate_grad(*self.inputs[0], self.grad);
        if (wants(self, 1)) accumulate_grad(*self.inputs[1], map(self.grad, [](T g) { return -g; }));
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape("mul", a, b);
    TensorT<T> y(a.shape());
    const T* pa = a.value().ptr();
    const T* pb = b.value().ptr();
    T* py = y.ptr();
    const std::int64_t n = y.size();
#pragma omp parallel for simd schedule(static) if (n > kParallelElems)
    for (std::int64_t i = 0; i < n; ++i) py[i] = pa[i] * pb[i];
    return make_var<T>("mul", std::move(y), {a, b}, [](Node<T>& self) {
        const std::int64_t n = self.grad.size();
        for (std::size_t k = 0; k < 2; ++k) {
            if (!wants(self, k)) continue;
            const T* other = self.inputs[1 - k]->value.ptr();
            TensorT<T> g(self.grad.shape());
            const T* pg = self.grad.ptr();
            T* out = g.ptr();
            for (std::int64_t i = 0; i < n; ++i) out[i] = pg[i] * other[i];
            accumulate_grad(*self.inputs[k], std::move(g));
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& x, T s) {
    return make_var<T>("scale", map(x.value(), [s](T v) { return v * s; }), {x}, [s](Node<T>& self) {
        accumulate_grad(*self.inputs[0], map(self.grad, [s](T g) { return g * s; }));
    });
}

template <class T>
Var<T> add_broadcast(const Var<T>& x, const Var<T>& b) {
    const Shape& xs = x.shape();
    const Shape& bs = b.shape();
    if (bs.size() > xs.size() || !std::equal(bs.rbegin(), bs.rend(), xs.rbegin()))
        throw ShapeError("add_broadcast: " + to_string(bs) + " is not a trailing shape of " + to_string(xs));
    const std::int64_t inner = b.value().size();
    const std::int64_t outer = x.value().size() / inner;
    TensorT<T> y(xs);
    const T* px = x.value().ptr();
    const T* pb = b.value().ptr();
    T* py = y.ptr();
#pragma omp parallel for schedule(static) if (y.size() > kParallelElems)
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) py[o * inner + i] = px[o * inner + i] + pb[i];
    return make_var<T>("add_broadcast", std::move(y), {x, b}, [inner, outer](Node<T>& self) {
        accumulate_grad(*self.inputs[0], self.grad);
        if (!wants(self, 1)) return;
        TensorT<T> gb(self.inputs[1]->value.shape());
        const T* pg = self.grad.ptr();
        T* out = gb.ptr();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < inner; ++i) out[i] += pg[o * inner + i];
        accumulate_grad(*self.inputs[1], std::move(gb));
    });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    return linear(a, b);
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w) {
    if (w.rank() != 2 || x.rank() < 1 || x.dim(-1) != w.dim(0))
        throw ShapeError("linear: incompatible shapes " + to_string(x.shape()) + " and " + to_string(w.shape()));
    const std::int64_t k = w.dim(0);
    const std::int64_t n = w.dim(1);
    const std::int64_t m = x.value().size() / k;
    Shape out_shape = x.shape();
    out_shape.back() = n;
    TensorT<T> y(out_shape);
    kernels::gemm(false, false, m, n, k, x.value().ptr(), w.value().ptr(), y.ptr(), false);
    return make_var<T>("linear", std::move(y), {x, w}, [m, n, k](Node<T>& self) {
        const auto& xv = self.inputs[0]->value;
        const auto& wv = self.inputs[1]->value;
        if (wants(self, 0)) {
            TensorT<T> gx(xv.shape());
            kernels::gemm(false, true, m, k, n, self.grad.ptr(), wv.ptr(), gx.ptr(), false);
            accumulate_grad(*self.inputs[0], std::move(gx));
        }
        if (wants(self, 1)) {
            TensorT<T> gw(wv.shape());
            kernels::gemm(true, false, k, n, m, xv.ptr(), self.grad.ptr(), gw.ptr(), false);
            accumulate_grad(*self.inputs[1], std::move(gw));
        }
    });
}

template <class T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_b) {
    const int r = a.rank();
    if (r < 2 || b.rank() != r || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
        throw ShapeError("bmm: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    const std::int64_t m = a.dim(-2);
    const std::int64_t k = a.dim(-1);
    const std::int64_t n = trans_b ? b.dim(-2) : b.dim(-1);
    if ((trans_b ? b.dim(-1) : b.dim(-2)) != k)
        throw ShapeError("bmm: inner dimensions differ for " + to_string(a.shape()) + " and " + to_string(b.shape()));
    const std::int64_t batch = a.value().size() / (m * k);
    Shape out_shape = a.shape();
    out_shape.back() = n;
    TensorT<T> y(out_shape);
    kernels::batched_gemm(batch, false, trans_b, m, n, k, a.value().ptr(), b.value().ptr(), y.ptr());
    return make_var<T>("bmm", std::move(y), {a, b}, [batch, m, n, k, trans_b](Node<T>& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        const T* g = self.grad.ptr();
        if (wants(self, 0)) {
            TensorT<T> ga(av.shape());
            kernels::batched_gemm(batch, false, !trans_b, m, k, n, g, bv.ptr(), ga.ptr());
            accumulate_grad(*self.inputs[0], std::move(ga));
        }
        if (wants(self, 1)) {
            TensorT<T> gb(bv.shape());
            if (trans_b)
                kernels::batched_gemm(batch, true, false, n, k, m, g, av.ptr(), gb.ptr());
            else
                kernels::batched_gemm(batch, true, false, k, n, m, av.ptr(), g, gb.ptr());
            accumulate_grad(*self.inputs[1], std::move(gb));
        }
    });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    TensorT<T> y = x.value().reshaped(std::move(shape));
    return make_var<T>("reshape", std::move(y), {x}, [](Node<T>& self) {
        accumulate_grad(*self.inputs[0], self.grad.reshaped(self.inputs[0]->value.shape()));
    });
}

template <class T>
Var<T> permute(const Var<T>& x, const std::vector<int>& axes) {
    const int r = x.rank();
    std::vector<int> sorted = axes;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> iota(static_cast<std::size_t>(r));
    std::iota(iota.begin(), iota.end(), 0);
    if (sorted != iota) throw ShapeError("permute: axes are not a permutation of the tensor rank");
    std::vector<int> inverse(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) inverse[axes[i]] = i;
    return make_var<T>("permute", permute_tensor(x.value(), axes), {x}, [inverse](Node<T>& self) {
        accumulate_grad(*self.inputs[0], permute_tensor(self.grad, inverse));
    });
}

template <class T>
Var<T> slice(const Var<T>& x, int axis, std::int64_t start, std::int64_t length) {
    axis = normalize_axis(axis, x.rank(), "slice");
    const Shape& s = x.shape();
    if (start < 0 || length <= 0 || start + length > s[axis]) throw ShapeError("slice: range out of bounds");
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < x.rank(); ++i) inner *= s[i];
    const std::int64_t full = s[axis];
    Shape out_shape = s;
    out_shape[axis] = length;
    TensorT<T> y(out_shape);
    const T* px = x.value().ptr();
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(px + (o * full + start) * inner, length * inner, y.ptr() + o * length * inner);
    return make_var<T>("slice", std::move(y), {x}, [outer, inner, full, start, length](Node<T>& self) {
        TensorT<T> g(self.inputs[0]->value.shape());
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(self.grad.ptr() + o * length * inner, length * inner, g.ptr() + (o * full + start) * inner);
        accumulate_grad(*self.inputs[0], std::move(g));
    });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    axis = normalize_axis(axis, xs[0].rank(), "concat");
    Shape out_shape = xs[0].shape();
    std::vector<std::int64_t> widths;
    std::int64_t total = 0;
    for (const auto& v : xs) {
        Shape s = v.shape();
        if (static_cast<int>(s.size()) != xs[0].rank()) throw ShapeError("concat: rank mismatch");
        const std::int64_t w = s[axis];
        s[axis] = out_shape[axis];
        if (s != out_shape) throw ShapeError("concat: shapes differ outside the concatenation axis");
        widths.push_back(w);
        total += w;
    }
    out_shape[axis] = total;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[i];
    for (int i = axis + 1; i < static_cast<int>(out_shape.size()); ++i) inner *= out_shape[i];
    TensorT<T> y(out_shape);
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const T* px = xs[k].value().ptr();
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(px + o * widths[k] * inner, widths[k] * inner, y.ptr() + (o * total + offset) * inner);
        offset += widths[k];
    }
    return make_var<T>("concat", std::move(y), xs, [widths, outer, inner, total](Node<T>& self) {
        std::int64_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (wants(self, k)) {
                TensorT<T> g(self.inputs[k]->value.shape());
                for (std::int64_t o = 0; o < outer; ++o)
                    std::copy_n(self.grad.ptr() + (o * total + off) * inner, widths[k] * inner,
                                g.ptr() + o * widths[k] * inner);
                accumulate_grad(*self.inputs[k], std::move(g));
            }
            off += widths[k];
        }
    });
}

template <class T>
Var<T> softmax(const Var<T>& x, int axis) {
    axis = normalize_axis(axis, x.rank(), "softmax");
    const Shape& s = x.shape();
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < x.rank(); ++i) inner *= s[i];
    const std::int64_t len = s[axis];
    TensorT<T> y(s);
    const T* px = x.value().ptr();
    T* py = y.ptr();
#pragma omp parallel for schedule(static) if (y.size() > kParallelElems)
    for (std::int64_t line = 0; line < outer * inner; ++line) {
        const std::int64_t base = (line / inner) * len * inner + line % inner;
        T mx = px[base];
        for (std::int64_t j = 1; j < len; ++j) mx = std::max(mx, px[base + j * inner]);
        T total = 0;
        for (std::int64_t j = 0; j < len; ++j) {
            const T e = std::exp(px[base + j * inner] - mx);
            py[base + j * inner] = e;
            total += e;
        }
        const T inv = T(1) / total;
        for (std::int64_t j = 0; j < len; ++j) py[base + j * inner] *= inv;
    }
    return make_var<T>("softmax", std::move(y), {x}, [outer, inner, len](Node<T>& self) {
        TensorT<T> g(self.value.shape());
        const T* py = self.value.ptr();
        const T* pg = self.grad.ptr();
        T* out = g.ptr();
#pragma omp parallel for schedule(static) if (g.size() > kParallelElems)
        for (std::int64_t line = 0; line < outer * inner; ++line) {
            const std::int64_t base = (line / inner) * len * inner + line % inner;
            T dot = 0;
            for (std::int64_t j = 0; j < len; ++j) dot += pg[base + j * inner] * py[base + j * inner];
            for (std::int64_t j = 0; j < len; ++j)
                out[base + j * inner] = py[base + j * inner] * (pg[base + j * inner] - dot);
        }
        accumulate_grad(*self.inputs[0], std::move(g));
    });
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
    const std::int64_t k = x.dim(-1);
    if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != k || beta.dim(0) != k)
        throw ShapeError("layer_norm: gamma/beta must have length " + std::to_string(k) + ", got " +
                         to_string(gamma.shape()) + " and " + to_string(beta.shape()));
    const std::int64_t rows = x.value().size() / k;
    TensorT<T> y(x.shape());
    // Normalized values and reciprocal std are kept for the backward pass.
    auto xhat = std::make_shared<TensorT<T>>(x.shape());
    auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
    const T* px = x.value().ptr();
    const T* pg = gamma.value().ptr();
    const T* pb = beta.value().ptr();
    T* py = y.ptr();
    T* ph = xhat->ptr();
#pragma omp parallel for schedule(static) if (y.size() > kParallelElems)
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* row = px + r * k;
        T mu = 0;
        for (std::int64_t j = 0; j < k; ++j) mu += row[j];
        mu /= T(k);
        T var = 0;
        for (std::int64_t j = 0; j < k; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= T(k);
        const T rs = T(1) / std::sqrt(var + eps);
        (*rstd)[static_cast<std::size_t>(r)] = rs;
        for (std::int64_t j = 0; j < k; ++j) {
            const T h = (row[j] - mu) * rs;
            ph[r * k + j] = h;
            py[r * k + j] = h * pg[j] + pb[j];
        }
    }
    return make_var<T>("layer_norm", std::move(y), {x, gamma, beta}, [xhat, rstd, rows, k](Node<T>& self) {
        const T* pg = self.grad.ptr();
        const T* ph = xhat->ptr();
        const T* gam = self.inputs[1]->value.ptr();
        if (wants(self, 0)) {
            TensorT<T> gx(self.value.shape());
            T* out = gx.ptr();
#pragma omp parallel for schedule(static) if (gx.size() > kParallelElems)
            for (std::int64_t r = 0; r < rows; ++r) {
                T m1 = 0, m2 = 0;
                for (std::int64_t j = 0; j < k; ++j) {
                    const T d = pg[r * k + j] * gam[j];
                    m1 += d;
                    m2 += d * ph[r * k + j];
                }
                m1 /= T(k);
                m2 /= T(k);
                const T rs = (*rstd)[static_cast<std::size_t>(r)];
                for (std::int64_t j = 0; j < k; ++j)
                    out[r * k + j] = rs * (pg[r * k + j] * gam[j] - m1 - ph[r * k + j] * m2);
            }
            accumulate_grad(*self.inputs[0], std::move(gx));
        }
        if (wants(self, 1) || wants(self, 2)) {
            TensorT<T> ggam(Shape{k});
            TensorT<T> gbeta(Shape{k});
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t j = 0; j < k; ++j) {
                    ggam[j] += pg[r * k + j] * ph[r * k + j];
                    gbeta[j] += pg[r * k + j];
                }
            accumulate_grad(*self.inputs[1], std::move(ggam));
            accumulate_grad(*self.inputs[2], std::move(gbeta));
        }
    });
}

template <class T>
Var<T> gelu(const Var<T>& x) {
    constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T a = T(0.044715);
    auto f = [](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v))); };
    return make_var<T>("gelu", map(x.value(), f), {x}, [](Node<T>& self) {
        const auto& xv = self.inputs[0]->value;
        TensorT<T> g(xv.shape());
        const T* px = xv.ptr();
        const T* pg = self.grad.ptr();
        T* out = g.ptr();
        const std::int64_t n = g.size();
#pragma omp parallel for schedule(static) if (n > kParallelElems)
        for (std::int64_t i = 0; i < n; ++i) {
            const T v = px[i];
            const T t = std::tanh(c * (v + a * v * v * v));
            const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
            out[i] = pg[i] * d;
        }
        accumulate_grad(*self.inputs[0], std::move(g));
    });
}

namespace {
thread_local KinkRecorder* kink_recorder = nullptr;
} // namespace

KinkRecorder::KinkRecorder() : previous_(kink_recorder) { kink_recorder = this; }
KinkRecorder::~KinkRecorder() { kink_recorder = previous_; }
KinkRecorder* KinkRecorder::active() { return kink_recorder; }

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
    if (auto* rec = KinkRecorder::active())
        for (T v : x.value().data()) rec->record(v > T(0));
    return make_var<T>("leaky_relu", map(x.value(), [slope](T v) { return v > T(0) ? v : slope * v; }), {x},
                       [slope](Node<T>& self) {
                           const auto& xv = self.inputs[0]->value;
                           TensorT<T> g(xv.shape());
                           const T* px = xv.ptr();
                           const T* pg = self.grad.ptr();
                           T* out = g.ptr();
                           for (std::int64_t i = 0; i < g.size(); ++i) out[i] = px[i] > T(0) ? pg[i] : slope * pg[i];
                           accumulate_grad(*self.inputs[0], std::move(g));
                       });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
    auto f = [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
    };
    return make_var<T>("sigmoid", map(x.value(), f), {x}, [](Node<T>& self) {
        TensorT<T> g(self.value.shape());
        const T* py = self.value.ptr();
        const T* pg = self.grad.ptr();
        T* out = g.ptr();
        for (std::int64_t i = 0; i < g.size(); ++i) out[i] = pg[i] * py[i] * (T(1) - py[i]);
        accumulate_grad(*self.inputs[0], std::move(g));
    });
}

namespace {

void check_conv_args(const Shape& xs, const Shape& ws, int stride, std::int64_t in_channels_axis_value,
                     const char* op) {
    if (xs.size() != 4) throw ShapeError(std::string(op) + ": input must be [B, H, W, C], got " + to_string(xs));
    if (ws.size() != 4 || ws[0] != ws[1])
        throw ShapeError(std::string(op) + ": filter must be [k, k, Cin, Cout], got " + to_string(ws));
    if (ws[0] % 2 == 0) throw ShapeError(std::string(op) + ": kernel size must be odd, got " + std::to_string(ws[0]));
    if (stride != 1 && stride != 2) throw ShapeError(std::string(op) + ": stride must be 1 or 2");
    if (xs[3] != in_channels_axis_value)
        throw ShapeError(std::string(op) + ": channel mismatch, input has " + std::to_string(xs[3]) +
                         " channels but filter expects " + std::to_string(in_channels_axis_value));
}

} // namespace

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int stride, Padding padding) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    check_conv_args(xs, ws, stride, ws.size() == 4 ? ws[2] : -1, "conv2d");
    const auto g = kernels::conv_geometry(xs[0], xs[1], xs[2], xs[3], ws[3], ws[0], stride, padding);
    TensorT<T> y(Shape{g.batch, g.out_h, g.out_w, g.out_c});
    kernels::conv2d_forward(g, x.value().ptr(), w.value().ptr(), y.ptr());
    return make_var<T>("conv2d", std::move(y), {x, w}, [g](Node<T>& self) {
        if (wants(self, 0)) {
            TensorT<T> gx(self.inputs[0]->value.shape());
            kernels::conv2d_backward_data(g, self.grad.ptr(), self.inputs[1]->value.ptr(), gx.ptr());
            accumulate_grad(*self.inputs[0], std::move(gx));
        }
        if (wants(self, 1)) {
            TensorT<T> gw(self.inputs[1]->value.shape());
            kernels::conv2d_backward_filter(g, self.inputs[0]->value.ptr(), self.grad.ptr(), gw.ptr());
            accumulate_grad(*self.inputs[1], std::move(gw));
        }
    });
}

template <class T>
Var<T> conv2d_transpose(const Var<T>& x, const Var<T>& w, int stride) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    check_conv_args(xs, ws, stride, ws.size() == 4 ? ws[3] : -1, "conv2d_transpose");
    // The forward conv this op is the adjoint of: [B, h*s, w*s, Cout] -> [B, h, w, Cin].
    const auto g =
        kernels::conv_geometry(xs[0], xs[1] * stride, xs[2] * stride, ws[2], ws[3], ws[0], stride, Padding::same);
    TensorT<T> y(Shape{g.batch, g.in_h, g.in_w, g.in_c});
    kernels::conv2d_backward_data(g, x.value().ptr(), w.value().ptr(), y.ptr());
    return make_var<T>("conv2d_transpose", std::move(y), {x, w}, [g](Node<T>& self) {
        if (wants(self, 0)) {
            TensorT<T> gx(self.inputs[0]->value.shape());
            kernels::conv2d_forward(g, self.grad.ptr(), self.inputs[1]->value.ptr(), gx.ptr());
            accumulate_grad(*self.inputs[0], std::move(gx));
        }
        if (wants(self, 1)) {
            TensorT<T> gw(self.inputs[1]->value.shape());
            kernels::conv2d_backward_filter(g, self.grad.ptr(), self.inputs[0]->value.ptr(), gw.ptr());
            accumulate_grad(*self.inputs[1], std::move(gw));
        }
    });
}

template <class T>
Var<T> sum(const Var<T>& x) {
    T s = 0;
    for (const T v : x.value().data()) s += v;
    return make_var<T>("sum", TensorT<T>::scalar(s), {x}, [](Node<T>& self) {
        accumulate_grad(*self.inputs[0], TensorT<T>(self.inputs[0]->value.shape(), self.grad[0]));
    });
}

template <class T>
Var<T> mean(const Var<T>& x) {
    const T n = static_cast<T>(x.value().size());
    T s = 0;
    for (const T v : x.value().data()) s += v;
    return make_var<T>("mean", TensorT<T>::scalar(s / n), {x}, [n](Node<T>& self) {
        accumulate_grad(*self.inputs[0], TensorT<T>(self.inputs[0]->value.shape(), self.grad[0] / n));
    });
}

template <class T>
Var<T> l1_loss(const Var<T>& prediction, const Var<T>& target) {
    require_same_shape("l1_loss", prediction, target);
    const std::int64_t n = prediction.value().size();
    const T* pp = prediction.value().ptr();
    const T* pt = target.value().ptr();
    T s = 0;
    for (std::int64_t i = 0; i < n; ++i) s += std::abs(pp[i] - pt[i]);
    return make_var<T>("l1_loss", TensorT<T>::scalar(s / T(n)), {prediction, target}, [n](Node<T>& self) {
        const T* pp = self.inputs[0]->value.ptr();
        const T* pt = self.inputs[1]->value.ptr();
        const T scale = self.grad[0] / T(n);
        TensorT<T> g(self.inputs[0]->value.shape());
        T* out = g.ptr();
        for (std::int64_t i = 0; i < n; ++i) {
            const T d = pp[i] - pt[i];
            out[i] = d > T(0) ? scale : (d < T(0) ? -scale : T(0));
        }
        if (wants(self, 1)) {
            TensorT<T> neg(g.shape());
            for (std::int64_t i = 0; i < n; ++i) neg[i] = -out[i];
            accumulate_grad(*self.inputs[1], std::move(neg));
        }
        accumulate_grad(*self.inputs[0], std::move(g));
    });
}

#define UAD_INSTANTIATE_OPS(T)                                                             \
    template Var<T> add(const Var<T>&, const Var<T>&);                                     \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                     \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                     \
    template Var<T> scale(const Var<T>&, T);                                               \
    template Var<T> add_broadcast(const Var<T>&, const Var<T>&);                           \
    template Var<T> matmul(const Var<T>&, const Var<T>&);                                  \
    template Var<T> linear(const Var<T>&, const Var<T>&);                                  \
    template Var<T> bmm(const Var<T>&, const Var<T>&, bool);                               \
    template Var<T> reshape(const Var<T>&, Shape);                                         \
    template Var<T> permute(const Var<T>&, const std::vector<int>&);                       \
    template Var<T> slice(const Var<T>&, int, std::int64_t, std::int64_t);                 \
    template Var<T> concat(const std::vector<Var<T>>&, int);                               \
    template Var<T> softmax(const Var<T>&, int);                                           \
    template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);            \
    template Var<T> gelu(const Var<T>&);                                                   \
    template Var<T> leaky_relu(const Var<T>&, T);                                          \
    template Var<T> sigmoid(const Var<T>&);                                                \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, int, Padding);                    \
    template Var<T> conv2d_transpose(const Var<T>&, const Var<T>&, int);                   \
    template Var<T> sum(const Var<T>&);                                                    \
    template Var<T> mean(const Var<T>&);                                                   \
    template Var<T> l1_loss(const Var<T>&, const Var<T>&);

UAD_INSTANTIATE_OPS(float)
UAD_INSTANTIATE_OPS(double)

#undef UAD_INSTANTIATE_OPS

} // namespace uad
