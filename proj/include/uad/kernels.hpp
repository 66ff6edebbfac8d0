#pragma once

// Raw compute kernels behind the differentiable ops.
//
// Every kernel exists twice: the OpenMP-parallel version in `uad::kernels`
// used by the library, and a naive serial version in `uad::kernels::reference`
// kept for testing and benchmarking. Parallel versions split work only over
// independent output elements, so results do not depend on the thread count.

#include <cstdint>

namespace uad::kernels {

enum class Padding { same, valid };

/// NHWC / HWIO convolution geometry.
struct ConvGeometry {
    std::int64_t batch = 0;
    std::int64_t in_h = 0, in_w = 0, in_c = 0;
    std::int64_t out_h = 0, out_w = 0, out_c = 0;
    std::int64_t kernel = 0, stride = 1;
    std::int64_t pad_top = 0, pad_left = 0;
};

/// Geometry of a convolution over an input of (batch, h, w, cin) with a
/// k x k x cin x cout filter. `same` uses TensorFlow padding (ceil(h/stride)
/// outputs, extra padding at the bottom/right).
ConvGeometry conv_geometry(std::int64_t batch, std::int64_t h, std::int64_t w, std::int64_t cin,
                           std::int64_t cout, std::int64_t kernel, std::int64_t stride, Padding padding);

/// C[m x n] (+)= op(A) * op(B) with row-major storage. op(A) is m x k.
template <class T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b,
          T* c, bool accumulate);

/// Batched gemm over `batch` independent, contiguous matrix triples.
template <class T>
void batched_gemm(std::int64_t batch, bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
                  const T* a, const T* b, T* c);

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, T* y);
/// dx = conv2d adjoint applied to dy (overwrites dx).
template <class T>
void conv2d_backward_data(const ConvGeometry& g, const T* dy, const T* w, T* dx);
/// dw = gradient of conv2d w.r.t. the filter (overwrites dw).
template <class T>
void conv2d_backward_filter(const ConvGeometry& g, const T* x, const T* dy, T* dw);

/// k x k median filter over an h x w image with edge replication.
void median_filter(const float* in, std::int64_t h, std::int64_t w, int k, float* out);

namespace reference {

template <class T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b,
          T* c, bool accumulate);
template <class T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, T* y);
template <class T>
void conv2d_backward_data(const ConvGeometry& g, const T* dy, const T* w, T* dx);
template <class T>
void conv2d_backward_filter(const ConvGeometry& g, const T* x, const T* dy, T* dw);
void median_filter(const float* in, std::int64_t h, std::int64_t w, int k, float* out);

} // namespace reference

} // namespace uad::kernels
