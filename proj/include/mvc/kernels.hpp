#pragma once

#include <cstddef>

#include "mvc/tensor.hpp"

// Data-parallel kernels behind the differentiable ops. Every output element is
// produced by exactly one thread with a fixed summation order, so results are
// bit-identical for any thread count. mvc::reference holds the serial
// versions these are tested and benchmarked against.
namespace mvc::kernels {

// C[M,N] (+)= A[M,K] * B[K,N]; A is addressed as A[i*a_row + k*a_col] so the
// same kernel serves A and A^T.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_row,
          std::size_t a_col, const T* b, T* c, bool accumulate);

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false) {
  gemm(m, n, k, a, k, 1, b, c, accumulate);
}

// C[M,N] (+)= A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false) {
  gemm(m, n, k, a, 1, m, b, c, accumulate);
}

// C[M,N] (+)= A[M,K] * B[N,K]^T as row dot products.
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false);

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t filters, kernel_h, kernel_w;
  std::size_t stride, pad;
  std::size_t out_h, out_w;

  std::size_t patch() const { return channels * kernel_h * kernel_w; }
  std::size_t positions() const { return batch * out_h * out_w; }
};

// Validates an NCHW input against an FCkk kernel and returns the geometry.
ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, std::size_t stride,
                           std::size_t pad);

// col is [patch][batch*out_h*out_w].
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col);
// Accumulates col back into dx.
template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* dx);

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, T* y);

// Either of dx / dw may be null. Both accumulate.
template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw);

}  // namespace mvc::kernels

namespace mvc::reference {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);

// Direct sliding-window cross-correlation.
template <typename T>
void conv2d_forward(const kernels::ConvGeometry& g, const T* x, const T* w, T* y);

template <typename T>
void conv2d_backward(const kernels::ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx,
                     T* dw);

}  // namespace mvc::reference
