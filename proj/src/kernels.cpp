#include "mvc/kernels.hpp"

#include <algorithm>
#include <cstdint>
#include <vector>

#include "mvc/parallel.hpp"

namespace mvc::kernels {

namespace {
constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 256;
}  // namespace

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_row,
          std::size_t a_col, const T* b, T* c, bool accumulate) {
  const std::size_t row_blocks = (m + kTileRows - 1) / kTileRows;
  const std::size_t col_blocks = (n + kTileCols - 1) / kTileCols;
  const auto tiles = static_cast<std::int64_t>(row_blocks * col_blocks);

#pragma omp parallel for schedule(static)
  for (std::int64_t t = 0; t < tiles; ++t) {
    const std::size_t i0 = static_cast<std::size_t>(t) / col_blocks * kTileRows;
    const std::size_t j0 = static_cast<std::size_t>(t) % col_blocks * kTileCols;
    const std::size_t rows = std::min(kTileRows, m - i0);
    const std::size_t cols = std::min(kTileCols, n - j0);
    if (!accumulate) {
      for (std::size_t r = 0; r < rows; ++r) std::fill_n(c + (i0 + r) * n + j0, cols, T(0));
    }
    if (rows == kTileRows) {
      T* __restrict c0 = c + i0 * n + j0;
      T* __restrict c1 = c0 + n;
      T* __restrict c2 = c1 + n;
      T* __restrict c3 = c2 + n;
      for (std::size_t p = 0; p < k; ++p) {
        const T a0 = a[i0 * a_row + p * a_col];
        const T a1 = a[(i0 + 1) * a_row + p * a_col];
        const T a2 = a[(i0 + 2) * a_row + p * a_col];
        const T a3 = a[(i0 + 3) * a_row + p * a_col];
        const T* __restrict bp = b + p * n + j0;
        for (std::size_t j = 0; j < cols; ++j) {
          const T bv = bp[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        T* __restrict cr = c + (i0 + r) * n + j0;
        for (std::size_t p = 0; p < k; ++p) {
          const T av = a[(i0 + r) * a_row + p * a_col];
          const T* __restrict bp = b + p * n + j0;
          for (std::size_t j = 0; j < cols; ++j) cr[j] += av * bp[j];
        }
      }
    }
  }
}

namespace {

// Eight interleaved partial sums, combined pairwise; the order is fixed so the
// result does not depend on how the caller is parallelized.
template <typename T>
T dot8(const T* __restrict x, const T* __restrict y, std::size_t len) {
  T acc[8] = {};
  std::size_t p = 0;
  for (; p + 8 <= len; p += 8) {
    for (std::size_t r = 0; r < 8; ++r) acc[r] += x[p + r] * y[p + r];
  }
  T s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; p < len; ++p) s += x[p] * y[p];
  return s;
}

}  // namespace

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  const auto total = static_cast<std::int64_t>(m * n);
#pragma omp parallel for schedule(static)
  for (std::int64_t idx = 0; idx < total; ++idx) {
    const std::size_t i = static_cast<std::size_t>(idx) / n;
    const std::size_t j = static_cast<std::size_t>(idx) % n;
    const T s = dot8(a + i * k, b + j * k, k);
    c[idx] = accumulate ? c[idx] + s : s;
  }
}

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, std::size_t stride,
                           std::size_t pad) {
  if (input.size() != 4 || kernel.size() != 4) {
    throw ShapeError("conv2d expects NCHW input and FCkk kernel, got " + to_string(input) +
                     " and " + to_string(kernel));
  }
  if (stride < 1) throw ShapeError("conv2d stride must be >= 1");
  if (kernel[1] != input[1]) {
    throw ShapeError("conv2d channel mismatch: input " + to_string(input) + ", kernel " +
                     to_string(kernel));
  }
  ConvGeometry g{};
  g.batch = input[0];
  g.channels = input[1];
  g.height = input[2];
  g.width = input[3];
  g.filters = kernel[0];
  g.kernel_h = kernel[2];
  g.kernel_w = kernel[3];
  g.stride = stride;
  g.pad = pad;
  if (g.kernel_h < 1 || g.kernel_w < 1 || g.kernel_h > g.height + 2 * pad ||
      g.kernel_w > g.width + 2 * pad) {
    throw ShapeError("conv2d kernel " + to_string(kernel) + " larger than padded input " +
                     to_string(input));
  }
  g.out_h = (g.height + 2 * pad - g.kernel_h) / stride + 1;
  g.out_w = (g.width + 2 * pad - g.kernel_w) / stride + 1;
  return g;
}

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const std::size_t positions = g.positions();
  const auto rows = static_cast<std::int64_t>(g.patch());
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::size_t c = static_cast<std::size_t>(r) / (g.kernel_h * g.kernel_w);
    const std::size_t ki = static_cast<std::size_t>(r) / g.kernel_w % g.kernel_h;
    const std::size_t kj = static_cast<std::size_t>(r) % g.kernel_w;
    T* out = col + static_cast<std::size_t>(r) * positions;
    for (std::size_t b = 0; b < g.batch; ++b) {
      const T* plane = x + (b * g.channels + c) * g.height * g.width;
      for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                        static_cast<std::ptrdiff_t>(g.pad);
        const bool row_ok = iy >= 0 && iy < static_cast<std::ptrdiff_t>(g.height);
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                          static_cast<std::ptrdiff_t>(g.pad);
          *out++ = (row_ok && ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width))
                       ? plane[iy * static_cast<std::ptrdiff_t>(g.width) + ix]
                       : T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* dx) {
  const std::size_t positions = g.positions();
  const auto channels = static_cast<std::int64_t>(g.channels);
  // One thread per input channel: each dx plane has a single writer.
#pragma omp parallel for schedule(static)
  for (std::int64_t ch = 0; ch < channels; ++ch) {
    const auto c = static_cast<std::size_t>(ch);
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const T* in = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * positions;
        for (std::size_t b = 0; b < g.batch; ++b) {
          T* plane = dx + (b * g.channels + c) * g.height * g.width;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
              in += g.out_w;
              continue;
            }
            for (std::size_t ox = 0; ox < g.out_w; ++ox, ++in) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                              static_cast<std::ptrdiff_t>(g.pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) {
                plane[iy * static_cast<std::ptrdiff_t>(g.width) + ix] += *in;
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, T* y) {
  const std::size_t positions = g.positions();
  const std::size_t plane = g.out_h * g.out_w;
  std::vector<T> col(g.patch() * positions);
  std::vector<T> out(g.filters * positions);
  im2col(g, x, col.data());
  gemm_nn(g.filters, positions, g.patch(), w, col.data(), out.data());
  // [F][N*OH*OW] -> [N][F][OH*OW]
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t f = 0; f < g.filters; ++f) {
      std::copy_n(out.data() + f * positions + b * plane, plane, y + (b * g.filters + f) * plane);
    }
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw) {
  const std::size_t positions = g.positions();
  const std::size_t plane = g.out_h * g.out_w;
  std::vector<T> grad_out(g.filters * positions);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t f = 0; f < g.filters; ++f) {
      std::copy_n(dy + (b * g.filters + f) * plane, plane,
                  grad_out.data() + f * positions + b * plane);
    }
  }
  std::vector<T> col(g.patch() * positions);
  if (dw) {
    im2col(g, x, col.data());
    gemm_nt(g.filters, g.patch(), positions, grad_out.data(), col.data(), dw, true);
  }
  if (dx) {
    gemm_tn(g.patch(), positions, g.filters, w, grad_out.data(), col.data());
    col2im(g, col.data(), dx);
  }
}

#define MVC_INSTANTIATE_KERNELS(T)                                                           \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t,        \
                        std::size_t, const T*, T*, bool);                                    \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,    \
                           bool);                                                            \
  template void im2col<T>(const ConvGeometry&, const T*, T*);                                \
  template void col2im<T>(const ConvGeometry&, const T*, T*);                                \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, T*);              \
  template void conv2d_backward<T>(const ConvGeometry&, const T*, const T*, const T*, T*, T*);

MVC_INSTANTIATE_KERNELS(float)
MVC_INSTANTIATE_KERNELS(double)
#undef MVC_INSTANTIATE_KERNELS

}  // namespace mvc::kernels
