#include <cstddef>

#include "mvc/kernels.hpp"

namespace mvc::reference {

using kernels::ConvGeometry;

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

namespace {

template <typename T>
bool input_at(const ConvGeometry& g, std::size_t oy, std::size_t ox, std::size_t ki,
              std::size_t kj, std::size_t& iy, std::size_t& ix) {
  const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
  const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
  if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(g.height) ||
      x >= static_cast<std::ptrdiff_t>(g.width)) {
    return false;
  }
  iy = static_cast<std::size_t>(y);
  ix = static_cast<std::size_t>(x);
  return true;
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, T* y) {
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t f = 0; f < g.filters; ++f)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          T s = 0;
          for (std::size_t c = 0; c < g.channels; ++c)
            for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
              for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                std::size_t iy = 0, ix = 0;
                if (!input_at<T>(g, oy, ox, ki, kj, iy, ix)) continue;
                s += x[((b * g.channels + c) * g.height + iy) * g.width + ix] *
                     w[((f * g.channels + c) * g.kernel_h + ki) * g.kernel_w + kj];
              }
          y[((b * g.filters + f) * g.out_h + oy) * g.out_w + ox] = s;
        }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw) {
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t f = 0; f < g.filters; ++f)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          const T gy = dy[((b * g.filters + f) * g.out_h + oy) * g.out_w + ox];
          for (std::size_t c = 0; c < g.channels; ++c)
            for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
              for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                std::size_t iy = 0, ix = 0;
                if (!input_at<T>(g, oy, ox, ki, kj, iy, ix)) continue;
                const std::size_t xi = ((b * g.channels + c) * g.height + iy) * g.width + ix;
                const std::size_t wi = ((f * g.channels + c) * g.kernel_h + ki) * g.kernel_w + kj;
                if (dx) dx[xi] += gy * w[wi];
                if (dw) dw[wi] += gy * x[xi];
              }
        }
}

template void gemm_nn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*);
template void gemm_nn<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
template void conv2d_forward<float>(const ConvGeometry&, const float*, const float*, float*);
template void conv2d_forward<double>(const ConvGeometry&, const double*, const double*, double*);
template void conv2d_backward<float>(const ConvGeometry&, const float*, const float*, const float*, float*, float*);
template void conv2d_backward<double>(const ConvGeometry&, const double*, const double*, const double*, double*, double*);

}  // namespace mvc::reference
