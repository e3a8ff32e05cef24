#include "mvc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>

#include "mvc/kernels.hpp"
#include "mvc/parallel.hpp"

namespace mvc::ops {

namespace {

struct AxisView {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <typename T>
void accumulate_into(const Tensor<T>& dst, std::span<const T> g) {
  if (!dst.requires_grad()) return;
  auto d = dst.grad();
  for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
}

}  // namespace

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, std::size_t stride,
                 std::size_t pad) {
  const auto g = kernels::conv_geometry(x.shape(), w.shape(), stride, pad);
  Tensor<T> y({g.batch, g.filters, g.out_h, g.out_w});
  kernels::conv2d_forward(g, x.ptr(), w.ptr(), y.ptr());
  y.check_finite("conv2d");
  if (tape.should_record({&x, &w})) {
    tape.record("conv2d", {x, w}, y, [x, w, y, g]() mutable {
      T* dx = x.requires_grad() ? x.grad().data() : nullptr;
      T* dw = w.requires_grad() ? w.grad().data() : nullptr;
      kernels::conv2d_backward(g, x.ptr(), w.ptr(), y.grad().data(), dx, dw);
    });
  }
  return y;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const bool on = x[i] > T(0);
    y[i] = on ? x[i] : T(0);
    h = (h ^ static_cast<std::uint64_t>(on)) * 1099511628211ULL;
  }
  tape.mix_activation_pattern(h);
  if (tape.should_record({&x})) {
    tape.record("relu", {x}, y, [x, y]() mutable {
      auto dy = y.grad();
      auto dx = x.grad();
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (x[i] > T(0)) dx[i] += dy[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(w.shape()));
  }
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (bias.defined() && bias.shape() != Shape{out}) {
    throw ShapeError("linear: bias shape " + to_string(bias.shape()));
  }
  Tensor<T> y({n, out});
  kernels::gemm_nt(n, out, in, x.ptr(), w.ptr(), y.ptr());
  if (bias.defined()) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out; ++j) y[i * out + j] += bias[j];
  }
  y.check_finite("linear");
  if (tape.should_record({&x, &w, &bias})) {
    tape.record("linear", {x, w, bias}, y, [x, w, bias, y, n, in, out]() mutable {
      const T* dy = y.grad().data();
      if (x.requires_grad()) kernels::gemm_nn(n, in, out, dy, w.ptr(), x.grad().data(), true);
      if (w.requires_grad()) kernels::gemm_tn(out, in, n, dy, x.ptr(), w.grad().data(), true);
      if (bias.defined() && bias.requires_grad()) {
        auto db = bias.grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < out; ++j) db[j] += dy[i * out + j];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> avg_pool2d(Tape<T>& tape, const Tensor<T>& x, std::size_t size) {
  if (x.rank() != 4 || size < 1 || x.dim(2) < size || x.dim(3) < size) {
    throw ShapeError("avg_pool2d: window " + std::to_string(size) + " on " + to_string(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / size, ow = w / size;
  const T inv = T(1) / static_cast<T>(size * size);
  Tensor<T> y({x.dim(0), x.dim(1), oh, ow});
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T s = 0;
        for (std::size_t i = 0; i < size; ++i)
          for (std::size_t j = 0; j < size; ++j) s += x[(p * h + oy * size + i) * w + ox * size + j];
        y[(p * oh + oy) * ow + ox] = s * inv;
      }
  if (tape.should_record({&x})) {
    tape.record("avg_pool2d", {x}, y, [x, y, planes, h, w, oh, ow, size, inv]() mutable {
      auto dy = y.grad();
      auto dx = x.grad();
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const T g = dy[(p * oh + oy) * ow + ox] * inv;
            for (std::size_t i = 0; i < size; ++i)
              for (std::size_t j = 0; j < size; ++j) dx[(p * h + oy * size + i) * w + ox * size + j] += g;
          }
    });
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects NCHW, got " + to_string(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
  const T inv = T(1) / static_cast<T>(area);
  Tensor<T> y({x.dim(0), x.dim(1)});
  for (std::size_t p = 0; p < planes; ++p) {
    T s = 0;
    for (std::size_t i = 0; i < area; ++i) s += x[p * area + i];
    y[p] = s * inv;
  }
  if (tape.should_record({&x})) {
    tape.record("global_avg_pool", {x}, y, [x, y, planes, area, inv]() mutable {
      auto dy = y.grad();
      auto dx = x.grad();
      for (std::size_t p = 0; p < planes; ++p) {
        const T g = dy[p] * inv;
        for (std::size_t i = 0; i < area; ++i) dx[p * area + i] += g;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> batch_norm2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma,
                       const Tensor<T>& beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                       const BatchNormOptions& opts) {
  if (x.rank() != 4) throw ShapeError("batch_norm2d expects NCHW, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), area = x.dim(2) * x.dim(3);
  const Shape per_channel{c};
  if (gamma.shape() != per_channel || beta.shape() != per_channel ||
      running_mean.shape() != per_channel || running_var.shape() != per_channel) {
    throw ShapeError("batch_norm2d: parameter shapes must be [" + std::to_string(c) + "]");
  }
  const std::size_t count = n * area;
  std::vector<T> mean(c), inv_std(c);
  if (opts.training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T s = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < area; ++i) s += x[(b * c + ch) * area + i];
      const T mu = s / static_cast<T>(count);
      T ss = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < area; ++i) {
          const T d = x[(b * c + ch) * area + i] - mu;
          ss += d * d;
        }
      const T var = ss / static_cast<T>(count);
      mean[ch] = mu;
      inv_std[ch] = T(1) / std::sqrt(var + static_cast<T>(opts.eps));
      const T unbiased = count > 1 ? ss / static_cast<T>(count - 1) : var;
      const auto m = static_cast<T>(opts.momentum);
      running_mean[ch] = (T(1) - m) * running_mean[ch] + m * mu;
      running_var[ch] = (T(1) - m) * running_var[ch] + m * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      inv_std[ch] = T(1) / std::sqrt(running_var[ch] + static_cast<T>(opts.eps));
    }
  }
  Tensor<T> xhat(x.shape());
  Tensor<T> y(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < area; ++i) {
        const std::size_t idx = (b * c + ch) * area + i;
        xhat[idx] = (x[idx] - mean[ch]) * inv_std[ch];
        y[idx] = gamma[ch] * xhat[idx] + beta[ch];
      }
  y.check_finite("batch_norm2d");
  if (tape.should_record({&x, &gamma, &beta})) {
    const bool training = opts.training;
    tape.record("batch_norm2d", {x, gamma, beta}, y,
                [x, gamma, beta, y, xhat, inv_std, n, c, area, count, training]() mutable {
                  auto dy = y.grad();
                  for (std::size_t ch = 0; ch < c; ++ch) {
                    T sum_dy = 0, sum_dy_xhat = 0;
                    for (std::size_t b = 0; b < n; ++b)
                      for (std::size_t i = 0; i < area; ++i) {
                        const std::size_t idx = (b * c + ch) * area + i;
                        sum_dy += dy[idx];
                        sum_dy_xhat += dy[idx] * xhat[idx];
                      }
                    if (gamma.requires_grad()) gamma.grad()[ch] += sum_dy_xhat;
                    if (beta.requires_grad()) beta.grad()[ch] += sum_dy;
                    if (!x.requires_grad()) continue;
                    auto dx = x.grad();
                    const T k = gamma[ch] * inv_std[ch];
                    const T inv_count = T(1) / static_cast<T>(count);
                    for (std::size_t b = 0; b < n; ++b)
                      for (std::size_t i = 0; i < area; ++i) {
                        const std::size_t idx = (b * c + ch) * area + i;
                        dx[idx] += training ? k * (dy[idx] - inv_count * sum_dy -
                                                   xhat[idx] * inv_count * sum_dy_xhat)
                                            : k * dy[idx];
                      }
                  }
                });
  }
  return y;
}

template <typename T>
Tensor<T> l2_normalize(Tape<T>& tape, const Tensor<T>& x, std::size_t axis) {
  const auto v = axis_view(x.shape(), axis);
  Tensor<T> y(x.shape());
  std::vector<T> norms(v.outer * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t in = 0; in < v.inner; ++in) {
      T ss = 0;
      for (std::size_t l = 0; l < v.len; ++l) {
        const T e = x[(o * v.len + l) * v.inner + in];
        ss += e * e;
      }
      const T norm = std::sqrt(ss);
      if (!(norm >= T(1e-12))) throw DegenerateInputError("l2_normalize: vector norm below 1e-12");
      norms[o * v.inner + in] = norm;
      for (std::size_t l = 0; l < v.len; ++l) {
        const std::size_t idx = (o * v.len + l) * v.inner + in;
        y[idx] = x[idx] / norm;
      }
    }
  y.check_finite("l2_normalize");
  if (tape.should_record({&x})) {
    tape.record("l2_normalize", {x}, y, [x, y, v, norms]() mutable {
      auto dy = y.grad();
      auto dx = x.grad();
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t in = 0; in < v.inner; ++in) {
          T proj = 0;
          for (std::size_t l = 0; l < v.len; ++l) {
            const std::size_t idx = (o * v.len + l) * v.inner + in;
            proj += y[idx] * dy[idx];
          }
          const T norm = norms[o * v.inner + in];
          for (std::size_t l = 0; l < v.len; ++l) {
            const std::size_t idx = (o * v.len + l) * v.inner + in;
            dx[idx] += (dy[idx] - y[idx] * proj) / norm;
          }
        }
    });
  }
  return y;
}

template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                                std::span<const std::size_t> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("softmax_cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<T> probs(n * c);
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= c) throw ShapeError("softmax_cross_entropy: class index out of range");
    const T* row = logits.ptr() + i * c;
    const T mx = *std::max_element(row, row + c);
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - mx) / z;
    total += std::log(z) + mx - row[targets[i]];
  }
  Tensor<T> loss({}, total / static_cast<T>(n));
  loss.check_finite("softmax_cross_entropy");
  if (tape.should_record({&logits})) {
    std::vector<std::size_t> t(targets.begin(), targets.end());
    tape.record("softmax_cross_entropy", {logits}, loss,
                [logits, loss, probs = std::move(probs), t = std::move(t), n, c]() mutable {
                  const T g = loss.grad()[0] / static_cast<T>(n);
                  auto dl = logits.grad();
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                      dl[i * c + j] += g * (probs[i * c + j] - (j == t[i] ? T(1) : T(0)));
                });
  }
  return loss;
}

template <typename T>
Tensor<T> sigmoid_binary_cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                                       const Tensor<T>& targets) {
  if (logits.rank() != 2) throw ShapeError("sigmoid_binary_cross_entropy expects [N,C] logits");
  require_same_shape(logits.shape(), targets.shape(), "sigmoid_binary_cross_entropy");
  const std::size_t count = logits.numel();
  T total = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const T x = logits[i];
    total += std::max(x, T(0)) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor<T> loss({}, total / static_cast<T>(count));
  loss.check_finite("sigmoid_binary_cross_entropy");
  if (tape.should_record({&logits})) {
    tape.record("sigmoid_binary_cross_entropy", {logits}, loss,
                [logits, targets, loss, count]() mutable {
                  const T g = loss.grad()[0] / static_cast<T>(count);
                  auto dl = logits.grad();
                  for (std::size_t i = 0; i < count; ++i) {
                    const T s = T(1) / (T(1) + std::exp(-logits[i]));
                    dl[i] += g * (s - targets[i]);
                  }
                });
  }
  return loss;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a[i] + b[i];
  y.check_finite("add");
  if (tape.should_record({&a, &b})) {
    tape.record("add", {a, b}, y, [a, b, y]() mutable {
      accumulate_into(a, std::span<const T>(y.grad()));
      accumulate_into(b, std::span<const T>(y.grad()));
    });
  }
  return y;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a[i] * b[i];
  y.check_finite("mul");
  if (tape.should_record({&a, &b})) {
    tape.record("mul", {a, b}, y, [a, b, y]() mutable {
      auto dy = y.grad();
      if (a.requires_grad()) {
        auto da = a.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * b[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * a[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T s) {
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a[i] * s;
  y.check_finite("scale");
  if (tape.should_record({&a})) {
    tape.record("scale", {a}, y, [a, y, s]() mutable {
      auto dy = y.grad();
      auto da = a.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * s;
    });
  }
  return y;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
  T s = 0;
  for (const T v : a.data()) s += v;
  Tensor<T> y({}, s);
  y.check_finite("sum");
  if (tape.should_record({&a})) {
    tape.record("sum", {a}, y, [a, y]() mutable {
      const T g = y.grad()[0];
      for (auto& d : a.grad()) d += g;
    });
  }
  return y;
}

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
  Tensor<T> y = x.reshaped(std::move(shape));
  y.set_requires_grad(false);
  if (tape.should_record({&x})) {
    tape.record("reshape", {x}, y, [x, y]() mutable { accumulate_into(x, std::span<const T>(y.grad())); });
  }
  return y;
}

template <typename T>
Tensor<T> concat(Tape<T>& tape, const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape shape = parts.front().shape();
  const auto base = axis_view(shape, axis);
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) throw ShapeError("concat: rank mismatch");
    total += s[axis];
    s[axis] = shape[axis];
    if (s != shape) throw ShapeError("concat: shapes differ outside the concat axis");
  }
  shape[axis] = total;
  Tensor<T> y(shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = p.dim(axis) * base.inner;
    for (std::size_t o = 0; o < base.outer; ++o) {
      std::copy_n(p.ptr() + o * chunk, chunk, y.ptr() + o * total * base.inner + offset);
    }
    offset += chunk;
  }
  bool any = false;
  for (const auto& p : parts) any = any || tape.should_record({&p});
  if (any) {
    tape.record("concat", parts, y, [parts, y, base, total, axis]() mutable {
      auto dy = y.grad();
      std::size_t off = 0;
      for (auto& p : parts) {
        const std::size_t chunk = p.dim(axis) * base.inner;
        if (p.requires_grad()) {
          auto dp = p.grad();
          for (std::size_t o = 0; o < base.outer; ++o)
            for (std::size_t i = 0; i < chunk; ++i) dp[o * chunk + i] += dy[o * total * base.inner + off + i];
        }
        off += chunk;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> slice(Tape<T>& tape, const Tensor<T>& x, std::size_t axis, std::size_t begin,
                std::size_t length) {
  const auto v = axis_view(x.shape(), axis);
  if (begin + length > v.len) throw ShapeError("slice out of range on " + to_string(x.shape()));
  Shape shape = x.shape();
  shape[axis] = length;
  Tensor<T> y(shape);
  const std::size_t chunk = length * v.inner;
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(x.ptr() + (o * v.len + begin) * v.inner, chunk, y.ptr() + o * chunk);
  }
  if (tape.should_record({&x})) {
    tape.record("slice", {x}, y, [x, y, v, begin, chunk]() mutable {
      auto dy = y.grad();
      auto dx = x.grad();
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < chunk; ++i) dx[(o * v.len + begin) * v.inner + i] += dy[o * chunk + i];
    });
  }
  return y;
}

template <typename T>
std::vector<Tensor<T>> split(Tape<T>& tape, const Tensor<T>& x, std::size_t axis,
                             std::span<const std::size_t> sizes) {
  const auto v = axis_view(x.shape(), axis);
  if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) != v.len) {
    throw ShapeError("split sizes do not add up to the axis length of " + to_string(x.shape()));
  }
  std::vector<Tensor<T>> out;
  std::size_t begin = 0;
  for (const auto s : sizes) {
    out.push_back(slice(tape, x, axis, begin, s));
    begin += s;
  }
  return out;
}

#define MVC_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> conv2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,          \
                            std::size_t);                                                       \
  template Tensor<T> relu(Tape<T>&, const Tensor<T>&);                                          \
  template Tensor<T> linear(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> avg_pool2d(Tape<T>&, const Tensor<T>&, std::size_t);                       \
  template Tensor<T> global_avg_pool(Tape<T>&, const Tensor<T>&);                               \
  template Tensor<T> batch_norm2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&,                 \
                                  const Tensor<T>&, Tensor<T>&, Tensor<T>&,                     \
                                  const BatchNormOptions&);                                     \
  template Tensor<T> l2_normalize(Tape<T>&, const Tensor<T>&, std::size_t);                     \
  template Tensor<T> softmax_cross_entropy(Tape<T>&, const Tensor<T>&,                          \
                                           std::span<const std::size_t>);                       \
  template Tensor<T> sigmoid_binary_cross_entropy(Tape<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                      \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                           \
  template Tensor<T> reshape(Tape<T>&, const Tensor<T>&, Shape);                                \
  template Tensor<T> concat(Tape<T>&, const std::vector<Tensor<T>>&, std::size_t);              \
  template Tensor<T> slice(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t, std::size_t);  \
  template std::vector<Tensor<T>> split(Tape<T>&, const Tensor<T>&, std::size_t,                \
                                        std::span<const std::size_t>);

MVC_INSTANTIATE_OPS(float)
MVC_INSTANTIATE_OPS(double)
#undef MVC_INSTANTIATE_OPS

}  // namespace mvc::ops
