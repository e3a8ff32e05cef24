#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mvc/nn.hpp"
#include "mvc/rng.hpp"

namespace mvc::testing {

struct GradCheck {
  double max_rel = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // probes whose ReLU pattern changed
  std::string worst;
};

// Relative error with an absolute floor so entries whose true gradient is
// numerically zero do not divide by zero.
inline double rel_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central-difference check of every tensor in `inputs` against the gradients
/// produced by backward(). At most `per_tensor` entries of each tensor are
/// probed (all of them if it is small). Probes whose perturbation flips a ReLU
/// are skipped, since the function is not differentiable across that kink.
template <typename LossFn>
GradCheck grad_check(LossFn&& loss_fn, const NamedTensors<double>& inputs, std::size_t per_tensor,
                     std::uint64_t seed = 1, double eps = 1e-5) {
  for (const auto& entry : inputs) {
    Tensor<double> t = entry.second;
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape<double> tape;
  const Tensor<double> loss = loss_fn(tape);
  tape.backward(loss);
  const std::uint64_t base_pattern = tape.activation_pattern();

  auto probe = [&](std::uint64_t& pattern) {
    Tape<double> t;
    t.set_recording(false);
    const double v = loss_fn(t).item();
    pattern = t.activation_pattern();
    return v;
  };

  GradCheck out;
  std::mt19937_64 rng(seed);
  for (const auto& [name, handle] : inputs) {
    Tensor<double> t = handle;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> idx(t.numel());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_tensor);
    }
    for (const auto i : idx) {
      const double orig = t[i];
      std::uint64_t p_plus = 0, p_minus = 0;
      t.data()[i] = orig + eps;
      const double plus = probe(p_plus);
      t.data()[i] = orig - eps;
      const double minus = probe(p_minus);
      t.data()[i] = orig;
      if (p_plus != base_pattern || p_minus != base_pattern) {
        ++out.skipped;
        continue;
      }
      const double numeric = (plus - minus) / (2 * eps);
      const double err = rel_error(analytic[i], numeric);
      ++out.checked;
      if (err > out.max_rel) {
        out.max_rel = err;
        out.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

template <typename T>
Tensor<T> random_unit_rows(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  auto t = random_tensor<T>({rows, dim}, seed);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0;
    for (std::size_t c = 0; c < dim; ++c) ss += double(t[r * dim + c]) * t[r * dim + c];
    for (std::size_t c = 0; c < dim; ++c) t[r * dim + c] = static_cast<T>(t[r * dim + c] / std::sqrt(ss));
  }
  return t;
}

// Scratch directory under the system temp dir, emptied on construction and
// removed on destruction.
template <typename T>
std::vector<T> values(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("mvc_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace mvc::testing
