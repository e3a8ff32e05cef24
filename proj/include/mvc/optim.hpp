#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "mvc/nn.hpp"

namespace mvc {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.03;
  double momentum = 0.9;   // sgd
  double beta1 = 0.9;      // adam
  double beta2 = 0.999;    // adam
  double eps = 1e-8;       // adam
  double weight_decay = 1e-4;

  void validate() const;
};

/// Learning rate divided by `factor` once for every milestone already
/// passed. Milestones count 1-indexed epochs: "after epoch 250" means the
/// drop applies from 0-indexed epoch 250 onward.
struct MultiStepSchedule {
  std::vector<std::size_t> milestones;
  double factor = 10.0;

  void validate() const;
};

// `epoch` is 0-indexed.
double schedule_lr(double base_lr, std::size_t epoch, const MultiStepSchedule& sched);

/// SGD with classic momentum and coupled weight decay:
///   g <- grad + wd * w;  buf <- momentum * buf + g;  w <- w - lr * buf
/// Adam with bias-corrected moments and the same coupled decay.
/// State is keyed by parameter position, so the parameter list passed to
/// step() must keep a fixed order.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);

  void step(const NamedTensors<T>& params, double lr);
  void step(const NamedTensors<T>& params) { step(params, cfg_.lr); }

  const OptimizerConfig& config() const { return cfg_; }
  std::size_t steps() const { return steps_; }

  void save_state(const std::filesystem::path& dir) const;
  void load_state(const std::filesystem::path& dir, const NamedTensors<T>& params);

 private:
  void ensure_state(const NamedTensors<T>& params);

  OptimizerConfig cfg_;
  std::size_t steps_ = 0;
  std::vector<std::vector<T>> first_;   // momentum buffer / Adam m
  std::vector<std::vector<T>> second_;  // Adam v
};

extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace mvc
