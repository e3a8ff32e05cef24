#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mvc/tensor.hpp"

namespace mvc {

/// Ordered record of the differentiable ops executed since the last clear().
///
/// Ops append one node each, so the record is already in topological order;
/// backward() walks it once in reverse. Recording is skipped when disabled or
/// when no input of an op requires a gradient.
template <typename T>
class Tape {
 public:
  struct Node {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    std::function<void()> backward;
  };

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  // True when an op over `inputs` must be recorded.
  bool should_record(std::initializer_list<const Tensor<T>*> inputs) const;

  void record(std::string op, std::vector<Tensor<T>> inputs, Tensor<T> output,
              std::function<void()> backward);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear();

  /// Accumulates dLoss/dLeaf into every leaf that requires a gradient.
  /// Intermediate gradients are reset first, so repeated calls on the same
  /// tape add the same contribution to the leaves again.
  void backward(const Tensor<T>& loss);

  // Running hash of the ReLU on/off masks seen while recording or not; lets
  // finite-difference checks detect evaluations that straddle a kink.
  std::uint64_t activation_pattern() const { return pattern_; }
  void mix_activation_pattern(std::uint64_t h);

 private:
  std::vector<Node> nodes_;
  bool recording_ = true;
  std::uint64_t pattern_ = 1469598103934665603ULL;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mvc
