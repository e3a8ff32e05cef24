#include "mvc/tape.hpp"

#include <algorithm>

namespace mvc {

template <typename T>
bool Tape<T>::should_record(std::initializer_list<const Tensor<T>*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t && t->defined() && t->requires_grad(); });
}

template <typename T>
void Tape<T>::record(std::string op, std::vector<Tensor<T>> inputs, Tensor<T> output,
                     std::function<void()> backward) {
  output.set_requires_grad(true);
  nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void Tape<T>::clear() {
  nodes_.clear();
  pattern_ = 1469598103934665603ULL;
}

template <typename T>
void Tape<T>::mix_activation_pattern(std::uint64_t h) {
  pattern_ ^= h + 0x9e3779b97f4a7c15ULL + (pattern_ << 6) + (pattern_ >> 2);
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss");
  }
  if (nodes_.empty()) throw UsageError("backward() called with an empty tape");
  auto produced = std::find_if(nodes_.begin(), nodes_.end(),
                               [&](const Node& n) { return n.output.same_storage(loss); });
  if (produced == nodes_.end()) throw UsageError("backward(): loss was not produced by this tape");

  for (auto& n : nodes_) {
    auto g = n.output.grad();
    std::fill(g.begin(), g.end(), T(0));
  }
  Tensor<T> root = loss;
  root.grad()[0] = T(1);
  // Nodes recorded after the loss cannot contribute to it.
  for (auto i = static_cast<std::size_t>(produced - nodes_.begin()) + 1; i-- > 0;) {
    nodes_[i].backward();
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace mvc
