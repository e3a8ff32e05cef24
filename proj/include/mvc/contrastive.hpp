#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mvc/rng.hpp"
#include "mvc/ops.hpp"

namespace mvc {

// Where the positive for an anchor comes from: the fresh in-batch
// representation of the other view, or that item's row in the other view's
// bank (treated as a constant).
enum class PositiveSource { fresh, bank };

std::string to_string(PositiveSource s);
PositiveSource positive_source_from_string(const std::string& s);

struct ContrastiveConfig {
  std::size_t k = 4096;  // negatives per anchor
  double tau = 0.07;     // temperature
  bool symmetric = true;
  PositiveSource positives = PositiveSource::fresh;

  void validate() const;
  // k clamped to n - 1 for a bank of n items (warns on stderr when clamped).
  std::size_t effective_k(std::size_t n) const;
};

/// s(h1, h2) = exp(cos(h1, h2) / tau). Inputs must be unit-norm within 1e-4.
double similarity(std::span<const double> h1, std::span<const double> h2, double tau);

/// Mean over the batch of
///   -log( s(a_i, p_i) / (s(a_i, p_i) + sum_j s(a_i, n_ij)) )
/// with anchors a:[B,d], positives p:[B,d], negatives n:[B,k,d]; evaluated
/// exactly in log-sum-exp form. Gradients flow to every input that requires
/// one.
template <typename T>
Tensor<T> contrastive_loss(Tape<T>& tape, const Tensor<T>& anchor, const Tensor<T>& positive,
                           const Tensor<T>& negatives, double tau);

/// Same loss with negatives given as rows of `bank` ([N,d], treated as a
/// constant); negative_rows holds B*k row indices, row-major by anchor.
template <typename T>
Tensor<T> contrastive_loss_banked(Tape<T>& tape, const Tensor<T>& anchor,
                                  const Tensor<T>& positive, const Tensor<T>& bank,
                                  std::span<const std::size_t> negative_rows, std::size_t k,
                                  double tau);

/// Per-view store of unit-norm contrastive representations, one row per
/// dataset item, used as the source of negatives.
template <typename T>
class MemoryBank {
 public:
  MemoryBank() = default;
  // Rows drawn uniformly on the unit sphere from the "bank" stream of `seed`.
  MemoryBank(std::size_t items, std::size_t dim, double momentum, std::uint64_t seed);

  bool initialized() const { return bank1_.defined(); }
  std::size_t size() const { return initialized() ? bank1_.dim(0) : 0; }
  std::size_t dim() const { return initialized() ? bank1_.dim(1) : 0; }
  double momentum() const { return momentum_; }

  const Tensor<T>& view1() const { return bank1_; }
  const Tensor<T>& view2() const { return bank2_; }
  Tensor<T>& view1() { return bank1_; }
  Tensor<T>& view2() { return bank2_; }

  /// row <- normalize(m * row + (1 - m) * h) for each listed item, per view.
  void update(std::span<const std::size_t> indices, const Tensor<T>& h1, const Tensor<T>& h2);
  void update(std::span<const std::size_t> indices, const Tensor<T>& h1, const Tensor<T>& h2,
              double momentum);

 private:
  Tensor<T> bank1_, bank2_;
  double momentum_ = 0.5;
};

/// k negatives per anchor, uniform with replacement over every bank row but
/// the anchor's own. Returns anchors.size() * k row indices.
std::vector<std::size_t> sample_negatives(std::size_t bank_size,
                                          std::span<const std::size_t> anchors, std::size_t k,
                                          Engine& rng);

/// L = L(V1 anchors vs bank of V2) + L(V2 anchors vs bank of V1). Positives
/// follow cfg.positives; `indices` are the bank rows of the batch items.
template <typename T>
Tensor<T> symmetric_loss(Tape<T>& tape, const Tensor<T>& h1, const Tensor<T>& h2,
                         const MemoryBank<T>& bank, std::span<const std::size_t> indices,
                         const ContrastiveConfig& cfg, Engine& rng);

extern template class MemoryBank<float>;
extern template class MemoryBank<double>;

}  // namespace mvc
