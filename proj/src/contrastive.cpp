#include "mvc/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace mvc {

std::string to_string(PositiveSource s) { return s == PositiveSource::fresh ? "fresh" : "bank"; }

PositiveSource positive_source_from_string(const std::string& s) {
  if (s == "fresh") return PositiveSource::fresh;
  if (s == "bank") return PositiveSource::bank;
  throw UsageError("unknown positive source '" + s + "' (expected fresh or bank)");
}

void ContrastiveConfig::validate() const {
  if (k < 1) throw UsageError("contrastive k must be >= 1");
  if (!(tau > 0)) throw UsageError("contrastive tau must be > 0");
}

std::size_t ContrastiveConfig::effective_k(std::size_t n) const {
  if (n < 2) throw UsageError("contrastive training needs at least 2 items");
  if (k <= n - 1) return k;
  std::cerr << "warning: k=" << k << " exceeds the " << n - 1
            << " available negatives; clamping to " << n - 1 << '\n';
  return n - 1;
}

double similarity(std::span<const double> h1, std::span<const double> h2, double tau) {
  if (h1.size() != h2.size()) throw ShapeError("similarity: dimension mismatch");
  if (!(tau > 0)) throw UsageError("similarity: tau must be > 0");
  double dot = 0, n1 = 0, n2 = 0;
  for (std::size_t i = 0; i < h1.size(); ++i) {
    dot += h1[i] * h2[i];
    n1 += h1[i] * h1[i];
    n2 += h2[i] * h2[i];
  }
  n1 = std::sqrt(n1);
  n2 = std::sqrt(n2);
  if (n1 < 1e-12 || n2 < 1e-12) throw DegenerateInputError("similarity: zero-norm input");
  if (std::abs(n1 - 1) > 1e-4 || std::abs(n2 - 1) > 1e-4) {
    throw UsageError("similarity: inputs must be unit-norm");
  }
  return std::exp(dot / (n1 * n2) / tau);
}

namespace {

template <typename T>
T dot(const T* a, const T* b, std::size_t d) {
  T s = 0;
  for (std::size_t i = 0; i < d; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
T norm_of(const T* a, std::size_t d) {
  const T n = std::sqrt(dot(a, a, d));
  if (n < T(1e-12)) throw DegenerateInputError("contrastive loss: zero-norm representation");
  return n;
}

// d cos(x, y) / dx scaled by `w`, accumulated into out.
template <typename T>
void add_cos_grad(T* out, const T* x, T nx, const T* y, T ny, T cos, T w, std::size_t d) {
  const T a = w / (nx * ny), b = w * cos / (nx * nx);
  for (std::size_t i = 0; i < d; ++i) out[i] += a * y[i] - b * x[i];
}

// Shared forward/backward. `row(i, j)` yields the j-th negative of anchor i,
// `row_norm(i, j)` its norm; `neg_grad(i, j)` returns where to accumulate its
// gradient (nullptr for constants).
template <typename T, typename Row, typename RowNorm, typename NegGrad>
struct LossCore {
  std::size_t batch, k, d;
  double tau;
  Row row;
  RowNorm row_norm;
  NegGrad neg_grad;

  // Softmax over the k+1 logits of every anchor, plus cosines and norms.
  std::vector<T> probs, cosines, anchor_norm, positive_norm;

  T forward(const T* a, const T* p) {
    probs.assign(batch * (k + 1), T(0));
    cosines.assign(batch * (k + 1), T(0));
    anchor_norm.resize(batch);
    positive_norm.resize(batch);
    const T inv_tau = static_cast<T>(1.0 / tau);
    T total = 0;
    std::vector<T> logits(k + 1);
    for (std::size_t i = 0; i < batch; ++i) {
      const T* ai = a + i * d;
      const T* pi = p + i * d;
      const T na = norm_of(ai, d), np = norm_of(pi, d);
      anchor_norm[i] = na;
      positive_norm[i] = np;
      T* cos_i = cosines.data() + i * (k + 1);
      cos_i[0] = dot(ai, pi, d) / (na * np);
      for (std::size_t j = 0; j < k; ++j) cos_i[j + 1] = dot(ai, row(i, j), d) / (na * row_norm(i, j));
      for (std::size_t j = 0; j <= k; ++j) logits[j] = cos_i[j] * inv_tau;
      const T mx = *std::max_element(logits.begin(), logits.end());
      T z = 0;
      for (std::size_t j = 0; j <= k; ++j) z += std::exp(logits[j] - mx);
      T* pr = probs.data() + i * (k + 1);
      for (std::size_t j = 0; j <= k; ++j) pr[j] = std::exp(logits[j] - mx) / z;
      total += mx + std::log(z) - logits[0];
    }
    return total / static_cast<T>(batch);
  }

  void backward(T upstream, const T* a, const T* p, T* da, T* dp) {
    const T scale = upstream / static_cast<T>(batch) / static_cast<T>(tau);
    for (std::size_t i = 0; i < batch; ++i) {
      const T* ai = a + i * d;
      const T* pi = p + i * d;
      const T* pr = probs.data() + i * (k + 1);
      const T* cos_i = cosines.data() + i * (k + 1);
      const T na = anchor_norm[i], np = positive_norm[i];
      const T w0 = scale * (pr[0] - T(1));
      if (da) add_cos_grad(da + i * d, ai, na, pi, np, cos_i[0], w0, d);
      if (dp) add_cos_grad(dp + i * d, pi, np, ai, na, cos_i[0], w0, d);
      for (std::size_t j = 0; j < k; ++j) {
        const T wj = scale * pr[j + 1];
        const T* nj = row(i, j);
        const T nn = row_norm(i, j);
        if (da) add_cos_grad(da + i * d, ai, na, nj, nn, cos_i[j + 1], wj, d);
        if (T* g = neg_grad(i, j)) add_cos_grad(g, nj, nn, ai, na, cos_i[j + 1], wj, d);
      }
    }
  }
};

template <typename T>
void check_pair(const Tensor<T>& anchor, const Tensor<T>& positive) {
  if (anchor.rank() != 2 || anchor.shape() != positive.shape()) {
    throw ShapeError("contrastive loss: anchor " + to_string(anchor.shape()) + " and positive " +
                     to_string(positive.shape()) + " must both be [B,d]");
  }
  if (anchor.dim(0) == 0) throw ShapeError("contrastive loss: empty batch");
}

template <typename T, typename Core>
Tensor<T> run_core(Tape<T>& tape, const char* name, std::vector<Tensor<T>> inputs,
                   const Tensor<T>& anchor, const Tensor<T>& positive, Core core,
                   bool needs_record) {
  Tensor<T> loss({}, core.forward(anchor.ptr(), positive.ptr()));
  loss.check_finite(name);
  if (needs_record) {
    Tensor<T> a = anchor, p = positive;
    tape.record(name, std::move(inputs), loss, [a, p, loss, core]() mutable {
      T* da = a.requires_grad() ? a.grad().data() : nullptr;
      T* dp = p.requires_grad() ? p.grad().data() : nullptr;
      core.backward(loss.grad()[0], a.ptr(), p.ptr(), da, dp);
    });
  }
  return loss;
}

}  // namespace

template <typename T>
Tensor<T> contrastive_loss(Tape<T>& tape, const Tensor<T>& anchor, const Tensor<T>& positive,
                           const Tensor<T>& negatives, double tau) {
  check_pair(anchor, positive);
  if (!(tau > 0)) throw UsageError("contrastive loss: tau must be > 0");
  const std::size_t b = anchor.dim(0), d = anchor.dim(1);
  if (negatives.rank() != 3 || negatives.dim(0) != b || negatives.dim(2) != d || negatives.dim(1) < 1) {
    throw ShapeError("contrastive loss: negatives " + to_string(negatives.shape()) + " must be [B,k,d] with k >= 1");
  }
  const std::size_t k = negatives.dim(1);
  std::vector<T> norms(b * k);
  for (std::size_t r = 0; r < b * k; ++r) norms[r] = norm_of(negatives.ptr() + r * d, d);
  const T* base = negatives.ptr();
  Tensor<T> neg = negatives;
  const bool neg_grad = negatives.requires_grad() && tape.recording();
  auto row = [base, k, d](std::size_t i, std::size_t j) { return base + (i * k + j) * d; };
  auto row_norm = [norms, k](std::size_t i, std::size_t j) { return norms[i * k + j]; };
  auto grad_sink = [neg, neg_grad, k, d](std::size_t i, std::size_t j) mutable -> T* {
    return neg_grad ? neg.grad().data() + (i * k + j) * d : nullptr;
  };
  LossCore<T, decltype(row), decltype(row_norm), decltype(grad_sink)> core{b, k, d, tau, row, row_norm, grad_sink, {}, {}, {}, {}};
  return run_core<T>(tape, "contrastive_loss", {anchor, positive, negatives}, anchor, positive,
                     std::move(core), tape.should_record({&anchor, &positive, &negatives}));
}

template <typename T>
Tensor<T> contrastive_loss_banked(Tape<T>& tape, const Tensor<T>& anchor,
                                  const Tensor<T>& positive, const Tensor<T>& bank,
                                  std::span<const std::size_t> negative_rows, std::size_t k,
                                  double tau) {
  check_pair(anchor, positive);
  if (!(tau > 0)) throw UsageError("contrastive loss: tau must be > 0");
  const std::size_t b = anchor.dim(0), d = anchor.dim(1);
  if (bank.rank() != 2 || bank.dim(1) != d) throw ShapeError("contrastive loss: bank width differs from d");
  if (k < 1 || negative_rows.size() != b * k) throw ShapeError("contrastive loss: expected B*k negative indices");
  for (const auto r : negative_rows) {
    if (r >= bank.dim(0)) throw ShapeError("contrastive loss: negative index out of range");
  }
  std::vector<T> norms(bank.dim(0));
  for (std::size_t r = 0; r < norms.size(); ++r) norms[r] = norm_of(bank.ptr() + r * d, d);
  std::vector<std::size_t> rows(negative_rows.begin(), negative_rows.end());
  const Tensor<T> held = bank;
  auto row = [held, rows, k, d](std::size_t i, std::size_t j) { return held.ptr() + rows[i * k + j] * d; };
  auto row_norm = [norms = std::move(norms), rows, k](std::size_t i, std::size_t j) { return norms[rows[i * k + j]]; };
  auto no_grad = [](std::size_t, std::size_t) -> T* { return nullptr; };
  LossCore<T, decltype(row), decltype(row_norm), decltype(no_grad)> core{b, k, d, tau, row, row_norm, no_grad, {}, {}, {}, {}};
  return run_core<T>(tape, "contrastive_loss", {anchor, positive}, anchor, positive, std::move(core),
                     tape.should_record({&anchor, &positive}));
}

template <typename T>
MemoryBank<T>::MemoryBank(std::size_t items, std::size_t dim, double momentum, std::uint64_t seed)
    : bank1_({items, dim}), bank2_({items, dim}), momentum_(momentum) {
  if (items < 1 || dim < 1) throw UsageError("memory bank needs items and a dimension");
  if (!(momentum >= 0 && momentum < 1)) throw UsageError("bank momentum must be in [0,1)");
  Engine rng = make_engine(seed, "bank");
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Tensor<T>* bank : {&bank1_, &bank2_}) {
    for (std::size_t r = 0; r < items; ++r) {
      double ss = 0;
      std::vector<double> v(dim);
      do {
        ss = 0;
        for (auto& x : v) {
          x = gauss(rng);
          ss += x * x;
        }
      } while (ss < 1e-12);
      const double inv = 1.0 / std::sqrt(ss);
      for (std::size_t c = 0; c < dim; ++c) (*bank)[r * dim + c] = static_cast<T>(v[c] * inv);
    }
  }
}

template <typename T>
void MemoryBank<T>::update(std::span<const std::size_t> indices, const Tensor<T>& h1,
                           const Tensor<T>& h2) {
  update(indices, h1, h2, momentum_);
}

template <typename T>
void MemoryBank<T>::update(std::span<const std::size_t> indices, const Tensor<T>& h1,
                           const Tensor<T>& h2, double momentum) {
  if (!initialized()) throw UsageError("memory bank not initialized");
  const std::size_t d = dim();
  const Shape expected{indices.size(), d};
  if (h1.shape() != expected || h2.shape() != expected) {
    throw ShapeError("bank update expects [" + std::to_string(indices.size()) + "," + std::to_string(d) + "] representations");
  }
  for (const auto idx : indices) {
    if (idx >= size()) throw ShapeError("bank update index " + std::to_string(idx) + " out of range");
  }
  const auto m = static_cast<T>(momentum);
  for (auto [bank, h] : {std::pair{&bank1_, &h1}, std::pair{&bank2_, &h2}}) {
    for (std::size_t i = 0; i < indices.size(); ++i) {
      T* row = bank->ptr() + indices[i] * d;
      const T* src = h->ptr() + i * d;
      T ss = 0;
      for (std::size_t c = 0; c < d; ++c) {
        row[c] = m * row[c] + (T(1) - m) * src[c];
        ss += row[c] * row[c];
      }
      const T n = std::sqrt(ss);
      if (n < T(1e-12)) throw DegenerateInputError("bank update produced a zero row");
      for (std::size_t c = 0; c < d; ++c) row[c] /= n;
    }
  }
}

std::vector<std::size_t> sample_negatives(std::size_t bank_size,
                                          std::span<const std::size_t> anchors, std::size_t k,
                                          Engine& rng) {
  if (bank_size < 2 || k > bank_size - 1) {
    throw UsageError("sample_negatives: k=" + std::to_string(k) + " exceeds the " +
                     std::to_string(bank_size ? bank_size - 1 : 0) + " available negatives");
  }
  std::uniform_int_distribution<std::size_t> pick(0, bank_size - 2);
  std::vector<std::size_t> out;
  out.reserve(anchors.size() * k);
  for (const auto a : anchors) {
    if (a >= bank_size) throw ShapeError("sample_negatives: anchor index out of range");
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t r = pick(rng);
      out.push_back(r >= a ? r + 1 : r);
    }
  }
  return out;
}

template <typename T>
Tensor<T> symmetric_loss(Tape<T>& tape, const Tensor<T>& h1, const Tensor<T>& h2,
                         const MemoryBank<T>& bank, std::span<const std::size_t> indices,
                         const ContrastiveConfig& cfg, Engine& rng) {
  cfg.validate();
  if (!bank.initialized()) throw UsageError("symmetric_loss: memory bank not initialized");
  if (h1.rank() != 2 || h1.dim(0) != indices.size()) {
    throw ShapeError("symmetric_loss: batch size differs from the index count");
  }
  const std::size_t k = cfg.effective_k(bank.size());
  auto positive = [&](const Tensor<T>& fresh, const Tensor<T>& rows) {
    if (cfg.positives == PositiveSource::fresh) return fresh;
    const std::size_t d = bank.dim();
    Tensor<T> out({indices.size(), d});
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] >= bank.size()) throw ShapeError("symmetric_loss: bank index out of range");
      std::copy_n(rows.ptr() + indices[i] * d, d, out.ptr() + i * d);
    }
    return out;
  };
  const auto neg12 = sample_negatives(bank.size(), indices, k, rng);
  Tensor<T> loss = contrastive_loss_banked(tape, h1, positive(h2, bank.view2()), bank.view2(), neg12, k, cfg.tau);
  if (!cfg.symmetric) return loss;
  const auto neg21 = sample_negatives(bank.size(), indices, k, rng);
  Tensor<T> other = contrastive_loss_banked(tape, h2, positive(h1, bank.view1()), bank.view1(), neg21, k, cfg.tau);
  return ops::add(tape, loss, other);
}

template class MemoryBank<float>;
template class MemoryBank<double>;

#define MVC_INSTANTIATE_CONTRASTIVE(T)                                                           \
  template Tensor<T> contrastive_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&,              \
                                      const Tensor<T>&, double);                                 \
  template Tensor<T> contrastive_loss_banked(Tape<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                             const Tensor<T>&, std::span<const std::size_t>,     \
                                             std::size_t, double);                               \
  template Tensor<T> symmetric_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&,                \
                                    const MemoryBank<T>&, std::span<const std::size_t>,          \
                                    const ContrastiveConfig&, Engine&);

MVC_INSTANTIATE_CONTRASTIVE(float)
MVC_INSTANTIATE_CONTRASTIVE(double)
#undef MVC_INSTANTIATE_CONTRASTIVE

}  // namespace mvc
