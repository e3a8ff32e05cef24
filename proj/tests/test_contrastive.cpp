#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "mvc/contrastive.hpp"
#include "mvc/error.hpp"
#include "mvc/optim.hpp"
#include "support.hpp"

using namespace mvc;
using namespace mvc::testing;

namespace {

// Direct evaluation of -log(s+ / (s+ + sum s-)) in long double.
long double direct_loss(const std::vector<long double>& a, const std::vector<long double>& p,
                        const std::vector<std::vector<long double>>& negs, long double tau) {
  auto sim = [&](const std::vector<long double>& x) {
    long double dot = 0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * x[i];
    return std::exp(dot / tau);
  };
  long double denom = sim(p);
  for (const auto& n : negs) denom += sim(n);
  return -std::log(sim(p) / denom);
}

std::vector<long double> row(const Tensor<double>& t, std::size_t r) {
  const std::size_t d = t.dim(t.rank() - 1);
  return {t.ptr() + r * d, t.ptr() + (r + 1) * d};
}

Tensor<double> unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  return random_unit_rows<double>(n, d, seed);
}

}  // namespace

TEST_CASE("similarity closed forms") {
  const std::vector<double> x{1, 0}, y{0, 1}, mx{-1, 0};
  CHECK(similarity(x, x, 1.0) == doctest::Approx(std::exp(1.0)).epsilon(1e-12));
  CHECK(similarity(x, y, 0.07) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(similarity(x, mx, 0.07) == doctest::Approx(std::exp(-1.0 / 0.07)).epsilon(1e-12));
  CHECK_THROWS(similarity(x, std::vector<double>{0, 0}, 1.0));
  CHECK_THROWS(similarity(x, y, 0.0));
}

TEST_CASE("uniform scores give log(k+1)") {
  for (const std::size_t k : {1u, 7u, 4096u}) {
    Tape<double> tape;
    Tensor<double> a({1, 4}, std::vector<double>{0.5, 0.5, 0.5, 0.5});
    Tensor<double> negs({1, k, 4}, 0.5);
    const double loss = contrastive_loss(tape, a, a, negs, 0.07).item();
    CHECK(std::abs(loss - std::log(static_cast<double>(k + 1))) < 1e-5);

    Tape<float> tf;
    Tensor<float> af({2, 4}, 0.5f);
    Tensor<float> nf({2, k, 4}, 0.5f);
    CHECK(std::abs(contrastive_loss(tf, af, af, nf, 0.07).item() - std::log(static_cast<double>(k + 1))) < 1e-5);
  }
  CHECK(std::abs(std::log(4097.0) - 8.3181) < 1e-4);
}

TEST_CASE("hand-evaluated single negative case") {
  Tape<double> tape;
  Tensor<double> a({1, 2}, std::vector<double>{1, 0});
  Tensor<double> n({1, 1, 2}, std::vector<double>{0, 1});
  const double loss = contrastive_loss(tape, a, a, n, 1.0).item();
  CHECK(std::abs(loss - std::log(1 + std::exp(-1.0))) < 1e-6);
  CHECK(std::abs(loss - 0.31326) < 1e-5);
}

TEST_CASE("loss falls as the positive cosine rises") {
  Tensor<double> a({1, 2}, std::vector<double>{1, 0});
  Tensor<double> negs({1, 3, 2}, std::vector<double>{0, 1, 0.6, 0.8, 0.6, -0.8});
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 40; ++i) {
    const double angle = M_PI * (1.0 - i / 40.0);
    Tensor<double> p({1, 2}, std::vector<double>{std::cos(angle), std::sin(angle)});
    Tape<double> tape;
    const double loss = contrastive_loss(tape, a, p, negs, 0.07).item();
    CHECK(loss > 0);
    CHECK(loss < prev);
    prev = loss;
  }
}

TEST_CASE("loss matches the direct formula, is permutation invariant and stays below uniform") {
  const std::size_t b = 5, k = 9, d = 6;
  const auto a = unit_rows(b, d, 1), p = unit_rows(b, d, 2);
  const auto n = unit_rows(b * k, d, 3).reshaped({b, k, d});
  Tape<double> tape;
  const double loss = contrastive_loss(tape, a, p, n, 0.07).item();
  long double ref = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<std::vector<long double>> negs;
    for (std::size_t j = 0; j < k; ++j) negs.push_back(row(n.reshaped({b * k, d}), i * k + j));
    ref += direct_loss(row(a, i), row(p, i), negs, 0.07L);
  }
  CHECK(std::abs(loss - static_cast<double>(ref / b)) < 1e-10);

  // Reverse the negatives of every anchor.
  Tensor<double> reversed({b, k, d});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c < d; ++c) reversed[(i * k + j) * d + c] = n[(i * k + (k - 1 - j)) * d + c];
  Tape<double> t2;
  CHECK(std::abs(contrastive_loss(t2, a, p, reversed, 0.07).item() - loss) < 1e-12);

  // Positive equal to the anchor beats every negative: loss below log(k+1).
  Tensor<double> spread({1, k, d}, 0.0);
  for (std::size_t j = 0; j < k; ++j) spread[j * d + (j % (d - 1)) + 1] = 1.0;
  Tensor<double> e0({1, d}, 0.0);
  e0[0] = 1.0;
  Tape<double> t3;
  CHECK(contrastive_loss(t3, e0, e0, spread, 0.07).item() < std::log(static_cast<double>(k + 1)));
}

TEST_CASE("banked loss equals the dense loss on gathered rows") {
  const std::size_t b = 4, k = 5, d = 3, n = 12;
  const auto a = unit_rows(b, d, 4), p = unit_rows(b, d, 5), bank = unit_rows(n, d, 6);
  Engine rng = make_engine(0, "test");
  const std::vector<std::size_t> anchors{0, 3, 7, 11};
  const auto rows = sample_negatives(n, anchors, k, rng);
  Tensor<double> dense({b, k, d});
  for (std::size_t i = 0; i < b * k; ++i)
    for (std::size_t c = 0; c < d; ++c) dense[i * d + c] = bank[rows[i] * d + c];
  Tape<double> t1, t2;
  CHECK(std::abs(contrastive_loss_banked(t1, a, p, bank, rows, k, 0.07).item() -
                 contrastive_loss(t2, a, p, dense, 0.07).item()) < 1e-12);
}

TEST_CASE("symmetric loss: degenerate bank, direct oracle, view swap") {
  const std::size_t n = 6, d = 4, k = 5;
  ContrastiveConfig cfg;
  cfg.k = k;

  SUBCASE("identical representations everywhere give 2 log(k+1)") {
    MemoryBank<double> bank(n, d, 0.5, 0);
    Tensor<double> same({n, d}, 0.5);
    bank.update(std::vector<std::size_t>{0, 1, 2, 3, 4, 5}, same, same, 0.0);
    Tensor<double> h({2, d}, 0.5);
    Engine rng = make_engine(1, "neg");
    Tape<double> tape;
    const double loss = symmetric_loss(tape, h, h, bank, std::vector<std::size_t>{1, 4}, cfg, rng).item();
    CHECK(std::abs(loss - 2 * std::log(static_cast<double>(k + 1))) < 1e-5);
  }

  SUBCASE("equals two direct evaluations summed") {
    MemoryBank<double> bank(n, d, 0.5, 3);
    const auto h1 = unit_rows(4, d, 7), h2 = unit_rows(4, d, 8);
    const std::vector<std::size_t> idx{0, 2, 3, 5};
    Engine rng = make_engine(2, "neg");
    Tape<double> tape;
    const double loss = symmetric_loss(tape, h1, h2, bank, idx, cfg, rng).item();

    Engine replay = make_engine(2, "neg");
    const auto n12 = sample_negatives(n, idx, k, replay);
    const auto n21 = sample_negatives(n, idx, k, replay);
    long double ref = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::vector<std::vector<long double>> a, b;
      for (std::size_t j = 0; j < k; ++j) {
        a.push_back(row(bank.view2(), n12[i * k + j]));
        b.push_back(row(bank.view1(), n21[i * k + j]));
      }
      ref += direct_loss(row(h1, i), row(h2, i), a, 0.07L) / 4;
      ref += direct_loss(row(h2, i), row(h1, i), b, 0.07L) / 4;
    }
    CHECK(std::abs(loss - static_cast<double>(ref)) < 1e-10);

    // Swapping views and banks leaves the sum unchanged: the two halves trade
    // places, so draw the negatives in swapped order too.
    MemoryBank<double> swapped = bank;
    std::swap(swapped.view1(), swapped.view2());
    Tape<double> t2;
    ContrastiveConfig one = cfg;
    one.symmetric = false;
    Engine r1 = make_engine(2, "neg");
    const double l12 = symmetric_loss(t2, h1, h2, bank, idx, one, r1).item();
    const double l21 = symmetric_loss(t2, h2, h1, swapped, idx, one, r1).item();
    CHECK(std::abs(l12 + l21 - loss) < 1e-12);
  }

  SUBCASE("bank positives use the other view's stored rows") {
    MemoryBank<double> bank(n, d, 0.5, 4);
    const auto h1 = unit_rows(2, d, 9), h2 = unit_rows(2, d, 10);
    const std::vector<std::size_t> idx{1, 4};
    ContrastiveConfig bcfg = cfg;
    bcfg.positives = PositiveSource::bank;
    Engine rng = make_engine(5, "neg");
    Tape<double> tape;
    const double loss = symmetric_loss(tape, h1, h2, bank, idx, bcfg, rng).item();
    Engine replay = make_engine(5, "neg");
    const auto n12 = sample_negatives(n, idx, k, replay);
    const auto n21 = sample_negatives(n, idx, k, replay);
    long double ref = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::vector<std::vector<long double>> a, b;
      for (std::size_t j = 0; j < k; ++j) {
        a.push_back(row(bank.view2(), n12[i * k + j]));
        b.push_back(row(bank.view1(), n21[i * k + j]));
      }
      ref += direct_loss(row(h1, i), row(bank.view2(), idx[i]), a, 0.07L) / 2;
      ref += direct_loss(row(h2, i), row(bank.view1(), idx[i]), b, 0.07L) / 2;
    }
    CHECK(std::abs(loss - static_cast<double>(ref)) < 1e-10);
    CHECK(positive_source_from_string(to_string(PositiveSource::bank)) == PositiveSource::bank);
    CHECK_THROWS_AS(positive_source_from_string("stale"), UsageError);
  }

  SUBCASE("uninitialized bank is rejected") {
    MemoryBank<double> empty;
    Engine rng = make_engine(0, "neg");
    Tape<double> tape;
    const auto h = unit_rows(1, d, 1);
    CHECK_THROWS_AS(symmetric_loss(tape, h, h, empty, std::vector<std::size_t>{0}, cfg, rng), UsageError);
  }
}

TEST_CASE("k is clamped to the available negatives") {
  ContrastiveConfig cfg;
  CHECK(cfg.k == 4096);
  CHECK(cfg.tau == 0.07);
  CHECK(cfg.effective_k(5000) == 4096);
  CHECK(cfg.effective_k(100) == 99);
  CHECK_THROWS(cfg.effective_k(1));
  cfg.tau = 0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("negative sampling excludes the anchor and is uniform") {
  Engine rng = make_engine(9, "neg");
  const auto forced = sample_negatives(2, std::vector<std::size_t>{0}, 1, rng);
  CHECK(forced == std::vector<std::size_t>{1});
  CHECK_THROWS(sample_negatives(5, std::vector<std::size_t>{0}, 5, rng));

  const std::size_t n = 11, anchor = 3, draws = 100000;
  std::vector<std::size_t> anchors(draws / 10, anchor);
  const auto out = sample_negatives(n, anchors, 10, rng);
  std::vector<double> counts(n, 0.0);
  for (const auto r : out) counts[r] += 1;
  CHECK(counts[anchor] == 0);
  const double expected = static_cast<double>(draws) / (n - 1);
  const double sigma = std::sqrt(draws * (1.0 / (n - 1)) * (1.0 - 1.0 / (n - 1)));
  double chi2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == anchor) continue;
    CHECK(std::abs(counts[i] - expected) < 3 * sigma);
    chi2 += (counts[i] - expected) * (counts[i] - expected) / expected;
  }
  CHECK(chi2 < 27.88);  // chi-square, 9 degrees of freedom, p = 0.001
}

TEST_CASE("bank update rule") {
  MemoryBank<double> bank(3, 2, 0.5, 0);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(std::hypot(bank.view1()[2 * r], bank.view1()[2 * r + 1]) == doctest::Approx(1.0).epsilon(1e-12));
  }
  bank.view1()[0] = 1;
  bank.view1()[1] = 0;
  const std::vector<double> untouched(bank.view1().data().begin() + 2, bank.view1().data().end());
  Tensor<double> h({1, 2}, std::vector<double>{0, 1});
  bank.update(std::vector<std::size_t>{0}, h, h);
  CHECK(bank.view1()[0] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK(bank.view1()[1] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK(std::vector<double>(bank.view1().data().begin() + 2, bank.view1().data().end()) == untouched);

  Tensor<double> g({1, 2}, std::vector<double>{0.6, 0.8});
  bank.update(std::vector<std::size_t>{1}, g, g, 0.0);
  CHECK(bank.view2()[2] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(bank.view2()[3] == doctest::Approx(0.8).epsilon(1e-12));
  const std::vector<double> before = values(bank.view2());
  bank.update(std::vector<std::size_t>{2}, g, unit_rows(1, 2, 3), 1.0);
  CHECK(values(bank.view2()) == before);
  CHECK_THROWS(bank.update(std::vector<std::size_t>{3}, g, g));

  MemoryBank<double> a(50, 8, 0.5, 7), b(50, 8, 0.5, 7);
  CHECK(values(a.view1()) == values(b.view1()));
}

TEST_CASE("training against a fixed bank lowers the loss on a separable toy set") {
  const std::size_t n = 8, in = 8, d = 4;
  Tensor<double> x1({n, in}, 0.0), x2({n, in}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    x1[i * in + i] = 1.0;
    x2[i * in + (i + 3) % n] = 1.0;
  }
  Engine init = make_engine(0, "init");
  ProjectionHead<double> p1(in, d, init), p2(in, d, init);
  NamedTensors<double> params = p1.parameters();
  for (const auto& e : p2.parameters()) params.push_back(e);
  MemoryBank<double> bank(n, d, 0.5, 1);
  ContrastiveConfig cfg;
  cfg.k = n - 1;
  OptimizerConfig oc;
  oc.lr = 0.05;
  Optimizer<double> opt(oc);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto evaluate = [&](Tape<double>& tape) {
    Engine rng = make_engine(3, "neg");
    return symmetric_loss(tape, p1.forward(tape, x1), p2.forward(tape, x2), bank, idx, cfg, rng);
  };
  Tape<double> t0;
  t0.set_recording(false);
  const double initial = evaluate(t0).item();
  double last = initial;
  for (int step = 0; step < 200; ++step) {
    for (auto& [name, t] : params) t.zero_grad();
    Tape<double> tape;
    const auto loss = evaluate(tape);
    tape.backward(loss);
    opt.step(params);
    last = loss.item();
  }
  CHECK(last < initial);
}
