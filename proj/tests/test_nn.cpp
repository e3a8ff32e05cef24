#include <cmath>

#include "doctest.h"
#include "mvc/contrastive.hpp"
#include "mvc/nn.hpp"
#include "support.hpp"

using namespace mvc;
using namespace mvc::testing;

namespace {

CmcConfig small_config(std::size_t c1 = 5, std::size_t c2 = 5) {
  CmcConfig cfg;
  cfg.view1.in_channels = c1;
  cfg.view2.in_channels = c2;
  return cfg;
}

}  // namespace

TEST_CASE("encoder config validation and shape arithmetic") {
  EncoderConfig cfg;
  cfg.in_channels = 3;
  CHECK(cfg.output_side(32) == 2);
  cfg.in_channels = 0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg.in_channels = 3;
  cfg.stage_widths.clear();
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg.stage_widths = {16, 32};
  cfg.embedding_dim = 64;
  CHECK_THROWS_AS(cfg.validate(), UsageError);  // last stage must produce d_z
  cfg.stage_widths = {16, 1};
  cfg.embedding_dim = 1;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  EncoderConfig round = EncoderConfig::from_json(EncoderConfig{}.to_json());
  CHECK(round == EncoderConfig{});
}

TEST_CASE("zero input through zero-initialized encoder gives a zero embedding") {
  Engine rng = make_engine(1, "init");
  EncoderConfig cfg;
  cfg.in_channels = 2;
  Encoder<float> enc(cfg, rng);
  for (auto& [name, t] : enc.parameters()) {
    if (name.find("conv.weight") != std::string::npos) std::fill(t.data().begin(), t.data().end(), 0.0f);
  }
  Tape<float> tape;
  const auto z = enc.forward(tape, Tensor<float>({2, 2, 32, 32}, 0.0f), false);
  CHECK(z.shape() == Shape{2, 64});
  for (const float v : z.data()) CHECK(v == 0.0f);
}

TEST_CASE("eval-mode encoding is deterministic and independent of batch composition") {
  CmcModel<float> model(small_config(), 3);
  const auto a = random_tensor<float>({4, 5, 32, 32}, 10), b = random_tensor<float>({4, 5, 32, 32}, 11);
  const auto f1 = model.extract_features(a, b);
  const auto f2 = model.extract_features(a, b);
  CHECK(values(f1) == values(f2));
  CHECK(f1.shape() == Shape{4, 128});

  // Chip 2 alone and in a different batch.
  Tensor<float> a1({1, 5, 32, 32}), b1({1, 5, 32, 32});
  std::copy_n(a.ptr() + 2 * 5 * 1024, 5 * 1024, a1.ptr());
  std::copy_n(b.ptr() + 2 * 5 * 1024, 5 * 1024, b1.ptr());
  const auto alone = model.extract_features(a1, b1);
  CHECK(std::vector<float>(f1.ptr() + 2 * 128, f1.ptr() + 3 * 128) == values(alone));
}

TEST_CASE("extract_features concatenates (z1, z2) in view order") {
  CmcModel<double> model(small_config(5, 3), 4);
  const auto a = random_tensor<double>({2, 5, 16, 16}, 1), b = random_tensor<double>({2, 3, 16, 16}, 2);
  Tape<double> tape;
  auto [z1, z2] = model.encode(tape, a, b, false);
  const auto f = model.extract_features(a, b);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 64; ++j) {
      CHECK(f[i * 128 + j] == z1[i * 64 + j]);
      CHECK(f[i * 128 + 64 + j] == z2[i * 64 + j]);
    }
  CHECK_THROWS_AS(model.extract_features(b, a), ShapeError);
}

TEST_CASE("projection head output is unit-norm and scale-invariant") {
  Engine rng = make_engine(2, "init");
  ProjectionHead<double> head(4, 4, rng);
  std::fill(head.weight().data().begin(), head.weight().data().end(), 0.0);
  for (std::size_t i = 0; i < 4; ++i) head.weight()[i * 4 + i] = 1.0;
  Tape<double> tape;
  const auto h = head.forward(tape, Tensor<double>({1, 4}, std::vector<double>{3, 4, 0, 0}));
  CHECK(h[0] == doctest::Approx(0.6));
  CHECK(h[1] == doctest::Approx(0.8));
  CHECK(h[2] == 0.0);

  ProjectionHead<float> random_head(64, 32, rng);
  const auto z = random_tensor<float>({6, 64}, 8);
  Tape<float> t2;
  const auto out = random_head.forward(t2, z);
  const auto scaled = random_head.forward(t2, ops::scale(t2, z, 10.0f));
  for (std::size_t r = 0; r < 6; ++r) {
    double ss = 0;
    for (std::size_t c = 0; c < 32; ++c) ss += double(out[r * 32 + c]) * out[r * 32 + c];
    CHECK(std::abs(std::sqrt(ss) - 1.0) < 1e-5);
  }
  // Bias breaks exact scale invariance, so check it with the bias zeroed.
  std::fill(random_head.bias().data().begin(), random_head.bias().data().end(), 0.0f);
  const auto o1 = random_head.forward(t2, z), o2 = random_head.forward(t2, ops::scale(t2, z, 10.0f));
  for (std::size_t i = 0; i < o1.numel(); ++i) CHECK(std::abs(o1[i] - o2[i]) < 1e-6);
  (void)scaled;
}

TEST_CASE("projection rejects a degenerate pre-normalization vector") {
  Engine rng = make_engine(2, "init");
  ProjectionHead<double> head(3, 2, rng);
  Tape<double> tape;
  CHECK_THROWS_AS(head.forward(tape, Tensor<double>({1, 3}, 0.0)), DegenerateInputError);
}

TEST_CASE("classifier head losses") {
  Engine rng = make_engine(3, "init");
  ClassifierHead<double> single(6, 4, TaskMode::single_label, rng);
  std::fill(single.weight().data().begin(), single.weight().data().end(), 0.0);
  const std::vector<Label> classes{std::size_t{0}, std::size_t{3}};
  Tape<double> tape;
  const auto feats = random_tensor<double>({2, 6}, 4);
  CHECK(single.loss(tape, feats, classes).item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  const std::vector<Label> wrong{std::size_t{0}, std::size_t{9}};
  CHECK_THROWS_AS(single.loss(tape, feats, wrong), ShapeError);
  const std::vector<Label> hot_for_single{std::vector<std::uint8_t>{1, 0, 0, 0}, std::size_t{1}};
  CHECK_THROWS_AS(single.loss(tape, feats, hot_for_single), ShapeError);

  ClassifierHead<double> multi(6, 3, TaskMode::multi_label, rng);
  std::fill(multi.weight().data().begin(), multi.weight().data().end(), 0.0);
  const std::vector<Label> hot{std::vector<std::uint8_t>{1, 0, 1}, std::vector<std::uint8_t>{0, 0, 0}};
  CHECK(multi.loss(tape, feats, hot).item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  const std::vector<Label> short_hot{std::vector<std::uint8_t>{1, 0}, std::vector<std::uint8_t>{0, 1}};
  CHECK_THROWS_AS(multi.loss(tape, feats, short_hot), ShapeError);

  // Independent evaluation of the mean binary cross-entropy.
  ClassifierHead<double> rnd(6, 3, TaskMode::multi_label, rng);
  const auto logits = rnd.logits(tape, feats);
  double expect = 0;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double x = logits[i * 3 + c];
      const double y = std::get<std::vector<std::uint8_t>>(hot[i])[c];
      const double s = 1.0 / (1.0 + std::exp(-x));
      expect += -(y * std::log(s) + (1 - y) * std::log(1 - s));
    }
  CHECK(std::abs(rnd.loss(tape, feats, hot).item() - expect / 6.0) < 1e-6);
}

TEST_CASE("default encoder pair stays under 500k parameters") {
  CmcModel<float> model(small_config(), 1);
  CHECK(model.parameter_count() < 500000);
}

TEST_CASE("one backward of the two-view loss reaches every parameter") {
  CmcModel<float> model(small_config(), 5);
  const auto a = random_tensor<float>({6, 5, 32, 32}, 1), b = random_tensor<float>({6, 5, 32, 32}, 2);
  MemoryBank<float> bank(20, 32, 0.5, 3);
  const std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
  ContrastiveConfig cc;
  cc.k = 19;
  Engine rng = make_engine(4, "negatives");
  Tape<float> tape;
  auto [z1, z2] = model.encode(tape, a, b, true);
  auto [h1, h2] = model.project(tape, z1, z2);
  tape.backward(symmetric_loss(tape, h1, h2, bank, idx, cc, rng));
  for (const auto& [name, p] : model.parameters()) {
    double ss = 0;
    for (const float g : p.grad()) ss += double(g) * g;
    CAPTURE(name);
    CHECK(ss > 0);
  }
}

TEST_CASE("kaiming-uniform initialization stays within sqrt(6/fan_in)") {
  Engine rng = make_engine(6, "init");
  Tensor<float> w({32, 16, 3, 3});
  kaiming_uniform(w, 16 * 9, rng);
  const float bound = std::sqrt(6.0f / 144.0f);
  float lo = 1, hi = -1;
  for (const float v : w.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= -bound);
  CHECK(hi <= bound);
  CHECK(hi > 0.9f * bound);
  CHECK(lo < -0.9f * bound);
}

TEST_CASE("saved weights reproduce features bit-identically after reload") {
  TempDir dir("nn_weights");
  CmcModel<float> model(small_config(), 7);
  auto state = model.parameters();
  for (auto& b : model.buffers()) state.push_back(b);
  // Move the running statistics away from their defaults first.
  const auto a = random_tensor<float>({4, 5, 32, 32}, 1), b = random_tensor<float>({4, 5, 32, 32}, 2);
  Tape<float> tape;
  model.encode(tape, a, b, true);
  save_tensors(dir.path(), state);

  CmcModel<float> other(small_config(), 99);
  auto other_state = other.parameters();
  for (auto& t : other.buffers()) other_state.push_back(t);
  load_tensors(dir.path(), other_state);
  CHECK(values(model.extract_features(a, b)) == values(other.extract_features(a, b)));

  CmcModel<float> wrong(small_config(4, 5), 1);
  CHECK_THROWS(load_tensors(dir.path(), wrong.parameters()));
}
