#include "gradient_suite.hpp"

#include "mvc/contrastive.hpp"

namespace mvc::testing {

namespace {

using T = double;
using ops::sum;

// Reduces any tensor to a scalar with fixed random weights, so every output
// entry contributes a distinct amount to the loss.
Tensor<T> weighted_sum(Tape<T>& tape, const Tensor<T>& y, std::uint64_t seed) {
  const auto w = random_tensor<T>(y.shape(), seed, 0.5, 1.5);
  return sum(tape, ops::mul(tape, y, w));
}

NamedCheck check(std::string name, const NamedTensors<T>& inputs, auto&& fn, std::size_t per_tensor = 64) {
  return {std::move(name), grad_check(fn, inputs, per_tensor)};
}

}  // namespace

std::vector<NamedCheck> op_gradient_checks(std::size_t points) {
  std::vector<NamedCheck> out;
  for (std::size_t point = 0; point < points; ++point) {
  const std::uint64_t o = 1000 * point;

  {
    auto x = random_tensor<T>({2, 3, 7, 6}, o + 11), w = random_tensor<T>({4, 3, 3, 3}, o + 12);
    for (const std::size_t stride : {1, 2}) {
      out.push_back(check("conv2d stride " + std::to_string(stride), {{"x", x}, {"w", w}}, [&](Tape<T>& t) {
        return weighted_sum(t, ops::conv2d(t, x, w, stride, 1), o + 13);
      }));
    }
  }
  {
    auto x = random_tensor<T>({3, 8}, o + 21);
    out.push_back(check("relu", {{"x", x}}, [&](Tape<T>& t) { return weighted_sum(t, ops::relu(t, x), o + 22); }));
  }
  {
    auto x = random_tensor<T>({4, 5}, o + 31), w = random_tensor<T>({3, 5}, o + 32), b = random_tensor<T>({3}, o + 33);
    out.push_back(check("linear", {{"x", x}, {"w", w}, {"b", b}}, [&](Tape<T>& t) {
      return weighted_sum(t, ops::linear(t, x, w, b), o + 34);
    }));
  }
  {
    auto x = random_tensor<T>({2, 3, 4, 6}, o + 41);
    out.push_back(check("avg_pool2d", {{"x", x}}, [&](Tape<T>& t) { return weighted_sum(t, ops::avg_pool2d(t, x, 2), o + 42); }));
    out.push_back(check("global_avg_pool", {{"x", x}}, [&](Tape<T>& t) {
      return weighted_sum(t, ops::global_avg_pool(t, x), o + 43);
    }));
  }
  for (const bool training : {true, false}) {
    auto x = random_tensor<T>({3, 4, 3, 3}, o + 51), gamma = random_tensor<T>({4}, o + 52, 0.5, 1.5),
         beta = random_tensor<T>({4}, o + 53);
    auto rm = random_tensor<T>({4}, o + 54), rv = random_tensor<T>({4}, o + 55, 0.5, 2.0);
    out.push_back(check(std::string("batch_norm2d ") + (training ? "train" : "eval"),
                        {{"x", x}, {"gamma", gamma}, {"beta", beta}}, [&](Tape<T>& t) {
                          Tensor<T> m = rm.clone(), v = rv.clone();
                          return weighted_sum(t, ops::batch_norm2d(t, x, gamma, beta, m, v, {training, 0.1, 1e-5}), o + 56);
                        }));
  }
  {
    auto x = random_tensor<T>({3, 5}, o + 61);
    out.push_back(check("l2_normalize", {{"x", x}}, [&](Tape<T>& t) {
      return weighted_sum(t, ops::l2_normalize(t, x, 1), o + 62);
    }));
  }
  {
    auto logits = random_tensor<T>({4, 5}, o + 71, -3, 3);
    const std::vector<std::size_t> targets{0, 4, 2, 2};
    out.push_back(check("softmax_cross_entropy", {{"logits", logits}}, [&](Tape<T>& t) {
      return ops::softmax_cross_entropy(t, logits, std::span<const std::size_t>(targets));
    }));
    Tensor<T> hot({4, 5}, std::vector<T>{1, 0, 0, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1});
    out.push_back(check("sigmoid_binary_cross_entropy", {{"logits", logits}}, [&](Tape<T>& t) {
      return ops::sigmoid_binary_cross_entropy(t, logits, hot);
    }));
  }
  {
    auto a = random_tensor<T>({2, 3}, o + 81), b = random_tensor<T>({2, 3}, o + 82);
    out.push_back(check("add", {{"a", a}, {"b", b}}, [&](Tape<T>& t) { return weighted_sum(t, ops::add(t, a, b), o + 83); }));
    out.push_back(check("mul", {{"a", a}, {"b", b}}, [&](Tape<T>& t) { return weighted_sum(t, ops::mul(t, a, b), o + 84); }));
    out.push_back(check("scale", {{"a", a}}, [&](Tape<T>& t) { return weighted_sum(t, ops::scale(t, a, T(-2.5)), o + 85); }));
    out.push_back(check("sum", {{"a", a}}, [&](Tape<T>& t) { return ops::sum(t, a); }));
    out.push_back(check("reshape", {{"a", a}}, [&](Tape<T>& t) {
      return weighted_sum(t, ops::reshape(t, a, {3, 2}), o + 86);
    }));
  }
  {
    auto a = random_tensor<T>({2, 3, 2}, o + 91), b = random_tensor<T>({2, 1, 2}, o + 92);
    out.push_back(check("concat", {{"a", a}, {"b", b}}, [&](Tape<T>& t) {
      return weighted_sum(t, ops::concat(t, {a, b}, 1), o + 93);
    }));
    out.push_back(check("slice", {{"a", a}}, [&](Tape<T>& t) { return weighted_sum(t, ops::slice(t, a, 1, 1, 2), o + 94); }));
    const std::vector<std::size_t> sizes{1, 2};
    out.push_back(check("split", {{"a", a}}, [&](Tape<T>& t) {
      auto parts = ops::split(t, a, 1, std::span<const std::size_t>(sizes));
      return ops::add(t, weighted_sum(t, parts[0], o + 95), weighted_sum(t, parts[1], o + 96));
    }));
  }
  {
    // Off-sphere inputs exercise the explicit norm division in the cosine.
    auto anchor = random_tensor<T>({3, 4}, o + 101), positive = random_tensor<T>({3, 4}, o + 102),
         negatives = random_tensor<T>({3, 5, 4}, o + 103);
    out.push_back(check("contrastive_loss", {{"anchor", anchor}, {"positive", positive}, {"negatives", negatives}},
                        [&](Tape<T>& t) { return contrastive_loss(t, anchor, positive, negatives, 0.5); }));
    auto bank = random_unit_rows<T>(9, 4, o + 104);
    const std::vector<std::size_t> rows{0, 3, 8, 8, 1, 2, 5, 6, 7, 4, 4, 0, 1, 2, 3};
    out.push_back(check("contrastive_loss_banked", {{"anchor", anchor}, {"positive", positive}}, [&](Tape<T>& t) {
      return contrastive_loss_banked(t, anchor, positive, bank, std::span<const std::size_t>(rows), 5, 0.07);
    }));
  }
  {
    auto h1 = random_unit_rows<T>(4, 6, o + 111), h2 = random_unit_rows<T>(4, 6, o + 112);
    MemoryBank<T> bank(12, 6, 0.5, o + 113);
    const std::vector<std::size_t> idx{0, 5, 7, 11};
    ContrastiveConfig cfg;
    cfg.k = 6;
    out.push_back(check("symmetric_loss", {{"h1", h1}, {"h2", h2}}, [&](Tape<T>& t) {
      Engine rng = make_engine(7, "negatives");
      return symmetric_loss(t, h1, h2, bank, idx, cfg, rng);
    }));
  }
  }
  return out;
}

NamedCheck model_gradient_check() {
  CmcConfig cfg;
  cfg.view1.in_channels = 5;
  cfg.view2.in_channels = 5;
  CmcModel<T> model(cfg, 2024);
  const auto v1 = random_tensor<T>({4, 5, 16, 16}, 121);
  const auto v2 = random_tensor<T>({4, 5, 16, 16}, 122);
  MemoryBank<T> bank(16, cfg.projection_dim, 0.5, 123);
  const std::vector<std::size_t> idx{2, 3, 9, 14};
  ContrastiveConfig cc;
  cc.k = 15;
  auto loss = [&](Tape<T>& t) {
    auto [z1, z2] = model.encode(t, v1, v2, true);
    auto [h1, h2] = model.project(t, z1, z2);
    Engine rng = make_engine(5, "negatives");
    return symmetric_loss(t, h1, h2, bank, idx, cc, rng);
  };
  return {"symmetric loss through default encoders", grad_check(loss, model.parameters(), 24)};
}

}  // namespace mvc::testing
