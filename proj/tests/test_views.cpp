#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "mvc/error.hpp"
#include "mvc/views.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mvc;
using namespace mvc::testing;

namespace {

// Inverse transform used only to check the forward conversion round-trips.
std::array<double, 3> lab_to_rgb(double l, double a, double b) {
  const double xn = 0.4124564 + 0.3575761 + 0.1804375;
  const double yn = 0.2126729 + 0.7151522 + 0.0721750;
  const double zn = 0.0193339 + 0.1191920 + 0.9503041;
  const double fy = (l + 16.0) / 116.0, fx = fy + a / 500.0, fz = fy - b / 200.0;
  auto finv = [](double t) {
    const double d = 6.0 / 29.0;
    return t > d ? t * t * t : 3 * d * d * (t - 4.0 / 29.0);
  };
  const double x = xn * finv(fx), y = yn * finv(fy), z = zn * finv(fz);
  const double lin[3] = {3.2404542 * x - 1.5371385 * y - 0.4985314 * z,
                         -0.9692660 * x + 1.8760108 * y + 0.0415560 * z,
                         0.0556434 * x - 0.2040259 * y + 1.0572252 * z};
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) {
    const double v = lin[i];
    out[i] = v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1 / 2.4) - 0.055;
  }
  return out;
}

}  // namespace

TEST_CASE("rgb_to_lab fixes white and black exactly") {
  const auto white = rgb_to_lab(1.0, 1.0, 1.0);
  CHECK(white[0] == 100.0);
  CHECK(white[1] == 0.0);
  CHECK(white[2] == 0.0);
  const auto black = rgb_to_lab(0.0, 0.0, 0.0);
  CHECK(black[0] == 0.0);
  CHECK(black[1] == 0.0);
  CHECK(black[2] == 0.0);
}

TEST_CASE("rgb_to_lab matches an independent colorimetry reference") {
  // skimage.color.rgb2lab (D65, 2 degree observer), float64.
  struct Case {
    double r, g, b, l, a, bb;
  };
  const Case cases[] = {
      {0.5, 0.2, 0.8, 40.043671, 60.253958, -65.671827},
      {0.1, 0.9, 0.3, 80.210121, -74.678838, 59.544967},
      {0.04, 0.03, 0.02, 2.195658, 0.312128, 1.200186},
      {0.7, 0.7, 0.7, 72.759242, -0.001878, 0.003561},
      {1.0, 0.0, 0.0, 53.240588, 80.092308, 67.202751},
      {0.0, 0.0, 1.0, 32.295673, 79.185591, -107.857300},
  };
  for (const auto& c : cases) {
    const auto lab = rgb_to_lab(c.r, c.g, c.b);
    CHECK(std::abs(lab[0] - c.l) < 0.01);
    CHECK(std::abs(lab[1] - c.a) < 0.01);
    CHECK(std::abs(lab[2] - c.bb) < 0.01);
  }
}

TEST_CASE("rgb_to_lab round-trips through the inverse") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0;
  for (int i = 0; i < 2000; ++i) {
    const double r = u(rng), g = u(rng), b = u(rng);
    const auto lab = rgb_to_lab(r, g, b);
    const auto back = lab_to_rgb(lab[0], lab[1], lab[2]);
    worst = std::max({worst, std::abs(back[0] - r), std::abs(back[1] - g), std::abs(back[2] - b)});
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("tensor rgb_to_lab agrees with the pixel form and rejects out-of-range input") {
  Tensor<float> rgb({3, 2, 2}, std::vector<float>{0.5f, 1, 0, 0.2f, 0.2f, 1, 0, 0.9f, 0.8f, 1, 0, 0.3f});
  const auto lab = rgb_to_lab(rgb);
  for (std::size_t p = 0; p < 4; ++p) {
    const auto ref = rgb_to_lab(rgb[p], rgb[4 + p], rgb[8 + p]);
    for (std::size_t ch = 0; ch < 3; ++ch) CHECK(std::abs(lab[ch * 4 + p] - ref[ch]) < 1e-3);
  }
  Tensor<float> bad({3, 1, 1}, std::vector<float>{1.2f, 0, 0});
  CHECK_THROWS_AS(rgb_to_lab(bad), DataError);
  CHECK_THROWS_AS(rgb_to_lab(Tensor<float>({2, 1, 1})), ShapeError);
}

TEST_CASE("split_lab scales and partitions the channels") {
  const auto lab = rgb_to_lab(Tensor<float>({3, 2, 2}, 1.0f));
  const auto pair = split_lab(lab);
  CHECK(pair.view1.dim(0) == 1);
  CHECK(pair.view2.dim(0) == 2);
  for (std::size_t i = 0; i < 4; ++i) CHECK(pair.view1[i] == doctest::Approx(1.0));
  for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(pair.view2[i]) < 1e-6);

  Tensor<float> arbitrary({3, 1, 2}, std::vector<float>{50, 20, -30, 40, 10, -110});
  const auto p = split_lab(arbitrary);
  CHECK(p.view1[0] * 100 == doctest::Approx(50));
  CHECK(p.view1[1] * 100 == doctest::Approx(20));
  CHECK(p.view2[0] * 110 == doctest::Approx(-30));
  CHECK(p.view2[3] * 110 == doctest::Approx(-110));
  CHECK_THROWS(split_lab(Tensor<float>({2, 1, 1})));
}

TEST_CASE("fixed band partition follows the spectral table") {
  const auto [v1, v2] = fixed_band_indices(sentinel2_bands());
  CHECK(v1 == std::vector<std::size_t>{0, 6, 7, 8, 9});
  CHECK(v2 == std::vector<std::size_t>{1, 2, 3, 4, 5});
  CHECK(fixed_view1_bands() == std::vector<std::string>{"2", "8", "8A", "11", "12"});
  CHECK(fixed_view2_bands() == std::vector<std::string>{"3", "4", "5", "6", "7"});

  // Band 4 (red) all ones lands only in view 2; blue sits with the long bands.
  Tensor<float> chip({10, 2, 2}, 0.0f);
  for (std::size_t p = 0; p < 4; ++p) chip[2 * 4 + p] = 1.0f;
  const auto pair = split_fixed_bands(chip, sentinel2_bands());
  CHECK(pair.view1.dim(0) == 5);
  CHECK(pair.view2.dim(0) == 5);
  for (std::size_t i = 0; i < pair.view1.numel(); ++i) CHECK(pair.view1[i] == 0.0f);
  float total = 0;
  for (std::size_t i = 0; i < pair.view2.numel(); ++i) total += pair.view2[i];
  CHECK(total == 4.0f);
  for (std::size_t p = 0; p < 4; ++p) CHECK(pair.view2[1 * 4 + p] == 1.0f);

  std::vector<std::string> shuffled = sentinel2_bands();
  std::swap(shuffled[0], shuffled[9]);
  const auto [s1, s2] = fixed_band_indices(shuffled);
  CHECK(s1 == std::vector<std::size_t>{9, 6, 7, 8, 0});
  CHECK(s2 == std::vector<std::size_t>{1, 2, 3, 4, 5});

  std::vector<std::string> unknown = sentinel2_bands();
  unknown[3] = "1";
  CHECK_THROWS(fixed_band_indices(unknown));
  CHECK_THROWS(split_fixed_bands(Tensor<float>({9, 2, 2}), sentinel2_bands()));
}

TEST_CASE("pca partition rule") {
  std::vector<double> ev(10);
  for (std::size_t i = 0; i < 10; ++i) ev[i] = 10.0 - static_cast<double>(i);
  const auto [v1, v2] = pca_partition(ev);
  CHECK(v1 == std::vector<std::size_t>{0, 6, 7, 8, 9});
  CHECK(v2 == std::vector<std::size_t>{1, 2, 3, 4, 5});

  PcaBasis basis;
  basis.channels = 10;
  basis.means.assign(10, 0.0);
  basis.components.assign(100, 0.0);
  for (std::size_t i = 0; i < 10; ++i) basis.components[i * 10 + i] = 1.0;
  basis.eigenvalues = ev;
  const auto spec = make_pca_spec(sentinel2_bands(), basis);
  CHECK(view1_variance_share(spec) == doctest::Approx(20.0 / 55.0).epsilon(1e-12));

  for (std::size_t c = 3; c <= 16; ++c) {
    std::vector<double> e(c);
    for (std::size_t i = 0; i < c; ++i) e[i] = static_cast<double>(c - i);
    const auto [a, b] = pca_partition(e);
    std::vector<std::size_t> all(a);
    all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expected(c);
    std::iota(expected.begin(), expected.end(), std::size_t{0});
    CHECK(all == expected);
    CHECK(a.front() == 0);
    CHECK(a.size() == c / 2);
  }
  CHECK_THROWS(pca_partition(std::vector<double>{2.0, 1.0}));
}

TEST_CASE("pca_fit matches a brute-force eigendecomposition of the pixel covariance") {
  const std::size_t c = 10, side = 12;
  const auto chips = correlated_chips(20, c, side, 17);
  // All pixels of every chip are used, so the sample is fixed.
  const auto basis = pca_fit(chips, side * side, 3);
  CHECK(basis.orthonormality_error() < 1e-6);

  const std::size_t area = side * side, n = chips.size() * area;
  std::vector<double> mean(c, 0.0), cov(c * c, 0.0);
  for (const auto& chip : chips)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < area; ++p) mean[ch] += chip[ch * area + p];
  for (auto& m : mean) m /= static_cast<double>(n);
  for (const auto& chip : chips) {
    for (std::size_t p = 0; p < area; ++p) {
      for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          cov[i * c + j] += (chip[i * area + p] - mean[i]) * (chip[j * area + p] - mean[j]);
        }
      }
    }
  }
  for (auto& v : cov) v /= static_cast<double>(n - 1);
  std::vector<double> values, vectors;
  jacobi_eigen(cov, c, values, vectors);
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return values[x] > values[y]; });

  for (std::size_t i = 0; i < c; ++i) CHECK(std::abs(basis.means[i] - mean[i]) < 1e-9 * (1 + std::abs(mean[i])));
  for (std::size_t j = 0; j < c; ++j) {
    const double ref = values[order[j]];
    CHECK(std::abs(basis.eigenvalues[j] - ref) <= 1e-6 * ref);
    double dot = 0;
    for (std::size_t r = 0; r < c; ++r) dot += basis.component(r, j) * vectors[r * c + order[j]];
    CHECK(std::abs(std::abs(dot) - 1.0) < 1e-6);
  }
  // Sign convention: largest-magnitude entry of every component is positive.
  for (std::size_t j = 0; j < c; ++j) {
    double best = 0;
    for (std::size_t r = 0; r < c; ++r) {
      if (std::abs(basis.component(r, j)) > std::abs(best)) best = basis.component(r, j);
    }
    CHECK(best > 0);
  }
}

TEST_CASE("pca_fit on a diagonal covariance recovers the axes") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Tensor<float>> chips;
  for (int i = 0; i < 100; ++i) {
    Tensor<float> t({2, 10, 10});
    for (std::size_t p = 0; p < 100; ++p) {
      t[p] = static_cast<float>(g(rng));
      t[100 + p] = static_cast<float>(2.0 * g(rng));
    }
    chips.push_back(std::move(t));
  }
  const auto basis = pca_fit(chips, 100, 0);
  CHECK(basis.eigenvalues[0] == doctest::Approx(4.0).epsilon(0.05));
  CHECK(basis.eigenvalues[1] == doctest::Approx(1.0).epsilon(0.05));
  CHECK(std::abs(basis.component(1, 0)) > 0.99);
  CHECK(std::abs(basis.component(0, 1)) > 0.99);
}

TEST_CASE("pca_fit is seed-deterministic and validates its input") {
  const auto chips = correlated_chips(6, 10, 16, 2);
  const auto a = pca_fit(chips, 144, 11);
  const auto b = pca_fit(chips, 144, 11);
  CHECK(a.components == b.components);
  CHECK(a.eigenvalues == b.eigenvalues);
  const auto c = pca_fit(chips, 144, 12);
  CHECK(c.eigenvalues != a.eigenvalues);
  CHECK_THROWS(pca_fit(std::span(chips).subspan(0, 1), 144, 0));
  CHECK_THROWS(pca_fit(chips, 16 * 16 + 1, 0));
}

TEST_CASE("pca views decorrelate and standardize the components") {
  const auto chips = correlated_chips(30, 10, 16, 21);
  const auto spec = make_pca_spec(sentinel2_bands(), pca_fit(chips, 256, 1));
  CHECK(spec.channels_view1 == std::vector<std::size_t>{0, 6, 7, 8, 9});
  std::vector<std::vector<double>> comps(10);
  for (const auto& chip : chips) {
    const auto pair = apply_view_spec(chip, spec);
    const std::size_t area = 256;
    for (std::size_t k = 0; k < 5; ++k) {
      for (std::size_t p = 0; p < area; ++p) {
        comps[spec.channels_view1[k]].push_back(pair.view1[k * area + p]);
        comps[spec.channels_view2[k]].push_back(pair.view2[k * area + p]);
      }
    }
  }
  const double n = static_cast<double>(comps[0].size());
  for (std::size_t i = 0; i < 10; ++i) {
    double var = 0;
    for (const double v : comps[i]) var += v * v;
    CHECK(var / (n - 1) == doctest::Approx(1.0).epsilon(1e-3));
    for (std::size_t j = i + 1; j < 10; ++j) {
      double cv = 0;
      for (std::size_t p = 0; p < comps[i].size(); ++p) cv += comps[i][p] * comps[j][p];
      CHECK(std::abs(cv / (n - 1)) < 1e-3);
    }
  }

  // Data equal to the fitted mean maps to zeros.
  Tensor<float> at_mean({10, 2, 2});
  for (std::size_t ch = 0; ch < 10; ++ch)
    for (std::size_t p = 0; p < 4; ++p) at_mean[ch * 4 + p] = static_cast<float>(spec.pca->means[ch]);
  const auto zero = apply_view_spec(at_mean, spec);
  for (std::size_t i = 0; i < zero.view1.numel(); ++i) CHECK(std::abs(zero.view1[i]) < 1e-4);
  for (std::size_t i = 0; i < zero.view2.numel(); ++i) CHECK(std::abs(zero.view2[i]) < 1e-4);
}

TEST_CASE("view specs are disjoint, covering, deterministic and serializable") {
  TempDir dir("views");
  const auto chips = correlated_chips(4, 10, 8, 4);
  const std::vector<ViewSpec> specs = {make_lab_spec(sentinel2_bands()),
                                       make_fixed_band_spec(sentinel2_bands(), chips),
                                       make_pca_spec(sentinel2_bands(), pca_fit(chips, 64, 0))};
  Tensor<float> chip({10, 8, 8});
  for (std::size_t i = 0; i < chip.numel(); ++i) chip[i] = 0.05f + 0.9f * static_cast<float>((i * 37) % 101) / 101.0f;
  for (const auto& spec : specs) {
    spec.validate();
    const auto a = apply_view_spec(chip, spec);
    const auto b = apply_view_spec(chip, spec);
    CHECK(values(a.view1) == values(b.view1));
    CHECK(values(a.view2) == values(b.view2));
    CHECK(a.view1.dim(1) == a.view2.dim(1));

    const auto path = dir.path() / (spec.id() + ".json");
    spec.save(path);
    const auto loaded = ViewSpec::load(path);
    CHECK(loaded.kind == spec.kind);
    CHECK(loaded.channels_view1 == spec.channels_view1);
    CHECK(loaded.channels_view2 == spec.channels_view2);
    const auto c = apply_view_spec(chip, loaded);
    CHECK(values(c.view1) == values(a.view1));
    CHECK(values(c.view2) == values(a.view2));
  }
  CHECK(apply_view_spec(chip, specs[0]).view1.dim(0) == 1);
  CHECK_THROWS(apply_view_spec(Tensor<float>({9, 8, 8}), specs[1]));

  ViewSpec overlapping = specs[1];
  overlapping.channels_view2[0] = overlapping.channels_view1[0];
  CHECK_THROWS(overlapping.validate());
}
