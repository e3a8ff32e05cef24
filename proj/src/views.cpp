#include "mvc/views.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "mvc/rng.hpp"
#include "mvc/serialize.hpp"

namespace mvc {

using nlohmann::json;

std::string to_string(ViewKind kind) {
  switch (kind) {
    case ViewKind::lab: return "lab";
    case ViewKind::fixed_bands: return "bands";
    case ViewKind::pca: return "pca";
  }
  return "?";
}

ViewKind view_kind_from_string(const std::string& s) {
  if (s == "lab") return ViewKind::lab;
  if (s == "bands" || s == "fixed_bands") return ViewKind::fixed_bands;
  if (s == "pca") return ViewKind::pca;
  throw UsageError("unknown view kind '" + s + "' (expected lab, bands or pca)");
}

const std::vector<std::string>& sentinel2_bands() {
  static const std::vector<std::string> bands{"2", "3", "4", "5", "6", "7", "8", "8A", "11", "12"};
  return bands;
}

const std::vector<std::string>& fixed_view1_bands() {
  static const std::vector<std::string> bands{"2", "8", "8A", "11", "12"};
  return bands;
}

const std::vector<std::string>& fixed_view2_bands() {
  static const std::vector<std::string> bands{"3", "4", "5", "6", "7"};
  return bands;
}

double PcaBasis::orthonormality_error() const {
  double worst = 0;
  for (std::size_t i = 0; i < channels; ++i)
    for (std::size_t j = 0; j < channels; ++j) {
      double dot = 0;
      for (std::size_t r = 0; r < channels; ++r) dot += component(r, i) * component(r, j);
      worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  return worst;
}

// ---------------------------------------------------------------- L*a*b*

namespace {

// sRGB primaries to XYZ (D65).
constexpr double kRgbToXyz[3][3] = {{0.4124564, 0.3575761, 0.1804375},
                                    {0.2126729, 0.7151522, 0.0721750},
                                    {0.0193339, 0.1191920, 0.9503041}};
constexpr double kDelta = 6.0 / 29.0;
constexpr double kEpsilon = kDelta * kDelta * kDelta;  // 216/24389
constexpr double kKappa = 24389.0 / 27.0;

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

std::array<double, 3> to_xyz(double r, double g, double b) {
  const double lin[3] = {srgb_to_linear(r), srgb_to_linear(g), srgb_to_linear(b)};
  std::array<double, 3> xyz{};
  for (int i = 0; i < 3; ++i) xyz[i] = kRgbToXyz[i][0] * lin[0] + kRgbToXyz[i][1] * lin[1] + kRgbToXyz[i][2] * lin[2];
  return xyz;
}

// Reference white is the image of sRGB white under the same matrix, so white
// maps to exactly (100, 0, 0).
const std::array<double, 3>& white_point() {
  static const std::array<double, 3> white = to_xyz(1.0, 1.0, 1.0);
  return white;
}

double lab_f(double t) { return t > kEpsilon ? std::cbrt(t) : (kKappa * t + 16.0) / 116.0; }

}  // namespace

std::array<double, 3> rgb_to_lab(double r, double g, double b) {
  for (const double c : {r, g, b}) {
    if (!(c >= 0.0 && c <= 1.0)) throw DataError("rgb_to_lab: value outside [0,1]");
  }
  const auto xyz = to_xyz(r, g, b);
  const auto& w = white_point();
  const double x = xyz[0] / w[0], y = xyz[1] / w[1], z = xyz[2] / w[2];
  const double fx = lab_f(x), fy = lab_f(y), fz = lab_f(z);
  const double l = y > kEpsilon ? 116.0 * fy - 16.0 : kKappa * y;
  return {l, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

Tensor<float> rgb_to_lab(const Tensor<float>& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    throw ShapeError("rgb_to_lab expects [3,H,W], got " + to_string(rgb.shape()));
  }
  const std::size_t area = rgb.dim(1) * rgb.dim(2);
  Tensor<float> lab(rgb.shape());
  for (std::size_t p = 0; p < area; ++p) {
    const auto v = rgb_to_lab(rgb[p], rgb[area + p], rgb[2 * area + p]);
    for (std::size_t c = 0; c < 3; ++c) lab[c * area + p] = static_cast<float>(v[c]);
  }
  return lab;
}

namespace {

Tensor<float> gather_channels(const Tensor<float>& chip, std::span<const std::size_t> idx) {
  const std::size_t area = chip.dim(1) * chip.dim(2);
  Tensor<float> out({idx.size(), chip.dim(1), chip.dim(2)});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(chip.ptr() + idx[i] * area, area, out.ptr() + i * area);
  }
  return out;
}

}  // namespace

ViewPair split_lab(const Tensor<float>& lab) {
  if (lab.rank() != 3 || lab.dim(0) != 3) {
    throw ShapeError("split_lab expects a 3-channel L*a*b* chip, got " + to_string(lab.shape()));
  }
  const std::size_t area = lab.dim(1) * lab.dim(2);
  ViewPair pair{Tensor<float>({1, lab.dim(1), lab.dim(2)}), Tensor<float>({2, lab.dim(1), lab.dim(2)}), "lab"};
  for (std::size_t p = 0; p < area; ++p) {
    pair.view1[p] = lab[p] / 100.0f;
    pair.view2[p] = lab[area + p] / 110.0f;
    pair.view2[area + p] = lab[2 * area + p] / 110.0f;
  }
  return pair;
}

// ---------------------------------------------------------------- bands

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> fixed_band_indices(
    std::span<const std::string> band_order) {
  if (band_order.size() != sentinel2_bands().size()) {
    throw ShapeError("fixed band split needs exactly 10 bands, got " + std::to_string(band_order.size()));
  }
  std::set<std::string> known(sentinel2_bands().begin(), sentinel2_bands().end());
  std::set<std::string> seen;
  for (const auto& b : band_order) {
    if (!known.count(b)) throw UsageError("unknown band name '" + b + "'");
    if (!seen.insert(b).second) throw UsageError("duplicate band name '" + b + "'");
  }
  auto locate = [&](const std::vector<std::string>& names) {
    std::vector<std::size_t> idx;
    for (const auto& n : names) {
      idx.push_back(static_cast<std::size_t>(std::find(band_order.begin(), band_order.end(), n) - band_order.begin()));
    }
    return idx;
  };
  return {locate(fixed_view1_bands()), locate(fixed_view2_bands())};
}

ViewPair split_fixed_bands(const Tensor<float>& chip, std::span<const std::string> band_order) {
  if (chip.rank() != 3 || chip.dim(0) != band_order.size()) {
    throw ShapeError("chip " + to_string(chip.shape()) + " does not match " +
                     std::to_string(band_order.size()) + " band names");
  }
  const auto [v1, v2] = fixed_band_indices(band_order);
  return {gather_channels(chip, v1), gather_channels(chip, v2), "bands"};
}

// ---------------------------------------------------------------- PCA

PcaBasis pca_fit(std::span<const Tensor<float>> chips, std::size_t pixels_per_chip,
                 std::uint64_t seed) {
  if (chips.size() < 2) throw UsageError("pca_fit needs at least 2 chips");
  const std::size_t c = chips.front().dim(0);
  std::vector<double> samples;  // [n][C]
  samples.reserve(chips.size() * pixels_per_chip * c);
  Engine rng = make_engine(seed, "pca");
  std::vector<std::size_t> positions, picked;
  for (const auto& chip : chips) {
    if (chip.rank() != 3 || chip.dim(0) != c) throw ShapeError("pca_fit: chips have differing channel counts");
    const std::size_t area = chip.dim(1) * chip.dim(2);
    if (pixels_per_chip > area || pixels_per_chip < 1) {
      throw UsageError("pca_fit: pixels_per_chip must be in [1, H*W]");
    }
    positions.resize(area);
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    picked.clear();
    std::sample(positions.begin(), positions.end(), std::back_inserter(picked), pixels_per_chip, rng);
    for (const std::size_t p : picked)
      for (std::size_t ch = 0; ch < c; ++ch) samples.push_back(chip[ch * area + p]);
  }
  const std::size_t n = samples.size() / c;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(samples.data(), n, c);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("pca_fit: eigendecomposition failed");

  PcaBasis basis;
  basis.channels = c;
  basis.means.assign(mean.data(), mean.data() + c);
  basis.components.assign(c * c, 0.0);
  basis.eigenvalues.resize(c);
  for (std::size_t j = 0; j < c; ++j) {
    const auto src = static_cast<Eigen::Index>(c - 1 - j);  // Eigen sorts ascending
    Eigen::VectorXd v = solver.eigenvectors().col(src);
    Eigen::Index big = 0;
    v.cwiseAbs().maxCoeff(&big);
    if (v(big) < 0) v = -v;
    for (std::size_t r = 0; r < c; ++r) basis.components[r * c + j] = v(static_cast<Eigen::Index>(r));
    basis.eigenvalues[j] = solver.eigenvalues()(src);
    if (basis.eigenvalues[j] < 1e-10) ++basis.rank_deficient;
  }
  return basis;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> pca_partition(
    std::span<const double> eigenvalues) {
  const std::size_t c = eigenvalues.size();
  if (c < 3) throw UsageError("pca_partition needs at least 3 components");
  const std::size_t weakest = c / 2 - 1;
  std::vector<std::size_t> v1{0}, v2;
  for (std::size_t i = 1; i < c; ++i) (i >= c - weakest ? v1 : v2).push_back(i);
  return {v1, v2};
}

double view1_variance_share(const ViewSpec& spec) {
  if (!spec.pca) throw UsageError("variance share is only defined for PCA view specs");
  const auto& ev = spec.pca->eigenvalues;
  const double total = std::accumulate(ev.begin(), ev.end(), 0.0);
  double v1 = 0;
  for (const auto i : spec.channels_view1) v1 += ev[i];
  return v1 / total;
}

// ---------------------------------------------------------------- specs

namespace {

std::size_t band_index(std::span<const std::string> names, const std::string& band) {
  const auto it = std::find(names.begin(), names.end(), band);
  if (it == names.end()) throw UsageError("band '" + band + "' not present in the dataset");
  return static_cast<std::size_t>(it - names.begin());
}

void check_partition(std::span<const std::size_t> a, std::span<const std::size_t> b, std::size_t total) {
  std::vector<int> hits(total, 0);
  for (const auto* part : {&a, &b})
    for (const auto i : *part) {
      if (i >= total) throw DataError("view channel index out of range");
      ++hits[i];
    }
  for (const int h : hits) {
    if (h != 1) throw DataError("view channel sets must be disjoint and cover every channel");
  }
  if (a.empty() || b.empty()) throw DataError("each view needs at least one channel");
}

}  // namespace

void ViewSpec::validate() const {
  switch (kind) {
    case ViewKind::lab:
      if (rgb_bands.size() != 3) throw DataError("lab spec needs 3 RGB band indices");
      check_partition(channels_view1, channels_view2, 3);
      break;
    case ViewKind::fixed_bands:
      check_partition(channels_view1, channels_view2, band_names.size());
      if (band_mean.size() != band_names.size() || band_std.size() != band_names.size()) {
        throw DataError("bands spec needs per-band mean and std");
      }
      for (const double s : band_std) {
        if (!(s > 0)) throw DataError("bands spec has a non-positive band std");
      }
      break;
    case ViewKind::pca: {
      if (!pca) throw DataError("pca spec without a basis");
      const auto& p = *pca;
      if (p.channels != band_names.size() || p.means.size() != p.channels ||
          p.components.size() != p.channels * p.channels || p.eigenvalues.size() != p.channels) {
        throw DataError("pca basis dimensions do not match the band count");
      }
      if (p.orthonormality_error() >= 1e-6) throw DataError("pca basis is not orthonormal");
      if (!std::is_sorted(p.eigenvalues.rbegin(), p.eigenvalues.rend())) {
        throw DataError("pca eigenvalues are not sorted descending");
      }
      check_partition(channels_view1, channels_view2, p.channels);
      break;
    }
  }
}

json ViewSpec::to_json(const std::string& basis_ref) const {
  json j{{"kind", to_string(kind)},
         {"band_names", band_names},
         {"channels_view1", channels_view1},
         {"channels_view2", channels_view2}};
  if (kind == ViewKind::lab) j["rgb_bands"] = rgb_bands;
  if (kind == ViewKind::fixed_bands) {
    j["band_mean"] = band_mean;
    j["band_std"] = band_std;
  }
  if (pca) {
    j["pca"] = json{{"basis", basis_ref},
                    {"means", pca->means},
                    {"eigenvalues", pca->eigenvalues},
                    {"rank_deficient", pca->rank_deficient}};
  }
  return j;
}

void ViewSpec::save(const std::filesystem::path& path) const {
  validate();
  std::string ref;
  if (pca) {
    ref = path.stem().string() + ".pca_basis";
    save_tensor(path.parent_path() / ref,
                Tensor<double>({pca->channels, pca->channels}, pca->components));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(ref).dump(2) << '\n';
}

ViewSpec ViewSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open view spec " + path.string());
  ViewSpec spec;
  try {
    const json j = json::parse(in);
    spec.kind = view_kind_from_string(j.at("kind").get<std::string>());
    spec.band_names = j.at("band_names").get<std::vector<std::string>>();
    spec.channels_view1 = j.at("channels_view1").get<std::vector<std::size_t>>();
    spec.channels_view2 = j.at("channels_view2").get<std::vector<std::size_t>>();
    if (j.contains("rgb_bands")) spec.rgb_bands = j["rgb_bands"].get<std::vector<std::size_t>>();
    if (j.contains("band_mean")) spec.band_mean = j["band_mean"].get<std::vector<double>>();
    if (j.contains("band_std")) spec.band_std = j["band_std"].get<std::vector<double>>();
    if (j.contains("pca")) {
      const auto& p = j["pca"];
      PcaBasis basis;
      basis.means = p.at("means").get<std::vector<double>>();
      basis.eigenvalues = p.at("eigenvalues").get<std::vector<double>>();
      basis.rank_deficient = p.value("rank_deficient", std::size_t{0});
      basis.channels = basis.means.size();
      const auto tensor = load_tensor<double>(path.parent_path() / p.at("basis").get<std::string>());
      if (tensor.shape() != Shape{basis.channels, basis.channels}) {
        throw FormatError("pca basis tensor has shape " + to_string(tensor.shape()));
      }
      basis.components.assign(tensor.data().begin(), tensor.data().end());
      spec.pca = std::move(basis);
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed view spec " + path.string() + ": " + e.what());
  }
  spec.validate();
  return spec;
}

ViewSpec make_lab_spec(std::span<const std::string> band_names) {
  ViewSpec spec;
  spec.kind = ViewKind::lab;
  spec.band_names.assign(band_names.begin(), band_names.end());
  spec.rgb_bands = {band_index(band_names, "4"), band_index(band_names, "3"), band_index(band_names, "2")};
  spec.channels_view1 = {0};
  spec.channels_view2 = {1, 2};
  spec.validate();
  return spec;
}

ViewSpec make_fixed_band_spec(std::span<const std::string> band_names,
                              std::span<const Tensor<float>> chips) {
  ViewSpec spec;
  spec.kind = ViewKind::fixed_bands;
  spec.band_names.assign(band_names.begin(), band_names.end());
  std::tie(spec.channels_view1, spec.channels_view2) = fixed_band_indices(band_names);
  const std::size_t c = band_names.size();
  if (chips.empty()) throw UsageError("band statistics need at least one chip");
  std::vector<double> sum(c, 0.0), sq(c, 0.0);
  std::size_t count = 0;
  for (const auto& chip : chips) {
    if (chip.dim(0) != c) throw ShapeError("chip band count differs from the band names");
    const std::size_t area = chip.dim(1) * chip.dim(2);
    for (std::size_t b = 0; b < c; ++b)
      for (std::size_t p = 0; p < area; ++p) sum[b] += chip[b * area + p];
    count += area;
  }
  spec.band_mean.resize(c);
  for (std::size_t b = 0; b < c; ++b) spec.band_mean[b] = sum[b] / static_cast<double>(count);
  for (const auto& chip : chips) {
    const std::size_t area = chip.dim(1) * chip.dim(2);
    for (std::size_t b = 0; b < c; ++b)
      for (std::size_t p = 0; p < area; ++p) {
        const double d = chip[b * area + p] - spec.band_mean[b];
        sq[b] += d * d;
      }
  }
  spec.band_std.resize(c);
  for (std::size_t b = 0; b < c; ++b) {
    spec.band_std[b] = std::sqrt(sq[b] / static_cast<double>(count));
    if (spec.band_std[b] < 1e-12) spec.band_std[b] = 1.0;  // constant band
  }
  spec.validate();
  return spec;
}

ViewSpec make_pca_spec(std::span<const std::string> band_names, PcaBasis basis) {
  if (basis.channels != band_names.size()) throw UsageError("pca basis does not match the band count");
  ViewSpec spec;
  spec.kind = ViewKind::pca;
  spec.band_names.assign(band_names.begin(), band_names.end());
  std::tie(spec.channels_view1, spec.channels_view2) = pca_partition(basis.eigenvalues);
  spec.pca = std::move(basis);
  spec.validate();
  return spec;
}

ViewPair apply_view_spec(const Tensor<float>& chip, const ViewSpec& spec) {
  if (chip.rank() != 3 || chip.dim(0) != spec.band_names.size()) {
    throw ShapeError("chip " + to_string(chip.shape()) + " does not match a " +
                     std::to_string(spec.band_names.size()) + "-band view spec");
  }
  const std::size_t h = chip.dim(1), w = chip.dim(2), area = h * w;
  switch (spec.kind) {
    case ViewKind::lab: {
      Tensor<float> rgb({3, h, w});
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < area; ++p)
          rgb[c * area + p] = std::clamp(chip[spec.rgb_bands[c] * area + p], 0.0f, 1.0f);
      ViewPair pair = split_lab(rgb_to_lab(rgb));
      return pair;
    }
    case ViewKind::fixed_bands: {
      Tensor<float> standardized(chip.shape());
      for (std::size_t b = 0; b < spec.band_names.size(); ++b) {
        const double mu = spec.band_mean[b], inv = 1.0 / spec.band_std[b];
        for (std::size_t p = 0; p < area; ++p) {
          standardized[b * area + p] = static_cast<float>((chip[b * area + p] - mu) * inv);
        }
      }
      return {gather_channels(standardized, spec.channels_view1),
              gather_channels(standardized, spec.channels_view2), spec.id()};
    }
    case ViewKind::pca: {
      const auto& basis = *spec.pca;
      const std::size_t c = basis.channels;
      Tensor<float> projected(chip.shape());
      std::vector<double> centered(c);
      for (std::size_t p = 0; p < area; ++p) {
        for (std::size_t b = 0; b < c; ++b) centered[b] = chip[b * area + p] - basis.means[b];
        for (std::size_t j = 0; j < c; ++j) {
          double s = 0;
          for (std::size_t b = 0; b < c; ++b) s += basis.component(b, j) * centered[b];
          projected[j * area + p] = static_cast<float>(s / std::sqrt(std::max(basis.eigenvalues[j], 1e-10)));
        }
      }
      return {gather_channels(projected, spec.channels_view1),
              gather_channels(projected, spec.channels_view2), spec.id()};
    }
  }
  throw UsageError("unhandled view kind");
}

}  // namespace mvc
