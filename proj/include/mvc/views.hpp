#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mvc/tensor.hpp"

namespace mvc {

enum class ViewKind { lab, fixed_bands, pca };

std::string to_string(ViewKind kind);
ViewKind view_kind_from_string(const std::string& s);

// Sentinel-2 band names of the 10-band chips, in storage order.
const std::vector<std::string>& sentinel2_bands();

// Table of the short-wavelength / long-wavelength split with blue moved to
// the long-wavelength side.
const std::vector<std::string>& fixed_view1_bands();  // 2, 8, 8A, 11, 12
const std::vector<std::string>& fixed_view2_bands();  // 3, 4, 5, 6, 7

struct PcaBasis {
  std::size_t channels = 0;
  std::vector<double> means;        // [C]
  std::vector<double> components;   // [C x C] row-major, column j = j-th eigenvector
  std::vector<double> eigenvalues;  // descending
  std::size_t rank_deficient = 0;   // eigenvalues below 1e-10

  double component(std::size_t row, std::size_t col) const { return components[row * channels + col]; }
  // max |B^T B - I|
  double orthonormality_error() const;
};

struct ViewSpec {
  ViewKind kind = ViewKind::fixed_bands;
  std::vector<std::string> band_names;  // chip band order the spec expects
  std::vector<std::size_t> channels_view1, channels_view2;
  std::vector<std::size_t> rgb_bands;   // lab: chip indices of R, G, B
  std::vector<double> band_mean, band_std;  // fixed_bands standardization
  std::optional<PcaBasis> pca;

  std::string id() const { return to_string(kind); }
  std::size_t view1_channels() const { return channels_view1.size(); }
  std::size_t view2_channels() const { return channels_view2.size(); }
  // Disjoint + covering channel sets, orthonormal descending PCA basis.
  void validate() const;

  // JSON file plus, for PCA specs, `<stem>.pca_basis.{bin,json}` beside it.
  void save(const std::filesystem::path& path) const;
  static ViewSpec load(const std::filesystem::path& path);
  nlohmann::json to_json(const std::string& basis_ref = {}) const;
};

struct ViewPair {
  Tensor<float> view1;  // [C1,H,W]
  Tensor<float> view2;  // [C2,H,W]
  std::string spec_id;
};

// sRGB in [0,1] -> CIE L*a*b* (D65). Throws DataError on out-of-range input.
Tensor<float> rgb_to_lab(const Tensor<float>& rgb);
// Single-pixel form, in double.
std::array<double, 3> rgb_to_lab(double r, double g, double b);

// view1 = L*/100, view2 = (a*, b*)/110.
ViewPair split_lab(const Tensor<float>& lab);

// Partition of a 10-band chip into the fixed spectral views; `band_order`
// names the chip's channels.
ViewPair split_fixed_bands(const Tensor<float>& chip, std::span<const std::string> band_order);
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> fixed_band_indices(
    std::span<const std::string> band_order);

// Covariance PCA over `pixels_per_chip` distinct random pixels of every chip.
PcaBasis pca_fit(std::span<const Tensor<float>> chips, std::size_t pixels_per_chip,
                 std::uint64_t seed);

// First principal component plus the floor(C/2)-1 weakest go to view 1, the
// rest to view 2. For C = 10 this is {0,6,7,8,9} / {1,2,3,4,5}.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> pca_partition(
    std::span<const double> eigenvalues);

// Share of the total variance assigned to view 1 by a PCA spec (diagnostic).
double view1_variance_share(const ViewSpec& spec);

ViewSpec make_lab_spec(std::span<const std::string> band_names);
// Band standardization statistics are computed over `chips`.
ViewSpec make_fixed_band_spec(std::span<const std::string> band_names,
                              std::span<const Tensor<float>> chips);
ViewSpec make_pca_spec(std::span<const std::string> band_names, PcaBasis basis);

ViewPair apply_view_spec(const Tensor<float>& chip, const ViewSpec& spec);

}  // namespace mvc
