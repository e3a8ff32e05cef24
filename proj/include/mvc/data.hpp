#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvc/config.hpp"
#include "mvc/label.hpp"
#include "mvc/rng.hpp"
#include "mvc/tensor.hpp"

namespace mvc {

struct Chip {
  Tensor<float> bands;  // [C,H,W]
  std::vector<std::string> band_names;
  Label label;
  std::string id;
};

enum class Split : std::uint8_t { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct SplitFractions {
  double train = 0.5;
  double val = 0.0;
  double test = 0.5;
};

// Pure function of (seed, fractions): a seeded permutation cut into
// consecutive train / val / test blocks.
std::vector<Split> assign_splits(std::size_t count, std::uint64_t seed, const SplitFractions& f);

struct ChipDataset {
  std::vector<Chip> chips;
  std::vector<Split> splits;  // one per chip
  TaskMode task_mode = TaskMode::single_label;
  std::size_t num_classes = 0;
  std::vector<std::string> band_names;

  std::vector<std::size_t> indices(Split s) const;
  std::vector<Tensor<float>> band_tensors(Split s) const;
  void validate() const;
};

/// Synthetic multispectral scenes. Every pixel carries a class signature
/// (one class per chip, or 1..3 in regions for multi-label) scaled by a
/// brightness field (bilinear upsample of a field_grid x field_grid random
/// grid). Each chip then gets its own signature jitter and per-band haze
/// offsets, and every value independent Gaussian noise.
struct SynthConfig {
  std::size_t num_chips = 2000;
  std::size_t channels = 10;
  std::size_t size = 32;
  std::size_t num_classes = 8;
  // Explicit [classes x channels] signatures; generated from the seed if empty.
  std::vector<std::vector<double>> signatures;
  // Generated signatures: classes 2g and 2g+1 share the visible bands
  // (Sentinel-2 bands 2, 3, 4), so RGB alone cannot tell them apart.
  bool rgb_confusable = true;
  double noise_std = 0.02;
  double haze_std = 0.0;
  // Per-chip Gaussian perturbation of the class signature (all pixels share it).
  double signature_jitter = 0.0;
  // Smooth brightness field multiplying every band.
  double field_min = 0.5;
  double field_max = 1.5;
  std::size_t field_grid = 4;
  // Multi-label chips hold 1..3 classes in regions: each pixel takes the class
  // whose smooth random field is largest there.
  bool multi_label = false;
  std::uint64_t seed = 0;
  SplitFractions split;

  void validate() const;
  FlatConfig to_config() const;
  static SynthConfig from_config(const FlatConfig& cfg);
};

std::vector<std::vector<double>> make_signatures(const SynthConfig& cfg);
ChipDataset generate_synthetic(const SynthConfig& cfg);

// ---------------------------------------------------------------- augment

struct CropParams {
  double scale_min = 0.08, scale_max = 1.0;
  double ratio_min = 3.0 / 4.0, ratio_max = 4.0 / 3.0;
};

// Half-pixel-centre bilinear resize of every channel.
Tensor<float> resize_bilinear(const Tensor<float>& chip, std::size_t out_h, std::size_t out_w);
Tensor<float> crop(const Tensor<float>& chip, std::size_t top, std::size_t left, std::size_t h,
                   std::size_t w);
// Area fraction and aspect ratio sampled within bounds (10 tries, then a
// centre crop), resized to out_size x out_size.
Tensor<float> random_resized_crop(const Tensor<float>& chip, std::size_t out_size,
                                  const CropParams& params, Engine& rng);
Tensor<float> flip_horizontal(const Tensor<float>& chip);
Tensor<float> horizontal_flip(const Tensor<float>& chip, double p, Engine& rng);

// ---------------------------------------------------------------- files

/// MSC1 chip file: 8-byte magic "MSCHIP01", little-endian u32 C, H, W,
/// u32 dtype code (0 = f32), then C*H*W raw values.
void write_chip_file(const std::filesystem::path& path, const Tensor<float>& bands);
Tensor<float> read_chip_file(const std::filesystem::path& path);

// Dataset root: dataset.json metadata, index.jsonl ({id, path, label} per
// line), chips/*.msc, splits/{train,val,test}.json id lists.
void save_dataset(const std::filesystem::path& root, const ChipDataset& ds);
ChipDataset load_dataset(const std::filesystem::path& root);

}  // namespace mvc
