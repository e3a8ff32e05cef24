#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mvc/config.hpp"
#include "mvc/contrastive.hpp"
#include "mvc/data.hpp"
#include "mvc/nn.hpp"
#include "mvc/optim.hpp"
#include "mvc/views.hpp"

namespace mvc {

/// Contrastive pretraining recipe. Defaults are the full-scale recipe:
/// SGD (lr 0.03, momentum 0.9, weight decay 1e-4), batch 100, 400 epochs with
/// the rate divided by 10 after epochs 250, 300 and 350, k = 4096 negatives
/// and temperature 0.07.
struct PretrainConfig {
  std::size_t epochs = 400;
  std::size_t batch = 100;
  OptimizerConfig optimizer{};
  MultiStepSchedule schedule{{250, 300, 350}, 10.0};
  ContrastiveConfig contrastive{};
  double bank_momentum = 0.5;
  std::vector<std::size_t> stage_widths{16, 32, 64, 64};
  std::size_t embedding_dim = 64;
  std::size_t projection_dim = 32;
  bool augment = true;
  CropParams crop{};
  double flip_p = 0.5;
  // Chips of this split are the (unlabelled) pretraining set; 0 = all of them.
  Split pretrain_split = Split::train;
  std::size_t n_pretrain = 0;
  // Checkpoint every this many epochs (0 = only at the end).
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 0;

  void validate() const;
  FlatConfig to_config() const;
  // Keys absent from `cfg` keep the value they have in `base`.
  static PretrainConfig from_config(const FlatConfig& cfg, PretrainConfig base);
  static PretrainConfig from_config(const FlatConfig& cfg) { return from_config(cfg, PretrainConfig{}); }
};

CmcConfig make_cmc_config(const ViewSpec& spec, const std::vector<std::size_t>& stage_widths,
                          std::size_t embedding_dim, std::size_t projection_dim);

// Dataset rows used for pretraining, in dataset order.
std::vector<std::size_t> pretrain_indices(const ChipDataset& ds, const PretrainConfig& cfg);

// Both views of a batch of chips, stacked as [N,C1,H,W] and [N,C2,H,W].
// With `rng_root` set, every chip gets a random resized crop (back to its own
// size) and a horizontal flip from its own stream before the view transform.
std::pair<Tensor<float>, Tensor<float>> make_view_batch(const ChipDataset& ds,
                                                        std::span<const std::size_t> rows,
                                                        const ViewSpec& spec,
                                                        std::optional<std::uint64_t> rng_root,
                                                        const CropParams& crop, double flip_p,
                                                        std::size_t out_size = 0);

/// Checkpoint directory: manifest.json {encoder_config, d_h, view_spec_id,
/// epoch, rng_seed, ...}, view_spec.json, params/, optimizer/, bank/ and
/// loss_log.csv.
struct Checkpoint {
  CmcConfig model_config;
  ViewSpec view_spec;
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t seed = 0;
  std::size_t n_pretrain = 0;
  std::string source = "cmc";  // cmc | supervised | random
  std::vector<double> epoch_loss;
};

Checkpoint read_checkpoint_manifest(const std::filesystem::path& dir);
// Model weights and batch-norm statistics of a checkpoint.
CmcModel<float> load_checkpoint_model(const std::filesystem::path& dir, Checkpoint* info = nullptr);
void save_model_checkpoint(const std::filesystem::path& dir, const CmcModel<float>& model,
                           const Checkpoint& info);

struct PretrainOptions {
  // Continue from the checkpoint in the output directory if one exists.
  bool resume = false;
  // Stop (after checkpointing) once this many epochs are complete.
  std::optional<std::size_t> stop_after;
  bool verbose = false;
};

struct PretrainResult {
  std::vector<double> epoch_loss;  // mean batch loss of every completed epoch
  std::size_t epochs_done = 0;
  std::size_t effective_k = 0;
};

/// Runs the two-view contrastive pretraining loop, writing a checkpoint to
/// `out`. Every epoch derives its shuffling, augmentation and negative
/// sampling from (seed, epoch), so a resumed run matches an uninterrupted one
/// bit for bit.
PretrainResult run_pretrain(const PretrainConfig& cfg, const ChipDataset& ds,
                            const ViewSpec& spec, const std::filesystem::path& out,
                            const PretrainOptions& options = {});

}  // namespace mvc
