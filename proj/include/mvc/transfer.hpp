#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvc/config.hpp"
#include "mvc/data.hpp"
#include "mvc/nn.hpp"
#include "mvc/optim.hpp"
#include "mvc/views.hpp"

namespace mvc {

/// Linear probe on frozen features: Adam, 50 epochs, batch 256, rate divided
/// by 5 after epochs 30, 35, 40 and 45. Named presets carry the per-dataset
/// rate and weight decay ("default": 1e-3 / 0, "aid": 1e-3 / 1e-2,
/// "mlrsnet": 1e-2 / 1e-2).
struct ProbeConfig {
  std::size_t epochs = 50;
  std::size_t batch = 256;
  double lr = 1e-3;
  double weight_decay = 0.0;
  MultiStepSchedule schedule{{30, 35, 40, 45}, 5.0};
  // z-score features with statistics of the training split (off in the recipe).
  bool standardize = false;
  std::uint64_t seed = 0;

  void validate() const;
  FlatConfig to_config() const;
  static ProbeConfig from_config(const FlatConfig& cfg, ProbeConfig base);
  static ProbeConfig preset(const std::string& name);
};

/// Full finetuning of both encoders plus a linear head on concat(z1, z2):
/// Adam, 100 epochs, batch 100, lr 1e-4, weight decay 1e-4, rate divided by 5
/// after epochs 60, 70, 80 and 90. Training chips get a random resized crop
/// and flip; evaluation resizes deterministically to `input_size`.
struct FinetuneConfig {
  std::size_t epochs = 100;
  std::size_t batch = 100;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  MultiStepSchedule schedule{{60, 70, 80, 90}, 5.0};
  bool augment = true;
  CropParams crop{};
  double flip_p = 0.5;
  std::size_t input_size = 0;  // 0 = native chip size
  // Keep batch-norm layers in inference mode (running statistics frozen).
  bool freeze_bn = false;
  std::uint64_t seed = 0;

  void validate() const;
  FlatConfig to_config() const;
  static FinetuneConfig from_config(const FlatConfig& cfg, FinetuneConfig base);
  static FinetuneConfig preset(const std::string& name);
};

// ---------------------------------------------------------------- metrics

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> targets);

struct MapResult {
  double value = 0;
  std::vector<double> per_class;  // NaN for classes without positives
  std::size_t skipped = 0;
};

/// Macro-averaged mean average precision. Per class, items are ranked by
/// descending score (ties by ascending item index) and AP is the mean of the
/// precision at every positive's rank. Classes without positives are skipped.
/// scores and targets are row-major [n x classes].
MapResult macro_map(std::span<const double> scores, std::span<const std::uint8_t> targets,
                    std::size_t n, std::size_t classes);

// ---------------------------------------------------------------- reports

/// Where the evaluated encoder came from; fills the ledger provenance columns.
struct Provenance {
  std::string task = "synthetic";
  std::string pretrain_source = "cmc";  // cmc | random | supervised
  std::string views = "bands";
  std::size_t n_pretrain = 0;
};

struct EvalReport {
  std::string task;
  std::string pretrain_source;
  std::string views;
  std::size_t n_pretrain = 0;
  std::string protocol;  // probe | finetune
  std::string metric;    // accuracy | macro_mAP
  double value = 0;
  std::vector<double> per_class;
  std::string config_fingerprint;
  std::uint64_t seed = 0;
  std::vector<double> train_loss;  // per epoch

  nlohmann::json to_json() const;
  void save_json(const std::filesystem::path& path) const;
};

// FNV-1a of the config dump, as 16 hex digits.
std::string config_fingerprint(const FlatConfig& cfg);

inline const std::vector<std::string>& ledger_columns() {
  static const std::vector<std::string> cols{"task", "pretrain_source", "views", "n_pretrain",
                                             "protocol", "metric", "value", "seed"};
  return cols;
}
// Appends one row (writing the header if the file is new).
void append_ledger(const std::filesystem::path& path, const EvalReport& report);

struct LedgerRow {
  std::string task, pretrain_source, views;
  std::size_t n_pretrain = 0;
  std::string protocol, metric;
  double value = 0;
  std::uint64_t seed = 0;
};
std::vector<LedgerRow> read_ledger(const std::filesystem::path& path);

/// One row per (task, protocol, metric, pretrain_source, views, n_pretrain)
/// group, sorted by those keys.
struct LedgerGroup {
  std::string task, protocol, metric, pretrain_source, views;
  std::size_t n_pretrain = 0;
  std::size_t runs = 0;
  double mean = 0, median = 0, min = 0, max = 0, stddev = 0;
};
std::vector<LedgerGroup> group_ledger(const std::vector<LedgerRow>& rows);
inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{"task",   "protocol", "metric", "pretrain_source",
                                             "views",  "n_pretrain", "runs", "mean",
                                             "median", "min",      "max",    "std"};
  return cols;
}
void write_report(const std::filesystem::path& path, const std::vector<LedgerGroup>& groups);

// ---------------------------------------------------------------- protocols

// Eval-mode concat(z1, z2) of the listed chips, deterministically resized to
// `input_size` (0 = native), as [rows, 2*d_z].
Tensor<float> extract_dataset_features(CmcModel<float>& model, const ChipDataset& ds,
                                       const ViewSpec& spec, std::span<const std::size_t> rows,
                                       std::size_t input_size = 0);

struct ProbeResult {
  ClassifierHead<float> head;
  EvalReport report;
};

/// Trains a linear head on fixed features and scores it on the test features.
ProbeResult probe_on_features(const Tensor<float>& train_features, std::span<const Label> train_labels,
                              const Tensor<float>& test_features, std::span<const Label> test_labels,
                              TaskMode mode, std::size_t num_classes, const ProbeConfig& cfg);

/// Linear probe on the frozen model: features of the train and test splits
/// are extracted once, without augmentation.
ProbeResult run_linear_probe(CmcModel<float>& model, const ChipDataset& ds, const ViewSpec& spec,
                             const ProbeConfig& cfg, const Provenance& from);

struct FinetuneResult {
  ClassifierHead<float> head;
  EvalReport report;
};

/// Trains every model parameter and a fresh head; `model` is updated in place.
FinetuneResult run_finetune(CmcModel<float>& model, const ChipDataset& ds, const ViewSpec& spec,
                            const FinetuneConfig& cfg, const Provenance& from);

}  // namespace mvc
