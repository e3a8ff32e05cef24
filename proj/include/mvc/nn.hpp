#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mvc/label.hpp"
#include "mvc/ops.hpp"
#include "mvc/rng.hpp"

namespace mvc {

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

/// Plain conv encoder: each stage is conv(kernel, stride) -> batch norm ->
/// ReLU, followed by global average pooling. The last stage width is the
/// embedding dimension d_z.
struct EncoderConfig {
  std::size_t in_channels = 1;
  std::vector<std::size_t> stage_widths{16, 32, 64, 64};
  std::size_t kernel_size = 3;
  std::size_t stride = 2;
  std::size_t embedding_dim = 64;

  void validate() const;
  // Spatial size left before pooling for a square input of side `input`.
  std::size_t output_side(std::size_t input) const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  bool operator==(const EncoderConfig&) const = default;
};

template <typename T>
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, Engine& rng);

  // x:[N,C,H,W] -> z:[N,d_z]
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, bool training);

  const EncoderConfig& config() const { return cfg_; }
  NamedTensors<T> parameters() const;
  NamedTensors<T> buffers() const;

 private:
  struct Stage {
    Tensor<T> weight, gamma, beta, running_mean, running_var;
  };
  EncoderConfig cfg_;
  std::vector<Stage> stages_;
};

// Linear layer followed by L2 normalization: z -> h on the unit sphere.
template <typename T>
class ProjectionHead {
 public:
  ProjectionHead(std::size_t in_dim, std::size_t out_dim, Engine& rng);
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& z) const;
  NamedTensors<T> parameters() const;
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  Tensor<T> weight_, bias_;
};

struct CmcConfig {
  EncoderConfig view1, view2;
  std::size_t projection_dim = 32;

  void validate() const;
  nlohmann::json to_json() const;
  static CmcConfig from_json(const nlohmann::json& j);
};

/// Two-branch network: per-view encoders E1, E2 producing data
/// representations z and projection heads P1, P2 producing unit-norm
/// contrastive representations h.
template <typename T>
class CmcModel {
 public:
  CmcModel(const CmcConfig& cfg, std::uint64_t seed);

  // Batched views v1:[N,C1,H,W], v2:[N,C2,H,W] -> (z1, z2), each [N,d_z].
  std::pair<Tensor<T>, Tensor<T>> encode(Tape<T>& tape, const Tensor<T>& v1, const Tensor<T>& v2,
                                         bool training);
  std::pair<Tensor<T>, Tensor<T>> project(Tape<T>& tape, const Tensor<T>& z1,
                                          const Tensor<T>& z2) const;
  // Eval-mode concat(z1, z2) -> [N, 2*d_z].
  Tensor<T> extract_features(const Tensor<T>& v1, const Tensor<T>& v2);

  const CmcConfig& config() const { return cfg_; }
  Encoder<T>& encoder1() { return enc1_; }
  Encoder<T>& encoder2() { return enc2_; }
  ProjectionHead<T>& projection1() { return proj1_; }
  ProjectionHead<T>& projection2() { return proj2_; }

  NamedTensors<T> parameters() const;
  NamedTensors<T> encoder_parameters() const;
  NamedTensors<T> buffers() const;
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  CmcModel(const CmcConfig& cfg, Engine rng);

  CmcConfig cfg_;
  Encoder<T> enc1_, enc2_;
  ProjectionHead<T> proj1_, proj2_;
};

/// Linear classifier over extracted features. The task mode fixes the loss:
/// softmax + cross-entropy for single-label, sigmoid + binary cross-entropy
/// for multi-label.
template <typename T>
class ClassifierHead {
 public:
  ClassifierHead(std::size_t feature_dim, std::size_t num_classes, TaskMode mode, Engine& rng);

  Tensor<T> logits(Tape<T>& tape, const Tensor<T>& features) const;
  Tensor<T> loss(Tape<T>& tape, const Tensor<T>& features, std::span<const Label> targets) const;

  TaskMode mode() const { return mode_; }
  std::size_t num_classes() const { return weight_.dim(0); }
  std::size_t feature_dim() const { return weight_.dim(1); }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  NamedTensors<T> parameters() const;

 private:
  Tensor<T> weight_, bias_;
  TaskMode mode_;
};

// Kaiming-uniform (fan-in, ReLU gain) initialization: U(-sqrt(6/fan_in), +).
template <typename T>
void kaiming_uniform(Tensor<T>& t, std::size_t fan_in, Engine& rng);

// Copies values of `src` into same-named tensors of `dst`; throws on a
// missing name or shape mismatch.
template <typename T>
void assign_tensors(const NamedTensors<T>& dst, const NamedTensors<T>& src);

// Writes every parameter and buffer as `<dir>/<name>.{bin,json}`.
template <typename T>
void save_tensors(const std::filesystem::path& dir, const NamedTensors<T>& tensors);
template <typename T>
void load_tensors(const std::filesystem::path& dir, const NamedTensors<T>& into);

extern template class Encoder<float>;
extern template class Encoder<double>;
extern template class ProjectionHead<float>;
extern template class ProjectionHead<double>;
extern template class CmcModel<float>;
extern template class CmcModel<double>;
extern template class ClassifierHead<float>;
extern template class ClassifierHead<double>;

}  // namespace mvc
